import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sjdl.pki import Role, generate_identity, issue_certificate, self_signed_certificate

FOREVER = (0, 2**40)


class Pki:
    def __init__(self, seed=2011):
        rng = random.Random(seed)
        self.ca = generate_identity("/O=Grid/CN=Grid Root CA", Role.CA, rng=rng)
        self.root = self_signed_certificate(self.ca, FOREVER)
        self.user = generate_identity("/O=Grid/CN=testuser", Role.USER, rng=rng)
        self.other = generate_identity("/O=Grid/CN=otheruser", Role.USER, rng=rng)
        self.broker = generate_identity("/O=Grid/CN=myVO", Role.BROKER, rng=rng)
        self.partner = generate_identity("/O=Grid/CN=partnerVO", Role.BROKER, rng=rng)
        self.third = generate_identity("/O=Grid/CN=thirdVO", Role.BROKER, rng=rng)
        self.rogue_ca = generate_identity("/O=Evil/CN=Rogue CA", Role.CA, rng=rng)
        self.certs = {
            ident.name: issue_certificate(self.ca, ident, FOREVER)
            for ident in (self.user, self.other, self.broker, self.partner, self.third)
        }

    def cert(self, identity):
        return self.certs[identity.name]

    @property
    def roots(self):
        return [self.root]


@pytest.fixture(scope="session")
def pki():
    return Pki()
