import random

import pytest

from sjdl.pki import (
    EmptySubject,
    EmptyValidity,
    NotACa,
    Role,
    certificate_to_text,
    certificates_from_text,
    common_name,
    generate_identity,
    identity_from_text,
    identity_to_text,
    issue_certificate,
    self_signed_certificate,
    verify_chain,
)


def test_generate_identity_roles(pki):
    assert pki.user.role is Role.USER
    assert pki.broker.role is Role.BROKER
    assert pki.broker.name == "myVO"
    assert pki.user.private_key.key_size == 3072


def test_empty_subject():
    with pytest.raises(EmptySubject):
        generate_identity("", Role.USER)


def test_seeded_identities_are_reproducible():
    a = generate_identity("CN=a", Role.USER, key_bits=1024, rng=random.Random(5))
    b = generate_identity("CN=a", Role.USER, key_bits=1024, rng=random.Random(5))
    c = generate_identity("CN=a", Role.USER, key_bits=1024, rng=random.Random(6))
    assert a.public_key.public_numbers() == b.public_key.public_numbers()
    assert a.public_key.public_numbers() != c.public_key.public_numbers()


def test_issue_and_verify(pki):
    cert = issue_certificate(pki.ca, pki.user, (0, 10**9))
    assert verify_chain(cert, pki.roots, 5) is None
    assert verify_chain(cert, pki.roots, 10**9) is not None  # expired, half-open


def test_issuer_must_be_ca(pki):
    with pytest.raises(NotACa):
        issue_certificate(pki.user, pki.broker, (0, 10))


def test_empty_validity(pki):
    with pytest.raises(EmptyValidity):
        issue_certificate(pki.ca, pki.broker, (5, 5))


def test_chain_needs_root(pki):
    cert = pki.cert(pki.user)
    assert verify_chain(cert, [], 1) is not None
    rogue_root = self_signed_certificate(pki.rogue_ca, (0, 2**40))
    forged = issue_certificate(pki.rogue_ca, pki.user, (0, 2**40))
    assert verify_chain(forged, pki.roots, 1) is not None
    assert verify_chain(forged, [rogue_root], 1) is None


def test_common_name():
    assert common_name("/O=Grid/CN=testuser") == "testuser"
    assert common_name("CN=myVO") == "myVO"
    assert common_name("O=Grid, CN=a b") == "a b"
    assert common_name("plain") == "plain"


def test_text_forms(pki):
    cert = pki.cert(pki.user)
    text = certificate_to_text(cert) + certificate_to_text(pki.root)
    assert certificates_from_text(text) == [cert, pki.root]
    ident = identity_from_text(identity_to_text(pki.user))
    assert ident.subject == pki.user.subject and ident.role is Role.USER
    assert ident.public_key.public_numbers() == pki.user.public_key.public_numbers()
