"""Identities, a two-level certificate hierarchy and the signature scheme.

Certificates are a simplified record (subject, key, validity, issuer,
issuer signature) rather than X.509. A trust root is a self-signed CA
certificate; leaves are issued directly by a root.

Keys can be drawn from a seeded ``random.Random`` so that simulations are
reproducible bit for bit; signatures use PKCS#1 v1.5 which is deterministic.
"""

from __future__ import annotations

import base64
import enum
import functools
import hashlib
import random
from dataclasses import dataclass
from typing import Iterable, Optional

import gmpy2
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

DEFAULT_KEY_BITS = 3072
PUBLIC_EXPONENT = 65537


class PkiError(ValueError):
    pass


class EmptySubject(PkiError):
    pass


class NotACa(PkiError):
    pass


class EmptyValidity(PkiError):
    pass


class Role(str, enum.Enum):
    USER = "USER"
    BROKER = "BROKER"
    SITE = "SITE"
    CA = "CA"
    PILOT = "PILOT"


class RsaSha384:
    """SHA384withRSA (PKCS#1 v1.5)."""

    name = "SHA384withRSA"

    def sign(self, private_key: rsa.RSAPrivateKey, data: bytes) -> bytes:
        return private_key.sign(data, padding.PKCS1v15(), hashes.SHA384())

    def verify(self, public_key: rsa.RSAPublicKey, signature: bytes, data: bytes) -> bool:
        try:
            public_key.verify(signature, data, padding.PKCS1v15(), hashes.SHA384())
        except (InvalidSignature, ValueError):
            return False
        return True


DEFAULT_SCHEME = RsaSha384()


def common_name(subject: str) -> str:
    """Internal user name for a distinguished name: the last ``CN=`` component.

    ``"/O=Grid/CN=testuser"`` and ``"CN=testuser"`` both map to ``testuser``;
    a subject without a CN maps to itself.
    """
    for sep in ("/", ","):
        subject = subject.replace(sep, "\x00")
    cn = None
    for part in subject.split("\x00"):
        part = part.strip()
        if part.upper().startswith("CN="):
            cn = part[3:]
    return cn if cn else subject.replace("\x00", "/")


@functools.lru_cache(maxsize=256)
def _seeded_rsa(seed: int, bits: int) -> rsa.RSAPrivateKey:
    rng = random.Random(seed)
    half = bits // 2
    while True:
        p = _seeded_prime(rng, half)
        q = _seeded_prime(rng, bits - half)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != bits:
            continue
        phi = (p - 1) * (q - 1)
        if gmpy2.gcd(PUBLIC_EXPONENT, phi) != 1:
            continue
        d = pow(PUBLIC_EXPONENT, -1, phi)
        numbers = rsa.RSAPrivateNumbers(
            p=p,
            q=q,
            d=d,
            dmp1=rsa.rsa_crt_dmp1(d, p),
            dmq1=rsa.rsa_crt_dmq1(d, q),
            iqmp=rsa.rsa_crt_iqmp(p, q),
            public_numbers=rsa.RSAPublicNumbers(PUBLIC_EXPONENT, n),
        )
        return numbers.private_key()


def _seeded_prime(rng: random.Random, bits: int) -> int:
    while True:
        start = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        p = int(gmpy2.next_prime(start))
        if p.bit_length() == bits:
            return p


def rsa_key(bits: int = DEFAULT_KEY_BITS, rng: Optional[random.Random] = None) -> rsa.RSAPrivateKey:
    if rng is None:
        return rsa.generate_private_key(public_exponent=PUBLIC_EXPONENT, key_size=bits)
    return _seeded_rsa(rng.getrandbits(128), bits)


@dataclass(frozen=True)
class Identity:
    """A key-pair holder: a user, broker, site, CA or pilot."""

    subject: str
    private_key: rsa.RSAPrivateKey
    role: Role

    @property
    def public_key(self) -> rsa.RSAPublicKey:
        return self.private_key.public_key()

    @property
    def name(self) -> str:
        return common_name(self.subject)

    def sign(self, data: bytes, scheme=DEFAULT_SCHEME) -> bytes:
        return scheme.sign(self.private_key, data)


def generate_identity(
    subject: str,
    role: Role | str,
    *,
    key_bits: int = DEFAULT_KEY_BITS,
    rng: Optional[random.Random] = None,
) -> Identity:
    if not subject or not subject.strip():
        raise EmptySubject("identity subject must be non-empty")
    return Identity(subject, rsa_key(key_bits, rng), Role(role))


def public_key_der(key: rsa.RSAPublicKey) -> bytes:
    return key.public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)


@dataclass(frozen=True)
class Certificate:
    subject: str
    public_key: rsa.RSAPublicKey
    not_before: int
    not_after: int
    issuer: str
    signature: bytes

    def tbs_bytes(self) -> bytes:
        return _tbs(self.subject, self.public_key, self.not_before, self.not_after, self.issuer)

    @property
    def name(self) -> str:
        return common_name(self.subject)

    @property
    def self_signed(self) -> bool:
        return self.subject == self.issuer

    def valid_at(self, now: int) -> bool:
        return self.not_before <= now < self.not_after

    def fingerprint(self) -> str:
        return hashlib.sha384(self.tbs_bytes() + self.signature).hexdigest()[:32]

    def __eq__(self, other):
        if not isinstance(other, Certificate):
            return NotImplemented
        return self.tbs_bytes() == other.tbs_bytes() and self.signature == other.signature

    def __hash__(self):
        return hash((self.tbs_bytes(), self.signature))


def _tbs(subject: str, key: rsa.RSAPublicKey, not_before: int, not_after: int, issuer: str) -> bytes:
    return (
        f"Subject: {subject}\n"
        f"Issuer: {issuer}\n"
        f"NotBefore: {not_before}\n"
        f"NotAfter: {not_after}\n"
        f"PublicKey: {base64.b64encode(public_key_der(key)).decode()}\n"
    ).encode("utf-8")


def _check_window(validity: tuple[int, int]) -> tuple[int, int]:
    not_before, not_after = (int(v) for v in validity)
    if not not_before < not_after:
        raise EmptyValidity(f"empty validity window [{not_before}, {not_after})")
    return not_before, not_after


def self_signed_certificate(ca: Identity, validity: tuple[int, int]) -> Certificate:
    if ca.role is not Role.CA:
        raise NotACa(f"{ca.subject!r} is not a CA")
    nb, na = _check_window(validity)
    sig = ca.sign(_tbs(ca.subject, ca.public_key, nb, na, ca.subject))
    return Certificate(ca.subject, ca.public_key, nb, na, ca.subject, sig)


def issue_certificate(ca: Identity, subject_identity: Identity, validity: tuple[int, int]) -> Certificate:
    if ca.role is not Role.CA:
        raise NotACa(f"{ca.subject!r} is not a CA")
    nb, na = _check_window(validity)
    tbs = _tbs(subject_identity.subject, subject_identity.public_key, nb, na, ca.subject)
    return Certificate(subject_identity.subject, subject_identity.public_key, nb, na, ca.subject, ca.sign(tbs))


def verify_chain(cert: Certificate, trust_roots: Iterable[Certificate], now: int) -> Optional[str]:
    """Return None when ``cert`` chains to a trusted root at ``now``, else a reason."""
    roots = [r for r in trust_roots if r.subject == cert.issuer]
    if not roots:
        return f"issuer {cert.issuer!r} is not a trust root"
    reasons = []
    for root in roots:
        if not root.self_signed or not DEFAULT_SCHEME.verify(root.public_key, root.signature, root.tbs_bytes()):
            reasons.append("trust root self-signature invalid")
            continue
        if not root.valid_at(now):
            reasons.append("trust root outside validity")
            continue
        if not DEFAULT_SCHEME.verify(root.public_key, cert.signature, cert.tbs_bytes()):
            reasons.append("certificate signature invalid")
            continue
        if not cert.valid_at(now):
            reasons.append("certificate outside validity")
            continue
        return None
    return "; ".join(reasons)


# -- text files ----------------------------------------------------------------

_CERT_BEGIN = "-----BEGIN SJDL CERTIFICATE-----"
_CERT_END = "-----END SJDL CERTIFICATE-----"


def certificate_to_text(cert: Certificate) -> str:
    body = cert.tbs_bytes().decode("utf-8")
    return f"{_CERT_BEGIN}\n{body}Signature: {base64.b64encode(cert.signature).decode()}\n{_CERT_END}\n"


def certificates_from_text(text: str) -> list[Certificate]:
    certs = []
    for block in text.split(_CERT_BEGIN)[1:]:
        if _CERT_END not in block:
            raise PkiError("unterminated certificate block")
        fields = {}
        for line in block.split(_CERT_END)[0].strip().splitlines():
            name, sep, value = line.partition(": ")
            if not sep:
                raise PkiError(f"malformed certificate line {line!r}")
            fields[name] = value
        try:
            key = serialization.load_der_public_key(base64.b64decode(fields["PublicKey"], validate=True))
            certs.append(
                Certificate(
                    subject=fields["Subject"],
                    public_key=key,
                    not_before=int(fields["NotBefore"]),
                    not_after=int(fields["NotAfter"]),
                    issuer=fields["Issuer"],
                    signature=base64.b64decode(fields["Signature"], validate=True),
                )
            )
        except (KeyError, ValueError) as exc:
            raise PkiError(f"malformed certificate: {exc}") from exc
    return certs


def identity_to_text(identity: Identity) -> str:
    pem = identity.private_key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    ).decode()
    return f"Subject: {identity.subject}\nRole: {identity.role.value}\n{pem}"


def identity_from_text(text: str) -> Identity:
    header, sep, pem = text.partition("-----BEGIN")
    if not sep:
        raise PkiError("no PEM private key block")
    fields = dict(line.split(": ", 1) for line in header.strip().splitlines() if ": " in line)
    try:
        key = serialization.load_pem_private_key((sep + pem).encode(), password=None)
        return Identity(fields["Subject"], key, Role(fields["Role"]))
    except (KeyError, ValueError) as exc:
        raise PkiError(f"malformed identity file: {exc}") from exc
