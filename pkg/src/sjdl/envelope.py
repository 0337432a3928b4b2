"""Signed JDL envelopes (sJDL, s2JDL and relayed forms).

Wire grammar (canonical form has no whitespace between tags)::

    <SJDL><NOTBEFORE>INT</NOTBEFORE><NOTAFTER>INT</NOTAFTER><NESTEDJDL>
      [nested <SJDL> element] JDL statements
    </NESTEDJDL><SIGNATURE>BASE64</SIGNATURE></SJDL>

Each layer signs its time window followed by ``hash_input`` of its own JDL
statements, where the pseudo-key ``SJDL`` stands for the canonical bytes of
the nested envelope. The signer certificate travels next to the envelope and
is not part of the wire text.
"""

from __future__ import annotations

import base64
import binascii
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .jdl import NESTED_KEY, WHITESPACE, Jdl, JdlError, Scanner, check_hash_ord, hash_input, parse_statements, serialize_jdl
from .pki import DEFAULT_SCHEME, Certificate, Identity, verify_chain

VALID = "VALID"
INVALID = "INVALID"

BAD_SIGNATURE = "BadSignature"
EXPIRED = "Expired"
NOT_YET_VALID = "NotYetValid"
BROKEN_CHAIN = "BrokenChain"
MALFORMED = "MalformedEnvelope"
SIGNER_MISMATCH = "SignerMismatch"

_STRIP_WS = {ord(c): None for c in WHITESPACE}


class EnvelopeError(ValueError):
    pass


class InvalidWindow(EnvelopeError):
    pass


class MalformedEnvelope(EnvelopeError):
    def __init__(self, message: str, position: int = -1):
        self.position = position
        if position >= 0:
            message = f"{message} (position {position})"
        super().__init__(message)


@dataclass(frozen=True)
class SignedEnvelope:
    not_before: int
    not_after: int
    jdl: Jdl
    signature: bytes
    inner: Optional["SignedEnvelope"] = None
    signer_certificate: Optional[Certificate] = field(default=None, compare=False)
    # wire text of a signature that is not valid base64; such a layer never verifies
    signature_text: Optional[str] = None

    @property
    def depth(self) -> int:
        return 1 if self.inner is None else self.inner.depth + 1

    def layers(self) -> list["SignedEnvelope"]:
        """All layers, outermost first."""
        out = []
        layer: Optional[SignedEnvelope] = self
        while layer is not None:
            out.append(layer)
            layer = layer.inner
        return out

    @property
    def innermost(self) -> "SignedEnvelope":
        return self.layers()[-1]

    def signed_bytes(self) -> bytes:
        return signed_message(self.not_before, self.not_after, self.jdl, self.inner)

    def canonical_bytes(self) -> bytes:
        return serialize_envelope(self).encode("utf-8")

    def lookup(self, key: str) -> Optional[tuple[str, ...]]:
        """Value of ``key`` in the outermost layer that carries it."""
        for layer in self.layers():
            if key in layer.jdl:
                return layer.jdl[key]
        return None

    def with_certificates(self, certificates: Iterable[Optional[Certificate]]) -> "SignedEnvelope":
        """Attach certificates, outermost first."""
        certs = list(certificates)
        if len(certs) != self.depth:
            raise ValueError(f"expected {self.depth} certificates, got {len(certs)}")
        inner = self.inner.with_certificates(certs[1:]) if self.inner is not None else None
        return SignedEnvelope(self.not_before, self.not_after, self.jdl, self.signature, inner, certs[0],
                              self.signature_text)

    def certificates(self) -> list[Optional[Certificate]]:
        return [layer.signer_certificate for layer in self.layers()]

    def __str__(self) -> str:
        return serialize_envelope(self)


def _window_prefix(not_before: int, not_after: int) -> bytes:
    return f"<NOTBEFORE>{not_before}</NOTBEFORE><NOTAFTER>{not_after}</NOTAFTER>".encode("ascii")


def signed_message(not_before: int, not_after: int, jdl: Jdl, inner: Optional[SignedEnvelope]) -> bytes:
    nested = inner.canonical_bytes() if inner is not None else None
    if nested is not None and NESTED_KEY not in (jdl.hash_order() or ()):
        raise MalformedEnvelope("outer layer HashOrd must cover the nested SJDL")
    return _window_prefix(not_before, not_after) + hash_input(jdl, nested)


Payload = Union[Jdl, tuple[SignedEnvelope, Jdl]]


def sign_envelope(
    signer: Identity,
    payload: Payload,
    not_before: int,
    not_after: int,
    certificate: Optional[Certificate] = None,
    scheme=DEFAULT_SCHEME,
) -> SignedEnvelope:
    """Sign ``payload`` (a Jdl, or a nested envelope plus appended entries)."""
    not_before, not_after = int(not_before), int(not_after)
    if not not_before < not_after:
        raise InvalidWindow(f"empty window [{not_before}, {not_after})")
    if isinstance(payload, Jdl):
        inner, jdl = None, payload
    else:
        inner, jdl = payload
    check_hash_ord(jdl, nested=inner is not None)
    signature = scheme.sign(signer.private_key, signed_message(not_before, not_after, jdl, inner))
    return SignedEnvelope(not_before, not_after, jdl, signature, inner, certificate)


# -- wire form ---------------------------------------------------------------


def serialize_envelope(e: SignedEnvelope) -> str:
    nested = serialize_envelope(e.inner) if e.inner is not None else ""
    return (
        f"<SJDL><NOTBEFORE>{e.not_before}</NOTBEFORE><NOTAFTER>{e.not_after}</NOTAFTER><NESTEDJDL>"
        f"{nested}{serialize_jdl(e.jdl)}</NESTEDJDL>"
        f"<SIGNATURE>{_signature_text(e)}</SIGNATURE></SJDL>"
    )


def _signature_text(e: SignedEnvelope) -> str:
    if e.signature_text is not None:
        return e.signature_text
    return base64.b64encode(e.signature).decode("ascii")


def _tag(sc: Scanner, tag: str) -> None:
    sc.skip_ws()
    if not sc.text.startswith(tag, sc.pos):
        raise MalformedEnvelope(f"expected {tag}", sc.pos)
    sc.pos += len(tag)


def _integer(sc: Scanner) -> int:
    sc.skip_ws()
    start = sc.pos
    if sc.peek() == "-":
        sc.pos += 1
    while sc.peek().isascii() and sc.peek().isdigit():
        sc.pos += 1
    digits = sc.text[start:sc.pos]
    if digits in ("", "-"):
        raise MalformedEnvelope("expected integer", start)
    sc.skip_ws()
    return int(digits)


def _element(sc: Scanner) -> SignedEnvelope:
    _tag(sc, "<SJDL>")
    _tag(sc, "<NOTBEFORE>")
    not_before = _integer(sc)
    _tag(sc, "</NOTBEFORE>")
    _tag(sc, "<NOTAFTER>")
    not_after = _integer(sc)
    _tag(sc, "</NOTAFTER>")
    _tag(sc, "<NESTEDJDL>")
    sc.skip_ws()
    inner = _element(sc) if sc.text.startswith("<SJDL>", sc.pos) else None
    try:
        jdl = parse_statements(sc)
    except JdlError as exc:
        raise MalformedEnvelope(f"bad JDL: {exc}", sc.pos) from exc
    _tag(sc, "</NESTEDJDL>")
    _tag(sc, "<SIGNATURE>")
    sc.skip_ws()
    start = sc.pos
    end = sc.text.find("<", start)
    if end < 0:
        raise MalformedEnvelope("unterminated SIGNATURE", start)
    raw = sc.text[start:end].translate(_STRIP_WS)
    text = None
    try:
        signature = base64.b64decode(raw.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError):
        signature, text = raw.encode("utf-8"), raw
    sc.pos = end
    _tag(sc, "</SIGNATURE>")
    _tag(sc, "</SJDL>")
    if not not_before < not_after:
        raise MalformedEnvelope(f"empty window [{not_before}, {not_after})", start)
    return SignedEnvelope(not_before, not_after, jdl, signature, inner, None, text)


def parse_envelope(text: Union[str, bytes]) -> SignedEnvelope:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedEnvelope(f"not UTF-8: {exc.reason}", exc.start) from exc
    sc = Scanner(text)
    env = _element(sc)
    sc.skip_ws()
    if not sc.at_end():
        raise MalformedEnvelope("trailing data after </SJDL>", sc.pos)
    return env


# -- verification ------------------------------------------------------------


@dataclass(frozen=True)
class Failure:
    kind: str
    layer: int  # 1 = innermost, 0 = whole envelope
    detail: str = ""

    def __str__(self) -> str:
        where = f"layer {self.layer}" if self.layer else "envelope"
        return f"{self.kind}({where})" + (f": {self.detail}" if self.detail else "")


@dataclass
class LayerReport:
    layer: int
    not_before: int
    not_after: int
    signer: Optional[str]
    signature_ok: bool
    time_status: str
    chain_status: Optional[str]
    binding_ok: bool
    unprotected: list[str]
    failures: list[Failure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


@dataclass
class VerificationReport:
    layers: list[LayerReport]
    failures: list[Failure]
    envelope: Optional[SignedEnvelope] = None

    @property
    def verdict(self) -> str:
        return VALID if not self.failures and self.layers else INVALID

    @property
    def valid(self) -> bool:
        return self.verdict == VALID

    def has(self, kind: str, layer: Optional[int] = None) -> bool:
        return any(f.kind == kind and (layer is None or f.layer == layer) for f in self.failures)

    def lines(self) -> list[str]:
        out = [f"verdict: {self.verdict}"]
        for lr in self.layers:
            status = "VALID" if lr.ok else "INVALID"
            out.append(
                f"layer {lr.layer}: {status} signer={lr.signer or '-'} "
                f"window=[{lr.not_before},{lr.not_after}) time={lr.time_status} "
                f"signature={'ok' if lr.signature_ok else 'bad'} chain={lr.chain_status or 'ok'}"
                + (f" unprotected={','.join(lr.unprotected)}" if lr.unprotected else "")
            )
        for f in self.failures:
            out.append(f"failure: {f}")
        return out


def time_status(not_before: int, not_after: int, now: int) -> str:
    if now < not_before:
        return NOT_YET_VALID
    if now >= not_after:
        return EXPIRED
    return VALID


def _expected_signer(layers_inner_first: list[SignedEnvelope], index: int) -> Optional[str]:
    """Name the layer at ``index`` must be signed by: User for the innermost,
    otherwise the most recent Broker named at or below the previous layer."""
    if index == 0:
        return layers_inner_first[0].jdl.first("User")
    for layer in reversed(layers_inner_first[:index]):
        broker = layer.jdl.first("Broker")
        if broker is not None:
            return broker
    return None


def verify_envelope(
    e: Union[SignedEnvelope, str, bytes],
    trust_roots: Iterable[Certificate],
    now: int,
    certificates: Iterable[Certificate] = (),
    scheme=DEFAULT_SCHEME,
) -> VerificationReport:
    """Check every layer: signature, half-open time window, chain, signer binding.

    Never raises on bad input. Layers without an attached certificate are
    matched against ``certificates`` by trying each candidate key.
    """
    if not isinstance(e, SignedEnvelope):
        try:
            e = parse_envelope(e)
        except MalformedEnvelope as exc:
            return VerificationReport([], [Failure(MALFORMED, 0, str(exc))])
    trust_roots = list(trust_roots)
    candidates = list(certificates)
    inner_first = list(reversed(e.layers()))
    reports = []
    resolved: list[Optional[Certificate]] = []
    for index, layer in enumerate(inner_first):
        number = index + 1
        failures = []
        try:
            message = layer.signed_bytes()
            unprotected = layer.jdl.unprotected_keys()
            if index == 0 and not {"User", "Broker"} <= set(layer.jdl.hash_order() or ()):
                raise JdlError("innermost HashOrd must cover User and Broker")
        except (JdlError, EnvelopeError) as exc:
            failures.append(Failure(MALFORMED, number, str(exc)))
            reports.append(LayerReport(number, layer.not_before, layer.not_after, None, False,
                                       time_status(layer.not_before, layer.not_after, now),
                                       "not checked", False, [], failures))
            resolved.append(layer.signer_certificate)
            continue

        cert = layer.signer_certificate
        if cert is None:
            cert = next((c for c in candidates if scheme.verify(c.public_key, layer.signature, message)), None)
        resolved.append(cert)
        if layer.signature_text is not None:
            sig_ok = False
            failures.append(Failure(BAD_SIGNATURE, number, "signature is not valid base64"))
        elif cert is None:
            sig_ok = False
            failures.append(Failure(BAD_SIGNATURE, number, "no certificate key verifies the signature"))
        else:
            sig_ok = scheme.verify(cert.public_key, layer.signature, message)
            if not sig_ok:
                failures.append(Failure(BAD_SIGNATURE, number))

        status = time_status(layer.not_before, layer.not_after, now)
        if status == EXPIRED:
            failures.append(Failure(EXPIRED, number, f"now={now} >= {layer.not_after}"))
        elif status == NOT_YET_VALID:
            failures.append(Failure(NOT_YET_VALID, number, f"now={now} < {layer.not_before}"))

        chain = verify_chain(cert, trust_roots, now) if cert is not None else "no certificate"
        if chain is not None:
            failures.append(Failure(BROKEN_CHAIN, number, chain))

        expected = _expected_signer(inner_first, index)
        binding_ok = cert is not None and expected is not None and cert.name == expected
        if cert is not None and not binding_ok:
            failures.append(Failure(SIGNER_MISMATCH, number, f"signed by {cert.name!r}, expected {expected!r}"))

        reports.append(LayerReport(number, layer.not_before, layer.not_after,
                                   cert.subject if cert is not None else None, sig_ok, status,
                                   chain, binding_ok, unprotected, failures))

    reports.reverse()
    all_failures = [f for r in reports for f in r.failures]
    return VerificationReport(reports, all_failures, e.with_certificates(reversed(resolved)))

