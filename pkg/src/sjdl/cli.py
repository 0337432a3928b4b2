"""``sjdl`` command-line tool.

Exit codes: 0 success, 1 verification or verdict failure, 2 usage or IO error.
All times are integer epoch seconds.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import audit, delegation, envelope, jdl, pki, simnet
from .actors import FileCatalogue, checksum

OK, FAILED, USAGE = 0, 1, 2


class CliError(Exception):
    """Bad input or unreadable file; exits with status 2."""


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


def _identity(path: str) -> pki.Identity:
    return pki.identity_from_text(_read(path))


def _certs(paths: Sequence[str]) -> list[pki.Certificate]:
    out = []
    for p in paths or ():
        found = pki.certificates_from_text(_read(p))
        if not found:
            raise CliError(f"{p}: no certificates")
        out.extend(found)
    return out


def _one_cert(path: Optional[str]) -> Optional[pki.Certificate]:
    return _certs([path])[0] if path else None


def _envelope(path: str) -> envelope.SignedEnvelope:
    return envelope.parse_envelope(_read(path))


def _now(args) -> int:
    return int(time.time()) if args.now is None else args.now


def _window(args) -> tuple[int, int]:
    return args.not_before, args.not_after


# -- subcommands ------------------------------------------------------------


def cmd_keygen(args) -> int:
    rng = random.Random(args.seed) if args.seed is not None else None
    ident = pki.generate_identity(args.subject, args.role, key_bits=args.bits, rng=rng)
    _write(args.output, pki.identity_to_text(ident))
    return OK


def cmd_ca_issue(args) -> int:
    ca = _identity(args.ca_key)
    if args.self_signed:
        cert = pki.self_signed_certificate(ca, _window(args))
    else:
        if not args.key:
            raise CliError("ca issue needs --key or --self")
        cert = pki.issue_certificate(ca, _identity(args.key), _window(args))
    _write(args.output, pki.certificate_to_text(cert))
    return OK


def cmd_sign(args) -> int:
    job = jdl.parse_jdl(_read(args.jdl))
    broker = args.broker or job.first(delegation.BROKER_KEY)
    if not broker:
        raise CliError("no --broker given and the job names no Broker")
    e = delegation.phi(_identity(args.key), job, broker, _window(args), _one_cert(args.cert))
    _write(args.output, envelope.serialize_envelope(e) + "\n")
    return OK


def _delegate(args, op) -> int:
    e = _envelope(args.input)
    derivatives = [delegation.Derivative.append_field(k, v) for k, v in args.append or ()]
    kwargs = dict(trust_roots=_certs(args.roots), now=args.now, certificate=_one_cert(args.cert),
                  certificates=_certs(args.certs))
    try:
        out = op(_identity(args.key), e, derivatives, window=_window(args), **kwargs)
    except delegation.InnerInvalid as exc:
        print("\n".join(exc.report.lines()), file=sys.stderr)
        return FAILED
    _write(args.output, envelope.serialize_envelope(out) + "\n")
    return OK


def cmd_countersign(args) -> int:
    return _delegate(args, lambda ident, e, d, **kw: delegation.psi(ident, e, d, args.pilot_id, **kw))


def cmd_relay(args) -> int:
    return _delegate(args, lambda ident, e, d, **kw: delegation.rho(ident, e, d, args.to, **kw))


def cmd_verify(args) -> int:
    report = envelope.verify_envelope(_read(args.input), _certs(args.roots), _now(args), _certs(args.certs))
    print("\n".join(report.lines()))
    return OK if report.valid else FAILED


def _tree(e: envelope.SignedEnvelope, indent: int = 0) -> list[str]:
    pad = "  " * indent
    cert = e.signer_certificate
    lines = [f"{pad}layer {e.depth}: window=[{e.not_before},{e.not_after})"
             + (f" signer={cert.subject}" if cert else "")]
    if e.inner is not None:
        lines += _tree(e.inner, indent + 1)
    for key, values in e.jdl:
        lines.append(f"{pad}  {jdl.serialize_entry(key, values).rstrip()}")
    unprotected = e.jdl.unprotected_keys()
    if unprotected:
        lines.append(f"{pad}  unprotected: {', '.join(unprotected)}")
    sig = e.signature_text if e.signature_text is not None else f"{len(e.signature)} bytes"
    lines.append(f"{pad}  signature: {sig}")
    return lines


def cmd_inspect(args) -> int:
    print("\n".join(_tree(_envelope(args.input))))
    return OK


def cmd_concessions(args) -> int:
    if args.unverified:
        found = delegation.concessions_of(_envelope(args.input))
    else:
        if not args.roots:
            raise CliError("concessions needs --roots (or --unverified)")
        try:
            found = delegation.extract_concessions(_envelope(args.input), _now(args), _certs(args.roots),
                                                   _certs(args.certs))
        except delegation.NotValid as exc:
            print("\n".join(exc.report.lines()), file=sys.stderr)
            return FAILED
    sys.stdout.write(delegation.concession_lines(found))
    return OK


def _params(items: Sequence[str]) -> dict:
    params = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--param expects NAME=VALUE, got {item!r}")
        try:
            params[name] = json.loads(value)
        except json.JSONDecodeError:
            params[name] = value
    return params


def cmd_simulate(args) -> int:
    outcome = simnet.run_scenario(simnet.load_scenario(args.scenario), args.seed, _params(args.param))
    if args.out_dir:
        out = Path(args.out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError(f"cannot create {out}: {exc}") from exc
        _write(str(out / "events.log"), outcome.log)
        _write(str(out / "verdicts.txt"), outcome.verdict_block())
        _write(str(out / "ledger.txt"), outcome.ledger.to_text())
        _write(str(out / "catalogue.json"), json.dumps(outcome.catalogue.to_dict(), indent=1, sort_keys=True))
        _write(str(out / "roots.crt"), "".join(map(pki.certificate_to_text, outcome.trust_roots)))
        _write(str(out / "certs.crt"), "".join(map(pki.certificate_to_text, outcome.certificates)))
    else:
        sys.stdout.write(outcome.log)
        sys.stdout.write("\n" + outcome.verdict_block())
    return OK if outcome.ok else FAILED


def _ledger(path: str) -> audit.Ledger:
    return audit.Ledger.from_text(_read(path))


def cmd_audit_verify(args) -> int:
    ledger = _ledger(args.ledger)
    ok = ledger.verify()
    print(f"ledger: {'VALID' if ok else 'BROKEN'} ({len(ledger)} records)")
    return OK if ok else FAILED


def cmd_audit_classify(args) -> int:
    if args.artifact_checksum:
        digest = args.artifact_checksum
    elif args.artifact_file:
        try:
            digest = checksum(Path(args.artifact_file).read_bytes())
        except OSError as exc:
            raise CliError(f"cannot read {args.artifact_file}: {exc}") from exc
    else:
        raise CliError("audit classify needs --artifact-file or --artifact-checksum")
    try:
        catalogue = FileCatalogue.from_dict(json.loads(_read(args.catalogue)))
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"malformed catalogue snapshot: {exc}") from exc
    if args.untrusted:
        catalogue.trusted = False
    catalogue.purge_stale(args.time)
    incident = audit.Incident(args.job, digest, args.time, args.packages_compromised, args.worker_node_compromised)
    try:
        verdict = audit.forensic_classify(incident, _ledger(args.ledger), catalogue, _certs(args.roots))
    except audit.LedgerBroken as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED
    sys.stdout.write(verdict.text())
    return OK


# -- argument parsing ---------------------------------------------------------


def _window_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--not-before", type=int, required=True)
    p.add_argument("--not-after", type=int, required=True)


def _trust_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--roots", nargs="+", required=required, metavar="FILE", help="trusted root certificates")
    p.add_argument("--certs", nargs="*", default=[], metavar="FILE", help="signer certificates")
    p.add_argument("--now", type=int, help="evaluation time (default: current clock)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sjdl", description="Signed job descriptions and mediated delegation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="create an identity (RSA key plus subject)")
    p.add_argument("--subject", required=True)
    p.add_argument("--role", required=True, type=str.upper, choices=[r.value for r in pki.Role])
    p.add_argument("--bits", type=int, default=pki.DEFAULT_KEY_BITS)
    p.add_argument("--seed", type=int, help="derive the key deterministically")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_keygen)

    ca = sub.add_parser("ca", help="certificate authority operations").add_subparsers(dest="ca_command",
                                                                                      required=True)
    p = ca.add_parser("issue", help="issue a certificate")
    p.add_argument("--ca-key", required=True)
    p.add_argument("--key", help="identity file of the subject")
    p.add_argument("--self", dest="self_signed", action="store_true", help="self-signed root certificate")
    _window_flags(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_ca_issue)

    p = sub.add_parser("sign", help="sign a job for a broker")
    p.add_argument("jdl")
    p.add_argument("--key", required=True)
    p.add_argument("--cert")
    p.add_argument("--broker", help="broker subject (default: the job's Broker field)")
    _window_flags(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sign)

    for name, func, help_text in (("countersign", cmd_countersign, "bind a signed job to a pilot"),
                                  ("relay", cmd_relay, "pass a signed job on to another broker")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("input")
        p.add_argument("--key", required=True)
        p.add_argument("--cert")
        if name == "countersign":
            p.add_argument("--pilot-id", required=True)
        else:
            p.add_argument("--to", required=True, help="subject of the next broker")
        p.add_argument("--append", nargs=2, action="append", metavar=("KEY", "VALUE"),
                       help="append a field to the job")
        _window_flags(p)
        _trust_flags(p)
        p.add_argument("-o", "--output")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="verify every layer of an envelope")
    p.add_argument("input")
    _trust_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect", help="print the envelope tree")
    p.add_argument("input")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("concessions", help="list the concessions an envelope grants")
    p.add_argument("input")
    _trust_flags(p, required=False)
    p.add_argument("--unverified", action="store_true", help="skip signature checks")
    p.set_defaults(func=cmd_concessions)

    p = sub.add_parser("simulate", help="run a scenario")
    p.add_argument("scenario", help="scenario JSON file or built-in scenario name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", metavar="NAME=VALUE")
    p.add_argument("--out-dir", help="write log, verdicts, ledger and catalogue here")
    p.set_defaults(func=cmd_simulate)

    au = sub.add_parser("audit", help="ledger operations").add_subparsers(dest="audit_command", required=True)
    p = au.add_parser("verify", help="check the ledger hash chain")
    p.add_argument("ledger")
    p.set_defaults(func=cmd_audit_verify)
    p = au.add_parser("classify", help="attribute a malicious artifact")
    p.add_argument("--ledger", required=True)
    p.add_argument("--catalogue", required=True, help="catalogue snapshot (JSON)")
    p.add_argument("--roots", nargs="+", required=True)
    p.add_argument("--job", required=True)
    p.add_argument("--artifact-file")
    p.add_argument("--artifact-checksum")
    p.add_argument("--time", type=int, required=True)
    p.add_argument("--untrusted", action="store_true", help="treat the catalogue as untrusted")
    p.add_argument("--packages-compromised", action="store_true")
    p.add_argument("--worker-node-compromised", action="store_true")
    p.set_defaults(func=cmd_audit_classify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    try:
        return args.func(args)
    except (CliError, pki.PkiError, jdl.JdlError, envelope.EnvelopeError, delegation.DelegationError,
            simnet.MalformedScenario, audit.AuditError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
