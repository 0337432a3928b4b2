import json

import pytest

from sample import INNER_JDL, SAMPLE_ENVELOPE, NOT_AFTER, NOT_BEFORE
from sjdl import pki
from sjdl.actors import FileCatalogue, checksum
from sjdl.audit import Incident, Ledger, forensic_classify
from sjdl.cli import main
from sjdl.delegation import concession_lines, extract_concessions
from sjdl.envelope import parse_envelope, verify_envelope
from sjdl.pki import certificate_to_text, certificates_from_text, identity_to_text
from sjdl.simnet import T0

NOW = NOT_BEFORE + 100


@pytest.fixture
def files(pki, tmp_path):
    def put(name, text):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return {
        "dir": tmp_path,
        "root": put("root.crt", certificate_to_text(pki.root)),
        "user_key": put("user.key", identity_to_text(pki.user)),
        "user_crt": put("user.crt", certificate_to_text(pki.cert(pki.user))),
        "broker_key": put("broker.key", identity_to_text(pki.broker)),
        "broker_crt": put("broker.crt", certificate_to_text(pki.cert(pki.broker))),
        "partner_key": put("partner.key", identity_to_text(pki.partner)),
        "partner_crt": put("partner.crt", certificate_to_text(pki.cert(pki.partner))),
        "jdl": put("job.jdl", INNER_JDL),
    }


def window(lo=NOT_BEFORE, hi=NOT_AFTER):
    return ["--not-before", str(lo), "--not-after", str(hi)]


def sign_and_countersign(f):
    d = f["dir"]
    assert main(["sign", f["jdl"], "--key", f["user_key"], *window(), "-o", str(d / "s.sjdl")]) == 0
    assert main(["countersign", str(d / "s.sjdl"), "--key", f["broker_key"], "--pilot-id", "pilot-1",
                 *window(), "--roots", f["root"], "--certs", f["user_crt"], "--now", str(NOW),
                 "-o", str(d / "s2.sjdl")]) == 0
    return str(d / "s2.sjdl")


def test_verify_fresh_envelope(files, capsys):
    path = sign_and_countersign(files)
    capsys.readouterr()
    code = main(["verify", path, "--roots", files["root"], "--certs", files["user_crt"], files["broker_crt"],
                 "--now", str(NOW)])
    out = capsys.readouterr().out
    assert code == 0
    assert out.splitlines()[0] == "verdict: VALID"
    assert sum(1 for line in out.splitlines() if line.startswith("layer ") and ": VALID" in line) == 2


def test_verify_matches_library(files, pki, capsys):
    path = sign_and_countersign(files)
    capsys.readouterr()
    for now in (NOW, NOT_AFTER):
        main(["verify", path, "--roots", files["root"], "--certs", files["user_crt"], files["broker_crt"],
              "--now", str(now)])
        report = verify_envelope(open(path).read(), pki.roots, now, [pki.cert(pki.user), pki.cert(pki.broker)])
        assert capsys.readouterr().out == "\n".join(report.lines()) + "\n"


def test_verify_sample_with_truncated_signatures(files, capsys):
    path = files["dir"] / "sample.sjdl"
    path.write_text(SAMPLE_ENVELOPE)
    code = main(["verify", str(path), "--roots", files["root"], "--certs", files["user_crt"], files["broker_crt"],
                 "--now", str(NOW)])
    out = capsys.readouterr().out
    assert code == 1
    assert "BadSignature" in out


def test_verify_expired_exits_one(files, capsys):
    path = sign_and_countersign(files)
    assert main(["verify", path, "--roots", files["root"], "--certs", files["user_crt"], files["broker_crt"],
                 "--now", str(NOT_AFTER)]) == 1
    assert "Expired" in capsys.readouterr().out


def test_relay_then_countersign(files, capsys):
    d = files["dir"]
    trust = ["--roots", files["root"], "--certs", files["user_crt"], files["broker_crt"], files["partner_crt"],
             "--now", str(NOW)]
    assert main(["sign", files["jdl"], "--key", files["user_key"], *window(), "-o", str(d / "a")]) == 0
    assert main(["relay", str(d / "a"), "--key", files["broker_key"], "--to", pki_subject(files), *window(),
                 *trust, "-o", str(d / "b")]) == 0
    assert main(["countersign", str(d / "b"), "--key", files["partner_key"], "--pilot-id", "p9", *window(),
                 *trust, "-o", str(d / "c")]) == 0
    capsys.readouterr()
    assert main(["verify", str(d / "c"), *trust]) == 0
    assert parse_envelope((d / "c").read_text()).depth == 3


def pki_subject(files):
    return pki.identity_from_text(open(files["partner_key"]).read()).subject


def test_countersign_rejects_tampered_input(files, capsys):
    d = files["dir"]
    main(["sign", files["jdl"], "--key", files["user_key"], *window(), "-o", str(d / "s.sjdl")])
    (d / "t.sjdl").write_text((d / "s.sjdl").read_text().replace('"cat"', '"rm"'))
    code = main(["countersign", str(d / "t.sjdl"), "--key", files["broker_key"], "--pilot-id", "x", *window(),
                 "--roots", files["root"], "--certs", files["user_crt"], "--now", str(NOW)])
    assert code == 1
    assert "BadSignature" in capsys.readouterr().err


def test_inspect_and_concessions(files, pki, capsys):
    path = sign_and_countersign(files)
    capsys.readouterr()
    assert main(["inspect", path]) == 0
    tree = capsys.readouterr().out
    assert 'PilotIdentifier = {"pilot-1"};' in tree and "layer 1:" in tree
    assert main(["concessions", path, "--roots", files["root"], "--certs", files["user_crt"], files["broker_crt"],
                 "--now", str(NOW)]) == 0
    out = capsys.readouterr().out
    expected = extract_concessions(parse_envelope(open(path).read()), NOW, pki.roots,
                                   [pki.cert(pki.user), pki.cert(pki.broker)])
    assert out == concession_lines(expected)
    assert "EXECUTE\tcat\tpilot-1\ttestuser" in out


def test_keygen_and_ca(tmp_path, capsys):
    ca, user = tmp_path / "ca.key", tmp_path / "u.key"
    assert main(["keygen", "--subject", "/O=T/CN=ca", "--role", "ca", "--bits", "1024", "--seed", "1",
                 "-o", str(ca)]) == 0
    assert main(["keygen", "--subject", "/O=T/CN=u", "--role", "user", "--bits", "1024", "--seed", "2",
                 "-o", str(user)]) == 0
    assert main(["ca", "issue", "--ca-key", str(ca), "--self", *window(0, 10), "-o", str(tmp_path / "r")]) == 0
    assert main(["ca", "issue", "--ca-key", str(ca), "--key", str(user), *window(0, 10),
                 "-o", str(tmp_path / "c")]) == 0
    root = pki.certificates_from_text((tmp_path / "r").read_text())[0]
    cert = pki.certificates_from_text((tmp_path / "c").read_text())[0]
    assert pki.verify_chain(cert, [root], 5) is None
    assert main(["ca", "issue", "--ca-key", str(user), "--key", str(ca), *window(0, 10)]) == 2


def test_simulate_deterministic(capsys):
    assert main(["simulate", "happy_path", "--seed", "7"]) == 0
    first = capsys.readouterr().out
    assert main(["simulate", "happy_path", "--seed", "7"]) == 0
    assert capsys.readouterr().out == first
    assert "objective 1: HELD" in first


def test_simulate_out_dir_and_audit(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "CATALOGUE_FORENSICS", "--seed", "3", "--out-dir", str(out)]) == 0
    assert main(["audit", "verify", str(out / "ledger.txt")]) == 0
    art = tmp_path / "artifact"
    art.write_bytes(b"no such artifact")
    catalogue = json.loads((out / "catalogue.json").read_text())
    assert catalogue["versions"]
    capsys.readouterr()
    for when in (T0 + 86400, T0 + 90 * 86400):
        code = main(["audit", "classify", "--ledger", str(out / "ledger.txt"), "--catalogue",
                     str(out / "catalogue.json"), "--roots", str(out / "roots.crt"), "--job", "1",
                     "--artifact-file", str(art), "--time", str(when)])
        assert code == 0
        cat = FileCatalogue.from_dict(catalogue)
        cat.purge_stale(when)
        expected = forensic_classify(Incident("1", checksum(art.read_bytes()), when),
                                     Ledger.from_text((out / "ledger.txt").read_text()), cat,
                                     certificates_from_text((out / "roots.crt").read_text()))
        assert capsys.readouterr().out == expected.text()

    lines = (out / "ledger.txt").read_text().splitlines()
    lines[0] = lines[0].replace("\t", "\tX", 1)
    (out / "bad.txt").write_text("\n".join(lines) + "\n")
    assert main(["audit", "verify", str(out / "bad.txt")]) == 2


def test_audit_verify_detects_mutation(tmp_path, capsys):
    from sjdl.audit import Ledger, RecordKind

    ledger = Ledger()
    for i in range(3):
        ledger.append(RecordKind.FINALIZE, i, f"p{i}", job_id=str(i))
    text = ledger.to_text()
    (tmp_path / "ok").write_text(text)
    (tmp_path / "bad").write_text(text.replace("\t1\t", "\t9\t", 1))
    assert main(["audit", "verify", str(tmp_path / "ok")]) == 0
    assert main(["audit", "verify", str(tmp_path / "bad")]) == 1


@pytest.mark.parametrize("argv", [
    [],
    ["verify"],
    ["verify", "/no/such/file", "--roots", "/no/such/root"],
    ["simulate", "no_such_scenario"],
    ["sign", "/no/such.jdl", "--key", "k", "--not-before", "1", "--not-after", "2"],
    ["countersign", "x", "--key", "k", "--pilot-id", "p", "--not-before", "soon", "--not-after", "2",
     "--roots", "r"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
