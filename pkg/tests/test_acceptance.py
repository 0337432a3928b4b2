"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line to the terminal.
"""

import base64
import contextlib
import dataclasses
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sample import INNER_JDL, SAMPLE_ENVELOPE, NOT_AFTER, NOT_BEFORE, PILOT_ID
from sjdl.audit import Ledger, RecordKind, ledger_verify
from sjdl.delegation import (
    Privilege,
    ProxyCredential,
    concessions_of,
    delta_mediated,
    extract_concessions,
    gamma_pc,
    phi,
    psi,
)
from sjdl.envelope import (
    VALID,
    EnvelopeError,
    MalformedEnvelope,
    parse_envelope,
    serialize_envelope,
    sign_envelope,
    verify_envelope,
)
from sjdl.jdl import Jdl, JdlError, parse_jdl
from sjdl.pki import DEFAULT_SCHEME
from sjdl.simnet import HELD, VIOLATED, builtin_scenarios, run_scenario

P_U = frozenset(Privilege)
W = (NOT_BEFORE, NOT_AFTER)
CORPUS = {s["name"]: s for s in builtin_scenarios()}


@pytest.fixture
def criterion(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(line):
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line)

    @contextlib.contextmanager
    def run(number, title):
        notes = []
        start = time.perf_counter()
        try:
            yield notes
        except BaseException as exc:
            emit(f"criterion {number}: FAIL {title} ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})")
            raise
        elapsed = time.perf_counter() - start
        emit(f"criterion {number}: PASS {title} [{elapsed:.2f}s{'; ' if notes else ''}{'; '.join(notes)}]")

    return run


def random_value(rng):
    alphabet = "abcXYZ019_-./ <>{};=\"\\é"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12)))


def random_job(rng, user="testuser", broker="myVO"):
    entries = [("Executable", [random_value(rng)])]
    if rng.random() < 0.7:
        entries.append(("Arguments", [random_value(rng) for _ in range(rng.randint(0, 3))]))
    entries.append(("InputFile", sorted({"/" + random_value(rng) for _ in range(rng.randint(0, 4))})))
    entries.append(("Output", sorted({random_value(rng) for _ in range(rng.randint(0, 3))})))
    if rng.random() < 0.3:
        entries.append(("Comment", [random_value(rng)]))
    entries += [("User", [user]), ("Broker", [broker])]
    rng.shuffle(entries)
    keys = [k for k, _ in entries]
    return Jdl.of(*entries, ("HashOrd", "-".join(keys)))


# -- 1 -------------------------------------------------------------------------


def test_criterion_1_wire_format(pki, criterion):
    with criterion(1, "wire-format conformance of the sample envelope") as notes:
        start = time.perf_counter()
        sjdl = phi(pki.user, parse_jdl(INNER_JDL), pki.broker.subject, W, pki.cert(pki.user))
        outer = Jdl.of(("PilotIdentifier", PILOT_ID), ("HashOrd", "SJDL-PilotIdentifier"))
        s2 = sign_envelope(pki.broker, (sjdl, outer), NOT_BEFORE, NOT_AFTER, pki.cert(pki.broker))
        text = SAMPLE_ENVELOPE.replace("FTi2ATSgQ[...]CoA0TG==", base64.b64encode(s2.inner.signature).decode())
        text = text.replace("EMQlV0Wzg[...]r47ivk=", base64.b64encode(s2.signature).decode())

        env = parse_envelope(text)
        assert env.depth == 2
        inner = env.inner.jdl
        assert inner["Executable"] == ("cat",)
        assert inner["Arguments"] == ("myInputFile",)
        assert inner["InputFile"] == ("/catalogue/data/myInputFile",)
        assert inner["Output"] == ("stdout", "stderr")
        assert inner["User"] == ("testuser",)
        assert inner["Broker"] == ("myVO",)
        assert inner.hash_order() == ["Executable", "Arguments", "InputFile", "Output", "User", "Broker"]
        assert env.jdl["PilotIdentifier"] == (PILOT_ID,)
        assert env.jdl.hash_order() == ["SJDL", "PilotIdentifier"]
        for layer in env.layers():
            assert (layer.not_before, layer.not_after) == (1312392035, 1313601635)

        canonical = serialize_envelope(env)
        assert serialize_envelope(parse_envelope(canonical)) == canonical
        assert canonical.encode() == s2.canonical_bytes()
        report = verify_envelope(env, pki.roots, NOT_BEFORE, [pki.cert(pki.user), pki.cert(pki.broker)])
        assert report.verdict == VALID, report.lines()
        elapsed = time.perf_counter() - start
        notes.append(f"runtime {elapsed * 1000:.1f} ms")
        assert elapsed < 1.0


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_gamma_pc(criterion):
    with criterion(2, "proxy-credential semantics over 10^4 triples") as notes:
        rng = random.Random(31)
        granted = 0
        for _ in range(10_000):
            issued = rng.randint(-10**9, 10**9)
            expires = issued + rng.randint(1, 10**6)
            t = rng.randint(issued - 10**6, expires + 10**6) if rng.random() < 0.9 else rng.choice(
                [issued - 1, issued, expires - 1, expires])
            pc = ProxyCredential("u", issued, expires, P_U)
            want = P_U if issued <= t < expires else frozenset()
            got = gamma_pc(pc, t, random_value(rng), random_value(rng))
            assert got == want, (issued, expires, t)
            granted += bool(got)
        pc = ProxyCredential("u", 1000, 2000, P_U)
        assert gamma_pc(pc, 1000) == P_U
        assert gamma_pc(pc, 2000) == frozenset()
        assert gamma_pc(pc, 1999) == P_U
        assert gamma_pc(pc, 999) == frozenset()
        notes.append(f"{granted} granted, {10_000 - granted} denied")


# -- 3 -------------------------------------------------------------------------


def _mutate(data: bytes, pos: int, rng) -> bytes:
    out = bytearray(data)
    out[pos] = (out[pos] + rng.randint(1, 255)) % 256
    return bytes(out)


def _positions(length: int, rng, sampled: int):
    head = range(min(512, length))
    tail = rng.sample(range(512, length), min(sampled, max(0, length - 512)))
    return list(head) + tail


def _same_signed_content(a, b) -> bool:
    if a.depth != b.depth:
        return False
    try:
        return all(x.signed_bytes() == y.signed_bytes() and x.signature == y.signature
                   for x, y in zip(a.layers(), b.layers()))
    except (JdlError, EnvelopeError):
        return False


def test_criterion_3_envelope_soundness(pki, criterion):
    with criterion(3, "sign, countersign, verify and single-byte mutations over 10^3 jobs") as notes:
        start = time.perf_counter()
        rng = random.Random(2024)
        certs = [pki.cert(pki.user), pki.cert(pki.broker)]
        signed_checks = wire_checks = wire_equivalent = 0
        for n in range(1000):
            sjdl = phi(pki.user, random_job(rng), pki.broker.subject, W, pki.cert(pki.user))
            s2 = psi(pki.broker, sjdl, [], f"pilot-{n}", W, trust_roots=pki.roots, certificate=pki.cert(pki.broker))
            assert verify_envelope(s2, pki.roots, NOT_BEFORE).verdict == VALID

            # mutations of the signed bytes of each layer
            for layer, signer, sampled in ((s2, pki.broker, 64), (s2.inner, pki.user, 64)):
                message = layer.signed_bytes()
                assert DEFAULT_SCHEME.verify(signer.public_key, layer.signature, message)
                positions = _positions(len(message), rng, sampled) if layer is s2 else rng.sample(
                    range(len(message)), 32)
                for pos in positions:
                    assert not DEFAULT_SCHEME.verify(signer.public_key, layer.signature, _mutate(message, pos, rng))
                    signed_checks += 1

            # mutations of the wire text, through the full parser and verifier
            wire = s2.canonical_bytes()
            for pos in rng.sample(range(len(wire)), 12):
                mutated = _mutate(wire, pos, rng)
                try:
                    env = parse_envelope(mutated)
                except (MalformedEnvelope, JdlError, UnicodeDecodeError, ValueError):
                    wire_checks += 1
                    continue
                if _same_signed_content(env, s2):
                    # only insignificant whitespace changed; the signed bytes are untouched
                    wire_equivalent += 1
                    continue
                assert verify_envelope(mutated, pki.roots, NOT_BEFORE, certs).verdict != VALID, pos
                wire_checks += 1
        elapsed = time.perf_counter() - start
        notes.append(f"{signed_checks} signed-byte and {wire_checks} wire mutations rejected, "
                     f"{wire_equivalent} whitespace-only")
        assert elapsed < 120


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_mediation_fidelity(pki, criterion):
    with criterion(4, "mediation fidelity over 10^3 jobs, relay depth 0 to 2") as notes:
        rng = random.Random(77)
        brokers = [pki.broker, pki.partner, pki.third]
        total = 0
        for n in range(1000):
            job = random_job(rng)
            agent = f"pilot-{n}"
            sjdl = phi(pki.user, job, pki.broker.subject, W, pki.cert(pki.user))
            before = concessions_of(sjdl)
            assert all(not c.mediated for c in before)
            projected = {c.project() for c in before}
            after = extract_concessions(
                psi(pki.broker, sjdl, [], agent, W, trust_roots=pki.roots), NOT_BEFORE, pki.roots,
                [pki.cert(pki.user), pki.cert(pki.broker)])
            assert {c.project() for c in after} == projected
            assert all(c.agent == agent for c in after)
            for depth in range(3):
                chain = brokers[: depth + 1]
                certs = [pki.cert(pki.user)] + [pki.cert(b) for b in chain]
                env = delta_mediated(pki.user, job, chain, agent, [W] * (depth + 2), trust_roots=pki.roots,
                                     certificates=certs)
                got = extract_concessions(env, NOT_BEFORE, pki.roots)
                assert {c.project() for c in got} == projected, depth
                assert all(c.agent == agent for c in got)
            total += len(projected)
        notes.append(f"{total} concessions compared")


# -- 5 -------------------------------------------------------------------------


def test_criterion_5_protocol_objectives(criterion):
    with criterion(5, "built-in scenario corpus objectives") as notes:
        certified = baseline = 0
        for name, spec in CORPUS.items():
            o = run_scenario(spec, 7)
            assert o.ok, (name, o.unexpected)
            if name.startswith("PROXY_BASELINE"):
                baseline += 1
                assert o.problems == [1, 3], name
                assert all(o.verdicts[k] == VIOLATED for k in (1, 2, 3, 4, 7, 9)), (name, o.verdicts)
            else:
                assert o.model == "certified"
                certified += 1
                assert o.problems == [], name
                assert all(o.verdicts[k] == HELD for k in (1, 2, 3, 4, 7, 9)), (name, o.verdicts)
        notes.append(f"{certified} certified and {baseline} baseline scenarios, 0 unexpected verdicts")


# -- 6 -------------------------------------------------------------------------


def test_criterion_6_token_lifecycle(criterion):
    with criterion(6, "replayed tokens refused after finalization, 100 timings") as notes:
        rng = random.Random(6)
        presentations = 0
        for _ in range(100):
            delay = rng.randrange(0, 30 * 86400)
            o = run_scenario(CORPUS["REPLAY_AFTER_DONE"], 7, {"replay_delay": delay})
            assert o.ok, o.unexpected
            finalized = o.ledger.find(RecordKind.FINALIZE, "1")
            assert len(finalized) == 1
            assert o.replays, delay
            for at, honoured in o.replays:
                assert at >= finalized[0].time + delay
                assert not honoured, (delay, at)
                presentations += 1
            assert len(o.executions) == 1
        notes.append(f"{presentations} replayed presentations refused")


# -- 7 -------------------------------------------------------------------------


def test_criterion_7_forensics(criterion):
    with criterion(7, "forensic verdicts around deletion and the stale horizon") as notes:
        spec = CORPUS["CATALOGUE_FORENSICS"]
        o = run_scenario(spec, 7)
        assert o.ok, o.unexpected
        verdicts = [(origin, acc) for _, origin, acc, _ in o.forensics]
        # deleted an hour after the job, observed a day later: the shadow record still answers
        assert verdicts[0] == ("INTERNAL_I", "YES")
        # untrusted catalogue
        assert verdicts[1][1] == "INDETERMINATE"
        # someone else's file
        assert verdicts[2] == ("INTERNAL_I", "NO")
        # observed after the shadow record has been purged
        assert verdicts[3][1] == "INDETERMINATE"
        assert o.catalogue.entries["/catalogue/data/myInputFile"].live is False

        untrusted = dict(spec, forensics=dict(spec["forensics"], incidents=[
            dict(i, trusted=False, expect="") for i in spec["forensics"]["incidents"]]))
        u = run_scenario(untrusted, 7)
        assert {acc for _, _, acc, _ in u.forensics} == {"INDETERMINATE"}
        notes.append(" ".join(f"{o}/{a}" for o, a in verdicts))


# -- 8 -------------------------------------------------------------------------


def test_criterion_8_determinism(criterion):
    with criterion(8, "byte-identical event logs on re-run") as notes:
        runs = 0
        for name, spec in CORPUS.items():
            for seed in (0, 7, 12345):
                a, b = run_scenario(spec, seed), run_scenario(spec, seed)
                assert a.log.encode() == b.log.encode(), (name, seed)
                assert a.verdict_block() == b.verdict_block(), (name, seed)
                assert a.ledger.to_text() == b.ledger.to_text(), (name, seed)
                runs += 1
        notes.append(f"{runs} scenario/seed pairs")


# -- 9 -------------------------------------------------------------------------


def _mutations(record):
    for f in dataclasses.fields(record):
        value = getattr(record, f.name)
        if f.name == "kind":
            yield f.name, next(k for k in RecordKind if k is not value)
        elif isinstance(value, int):
            yield f.name, value + 1
        else:
            yield f.name, value + "x"


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), data=st.data())
def _ledger_property(seed, data):
    rng = random.Random(seed)
    ledger = Ledger()
    for i in range(data.draw(st.integers(1, 20))):
        ledger.append(rng.choice(list(RecordKind)), i * rng.randint(0, 9), random_value(rng),
                      job_id=str(rng.randint(1, 5)), detail=random_value(rng))
    assert ledger_verify(ledger)
    index = data.draw(st.integers(0, len(ledger) - 1))
    name, value = data.draw(st.sampled_from(list(_mutations(ledger.records[index]))))
    ledger.records[index] = dataclasses.replace(ledger.records[index], **{name: value})
    assert not ledger_verify(ledger)


def test_criterion_9_ledger_integrity(criterion):
    with criterion(9, "any single ledger record mutation is detected") as notes:
        checked = 0
        for name in ("HAPPY_PATH", "SPLIT_JOB", "CATALOGUE_FORENSICS"):
            ledger = run_scenario(CORPUS[name], 7).ledger
            assert ledger_verify(ledger)
            for index, record in enumerate(ledger.records):
                for field_name, value in _mutations(record):
                    copy = Ledger(ledger.records)
                    copy.records[index] = dataclasses.replace(record, **{field_name: value})
                    assert not ledger_verify(copy), (name, index, field_name)
                    checked += 1
                    # the text form detects the same change
                    assert not ledger_verify(Ledger.from_text(copy.to_text())), (name, index, field_name)
        _ledger_property()
        notes.append(f"{checked} record/field mutations over scenario ledgers plus a property test")
