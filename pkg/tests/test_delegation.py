import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sample import INNER_JDL, NOT_AFTER, NOT_BEFORE
from sjdl.envelope import VALID, serialize_envelope, verify_envelope
from sjdl.delegation import (
    AgentFieldForbidden,
    BrokerMismatch,
    Concession,
    Derivative,
    FirstOrderExpired,
    InnerInvalid,
    MyProxyService,
    NonAppendDerivative,
    NotValid,
    Privilege,
    ProxyCredential,
    UnknownKey,
    UserMismatch,
    WindowOutsideUserWindow,
    concession_lines,
    delta_mediated,
    extract_concessions,
    gamma_pc,
    phi,
    psi,
    rho,
    split_job,
    strip_trace,
)
from sjdl.jdl import Jdl, parse_jdl

W = (NOT_BEFORE, NOT_AFTER)
AGENT = "FpK0bE9P"
P_U = frozenset({Privilege.READ, Privilege.WRITE, Privilege.EXECUTE, Privilege.SUBMIT})


def test_gamma_pc_examples():
    pc = ProxyCredential("testuser", 100, 200, P_U)
    assert gamma_pc(pc, 150) == P_U
    assert gamma_pc(pc, 200) == frozenset()
    assert gamma_pc(pc, 99) == frozenset()
    assert gamma_pc(pc, 100) == P_U


@given(st.integers(-1000, 1000), st.integers(1, 500), st.integers(-1500, 1500), st.text(max_size=5), st.text(max_size=5))
def test_gamma_pc_ignores_entity_and_agent(start, length, t, entity, agent):
    pc = ProxyCredential("u", start, start + length, P_U)
    assert gamma_pc(pc, t, entity, agent) == gamma_pc(pc, t)


@pytest.fixture(scope="module")
def sjdl(pki):
    return phi(pki.user, parse_jdl(INNER_JDL), pki.broker.subject, W, pki.cert(pki.user))


def test_phi_sample_job(sjdl, pki):
    got = extract_concessions(sjdl, NOT_BEFORE, pki.roots)
    assert {(c.privilege, c.entity) for c in got} == {
        (Privilege.READ, "/catalogue/data/myInputFile"),
        (Privilege.EXECUTE, "cat"),
        (Privilege.WRITE, "stdout"),
        (Privilege.WRITE, "stderr"),
    }
    assert all(c.agent is None and c.user == "testuser" for c in got)


def test_phi_user_mismatch(pki):
    jdl = parse_jdl(INNER_JDL.replace('"testuser"', '"otheruser"'))
    with pytest.raises(UserMismatch):
        phi(pki.user, jdl, pki.broker.subject, W)


def test_phi_empty_input_list(pki):
    jdl = parse_jdl(INNER_JDL.replace('{"/catalogue/data/myInputFile"}', "{}"))
    env = phi(pki.user, jdl, pki.broker.subject, W, pki.cert(pki.user))
    assert not any(c.privilege is Privilege.READ for c in extract_concessions(env, NOT_BEFORE, pki.roots))


def test_psi_sample_job(sjdl, pki):
    s2 = psi(pki.broker, sjdl, [Derivative.assign_agent(AGENT)], AGENT, W,
             trust_roots=pki.roots, certificate=pki.cert(pki.broker))
    assert s2.depth == 2
    assert s2.jdl.keys() == ["PilotIdentifier", "HashOrd"]
    assert s2.jdl["HashOrd"] == ("SJDL-PilotIdentifier",)
    assert s2.inner.canonical_bytes() == sjdl.canonical_bytes()
    got = extract_concessions(s2, NOT_BEFORE, pki.roots)
    assert len(got) == 4 and all(c.agent == AGENT for c in got)
    before = {c.project() for c in extract_concessions(sjdl, NOT_BEFORE, pki.roots)}
    assert {c.project() for c in got} == before
    assert all(c.privilege is not Privilege.SUBMIT for c in got)


def test_psi_rejects_rewrite(sjdl, pki):
    with pytest.raises(NonAppendDerivative):
        psi(pki.broker, sjdl, [Derivative.append_field("Executable", "rm")], AGENT, W, trust_roots=pki.roots)


def test_psi_append_field_is_signed(sjdl, pki):
    s2 = psi(pki.broker, sjdl, [Derivative.append_field("Site", "CERN")], AGENT, W,
             trust_roots=pki.roots, certificate=pki.cert(pki.broker))
    assert s2.jdl["HashOrd"] == ("SJDL-PilotIdentifier-Site",)
    assert verify_envelope(s2, pki.roots, NOT_BEFORE).verdict == VALID


def test_psi_window_must_nest(sjdl, pki):
    with pytest.raises(WindowOutsideUserWindow):
        psi(pki.broker, sjdl, [], AGENT, (NOT_BEFORE, NOT_AFTER + 1), trust_roots=pki.roots)
    with pytest.raises(WindowOutsideUserWindow):
        psi(pki.broker, sjdl, [], AGENT, (NOT_BEFORE - 1, NOT_AFTER), trust_roots=pki.roots, now=NOT_BEFORE)


def test_psi_broker_mismatch(sjdl, pki):
    with pytest.raises(BrokerMismatch):
        psi(pki.partner, sjdl, [], AGENT, W, trust_roots=pki.roots)


def test_psi_inner_invalid(sjdl, pki):
    with pytest.raises(InnerInvalid):
        psi(pki.broker, sjdl, [], AGENT, W, trust_roots=[])


def test_split_two_inputs(pki):
    jdl = parse_jdl(INNER_JDL.replace('{"/catalogue/data/myInputFile"}', '{"/d/a","/d/b"}'))
    sjdl = phi(pki.user, jdl, pki.broker.subject, W, pki.cert(pki.user))
    subs = split_job(pki.broker, sjdl, [["/d/a"], ["/d/b"]], ["p1", "p2"], W,
                     trust_roots=pki.roots, certificate=pki.cert(pki.broker))
    assert len(subs) == 2
    union = set()
    for sub in subs:
        assert sub.inner.canonical_bytes() == sjdl.canonical_bytes()
        reads = {c.entity for c in extract_concessions(sub, NOT_BEFORE, pki.roots) if c.privilege is Privilege.READ}
        assert reads <= {"/d/a", "/d/b"}
        union |= reads
    assert union == {"/d/a", "/d/b"}
    with pytest.raises(Exception):
        psi(pki.broker, sjdl, [Derivative.split(["/d/zzz"])], "p3", W, trust_roots=pki.roots)


def test_rho_then_psi(sjdl, pki):
    relayed = rho(pki.broker, sjdl, [], pki.partner.subject, W, trust_roots=pki.roots, certificate=pki.cert(pki.broker))
    assert all(c.agent is None for c in extract_concessions(relayed, NOT_BEFORE, pki.roots))
    s3 = psi(pki.partner, relayed, [], AGENT, W, trust_roots=pki.roots, certificate=pki.cert(pki.partner))
    report = verify_envelope(s3, pki.roots, NOT_BEFORE)
    assert report.verdict == VALID and len(report.layers) == 3
    direct = psi(pki.broker, sjdl, [], AGENT, W, trust_roots=pki.roots, certificate=pki.cert(pki.broker))
    assert strip_trace(extract_concessions(s3, NOT_BEFORE, pki.roots)) == strip_trace(
        extract_concessions(direct, NOT_BEFORE, pki.roots))


def test_rho_cannot_assign_agent(sjdl, pki):
    with pytest.raises(AgentFieldForbidden):
        rho(pki.broker, sjdl, [Derivative.append_field("PilotIdentifier", "x")], pki.partner.subject, W,
            trust_roots=pki.roots)
    with pytest.raises(AgentFieldForbidden):
        rho(pki.broker, sjdl, [Derivative.assign_agent("x")], pki.partner.subject, W, trust_roots=pki.roots)


def test_relayed_request_cannot_be_served_by_old_broker(sjdl, pki):
    relayed = rho(pki.broker, sjdl, [], pki.partner.subject, W, trust_roots=pki.roots, certificate=pki.cert(pki.broker))
    with pytest.raises(BrokerMismatch):
        psi(pki.broker, relayed, [], AGENT, W, trust_roots=pki.roots)


@pytest.mark.parametrize("n", [0, 1, 2])
def test_delta_n(n, pki):
    brokers = [pki.broker, pki.partner, pki.third][: n + 1]
    certs = [pki.cert(pki.user)] + [pki.cert(b) for b in brokers]
    env = delta_mediated(pki.user, parse_jdl(INNER_JDL), brokers, AGENT, [W] * (n + 2),
                         trust_roots=pki.roots, certificates=certs)
    assert env.depth == n + 2
    got = strip_trace(extract_concessions(env, NOT_BEFORE, pki.roots))
    assert {c.project() for c in got} == {
        ("testuser", Privilege.READ, "/catalogue/data/myInputFile"),
        ("testuser", Privilege.EXECUTE, "cat"),
        ("testuser", Privilege.WRITE, "stdout"),
        ("testuser", Privilege.WRITE, "stderr"),
    }
    assert all(c.agent == AGENT for c in got)


def test_extract_expired(sjdl, pki):
    with pytest.raises(NotValid):
        extract_concessions(sjdl, NOT_AFTER, pki.roots)


def test_concession_lines():
    lines = concession_lines([Concession("testuser", Privilege.WRITE, "stdout", "p1"),
                              Concession("testuser", Privilege.READ, "/a")])
    assert lines == "READ\t/a\t-\ttestuser\nWRITE\tstdout\tp1\ttestuser\n"


def test_myproxy():
    service = MyProxyService(random.Random(1))
    first = ProxyCredential("testuser", 0, 30 * 86400, P_U)
    key = service.store(first, 10)
    a = service.retrieve(key, 100)
    b = service.retrieve(key, 200, requester="anyone")
    assert a.t_expires - a.t_issued == 86400
    assert a.owner == b.owner == "testuser" and a != b
    with pytest.raises(FirstOrderExpired):
        service.retrieve(key, 30 * 86400)
    with pytest.raises(UnknownKey):
        service.retrieve("nope", 100)
