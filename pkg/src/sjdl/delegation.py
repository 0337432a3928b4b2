"""Delegation mappings.

Two delegation models live here side by side:

* the unrestricted proxy-credential baseline (``gamma_pc`` and a MyProxy-like
  store), where a credential grants everything its owner holds for as long
  as it is within its window;
* mediated definite delegation, where a user signs a job naming the exact
  entities (``phi``), brokers may relay the request (``rho``) and finally
  bind it to an executing agent (``psi``). Concessions are read back from a
  verified envelope with ``extract_concessions``.
"""

from __future__ import annotations

import base64
import enum
import random
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .envelope import SignedEnvelope, sign_envelope, verify_envelope
from .jdl import HASH_ORD, NESTED_KEY, Jdl, check_hash_ord
from .pki import Certificate, Identity, common_name

PILOT_KEY = "PilotIdentifier"
BROKER_KEY = "Broker"
USER_KEY = "User"
SUBJOB_INPUT_KEY = "SubJobInputFile"
SUBJOB_KEY = "SubJob"

MYPROXY_DEFAULT_LIFETIME = 24 * 3600

RESERVED_KEYS = frozenset({PILOT_KEY, BROKER_KEY, HASH_ORD, NESTED_KEY, SUBJOB_INPUT_KEY, SUBJOB_KEY})


class DelegationError(ValueError):
    pass


class UserMismatch(DelegationError):
    pass


class BrokerMissing(DelegationError):
    pass


class BrokerMismatch(DelegationError):
    pass


class InnerInvalid(DelegationError):
    def __init__(self, report):
        self.report = report
        super().__init__("input envelope does not verify: " + "; ".join(str(f) for f in report.failures))


class NonAppendDerivative(DelegationError):
    pass


class InvalidDerivative(DelegationError):
    pass


class WindowOutsideUserWindow(DelegationError):
    pass


class AgentFieldForbidden(DelegationError):
    pass


class AlreadyMediated(DelegationError):
    pass


class NotValid(DelegationError):
    def __init__(self, report):
        self.report = report
        super().__init__("envelope is not valid: " + "; ".join(str(f) for f in report.failures))


class UnknownKey(DelegationError):
    pass


class FirstOrderExpired(DelegationError):
    pass


class CredentialNotValid(DelegationError):
    pass


class Privilege(str, enum.Enum):
    READ = "READ"
    WRITE = "WRITE"
    EXECUTE = "EXECUTE"
    SUBMIT = "SUBMIT"


ALL_PRIVILEGES = frozenset(Privilege)


# -- proxy credential baseline -------------------------------------------------


@dataclass(frozen=True)
class ProxyCredential:
    owner: str
    t_issued: int
    t_expires: int
    privileges: frozenset = ALL_PRIVILEGES
    renewable_until: Optional[int] = None
    elevated: bool = False
    serial: int = 0

    def __post_init__(self):
        if not self.t_issued < self.t_expires:
            raise CredentialNotValid(f"empty credential window [{self.t_issued}, {self.t_expires})")


def gamma_pc(pc: ProxyCredential, t: int, entity: object = None, agent: object = None) -> frozenset:
    """Privileges a proxy credential conveys at time ``t``.

    ``entity`` and ``agent`` are accepted only to make the point explicit:
    the result never depends on them.
    """
    if t < pc.t_issued or t >= pc.t_expires:
        return frozenset()
    return frozenset(pc.privileges)


class MyProxyService:
    """Credential store handing out short-lived derived credentials to any key holder.

    Not thread-safe; one writer at a time.
    """

    def __init__(self, rng: Optional[random.Random] = None, lifetime: int = MYPROXY_DEFAULT_LIFETIME):
        self._rng = rng or random.Random()
        self._store: dict[str, ProxyCredential] = {}
        self._serial = 0
        self.lifetime = lifetime
        self.retrievals: list[tuple[str, str, int]] = []

    def store(self, pc: ProxyCredential, now: int) -> str:
        if not gamma_pc(pc, now):
            raise CredentialNotValid(f"credential of {pc.owner!r} is not valid at {now}")
        key = base64.b64encode(self._rng.getrandbits(128).to_bytes(16, "big")).decode()
        self._store[key] = pc
        return key

    def retrieve(self, key: str, now: int, requester: str = "") -> ProxyCredential:
        try:
            first = self._store[key]
        except KeyError:
            raise UnknownKey("no credential stored under this key") from None
        if not gamma_pc(first, now):
            raise FirstOrderExpired(f"first-order credential of {first.owner!r} expired at {first.t_expires}")
        self._serial += 1
        self.retrievals.append((key, requester, now))
        return ProxyCredential(
            owner=first.owner,
            t_issued=now,
            t_expires=min(now + self.lifetime, first.t_expires),
            privileges=first.privileges,
            renewable_until=first.t_expires,
            elevated=first.elevated,
            serial=self._serial,
        )


# -- mediated definite delegation -------------------------------------------------


@dataclass(frozen=True, order=True)
class Concession:
    user: str
    privilege: Privilege
    entity: str
    agent: Optional[str] = None
    timestamp: int = 0
    broker: str = ""

    def __post_init__(self):
        if not self.entity:
            raise DelegationError("concession entity must be non-empty")
        object.__setattr__(self, "privilege", Privilege(self.privilege))

    @property
    def mediated(self) -> bool:
        return self.agent is not None

    def project(self) -> tuple[str, Privilege, str]:
        return (self.user, self.privilege, self.entity)

    def line(self) -> str:
        return f"{self.privilege.value}\t{self.entity}\t{self.agent or '-'}\t{self.user}"


class DerivativeKind(str, enum.Enum):
    SPLIT = "SPLIT"
    APPEND_FIELD = "APPEND_FIELD"
    ASSIGN_AGENT = "ASSIGN_AGENT"
    RETARGET_BROKER = "RETARGET_BROKER"


@dataclass(frozen=True)
class Derivative:
    kind: DerivativeKind
    detail: tuple = ()

    @classmethod
    def split(cls, inputs: Sequence[str], index: int = 1, count: int = 1) -> "Derivative":
        """Select one sub-job working on ``inputs`` out of ``count`` sub-jobs."""
        return cls(DerivativeKind.SPLIT, (tuple(inputs), int(index), int(count)))

    @classmethod
    def append_field(cls, key: str, values: Sequence[str] | str) -> "Derivative":
        values = (values,) if isinstance(values, str) else tuple(values)
        return cls(DerivativeKind.APPEND_FIELD, (key, values))

    @classmethod
    def assign_agent(cls, agent: str) -> "Derivative":
        return cls(DerivativeKind.ASSIGN_AGENT, (agent,))

    @classmethod
    def retarget_broker(cls, broker: str) -> "Derivative":
        return cls(DerivativeKind.RETARGET_BROKER, (broker,))


def signed_keys(e: SignedEnvelope) -> set[str]:
    """Every key covered by some layer's HashOrd."""
    keys = set()
    for layer in e.layers():
        keys.update(n for n in (layer.jdl.hash_order() or ()) if n != NESTED_KEY)
    return keys


def current_broker(e: SignedEnvelope) -> Optional[str]:
    values = e.lookup(BROKER_KEY)
    return values[0] if values else None


def _user_window(e: SignedEnvelope) -> tuple[int, int]:
    layers = e.layers()
    return max(l.not_before for l in layers), min(l.not_after for l in layers)


def _derivative_entries(e: SignedEnvelope, derivatives: Iterable[Derivative], *, agent_allowed: bool,
                        agent: Optional[str] = None, next_broker: Optional[str] = None) -> list[tuple[str, tuple]]:
    protected = signed_keys(e)
    parent_inputs = e.innermost.jdl.get("InputFile", ())
    entries: list[tuple[str, tuple]] = []
    splits = 0
    for d in derivatives:
        kind = DerivativeKind(d.kind)
        if kind is DerivativeKind.ASSIGN_AGENT:
            if not agent_allowed:
                raise AgentFieldForbidden("relaying cannot assign an agent")
            if d.detail[0] != agent:
                raise InvalidDerivative(f"ASSIGN_AGENT names {d.detail[0]!r}, not {agent!r}")
        elif kind is DerivativeKind.RETARGET_BROKER:
            if agent_allowed:
                raise InvalidDerivative("RETARGET_BROKER is only valid when relaying")
            if d.detail[0] != next_broker:
                raise InvalidDerivative(f"RETARGET_BROKER names {d.detail[0]!r}, not {next_broker!r}")
        elif kind is DerivativeKind.SPLIT:
            inputs, index, count = d.detail
            splits += 1
            if splits > 1:
                raise InvalidDerivative("at most one SPLIT per mediation step")
            if not set(inputs) <= set(parent_inputs):
                raise InvalidDerivative(f"sub-job inputs {sorted(set(inputs) - set(parent_inputs))} not in parent job")
            if not 1 <= index <= count:
                raise InvalidDerivative(f"sub-job index {index} outside 1..{count}")
            if SUBJOB_INPUT_KEY in protected:
                raise NonAppendDerivative("job was already split by an inner layer")
            entries.append((SUBJOB_INPUT_KEY, tuple(inputs)))
            entries.append((SUBJOB_KEY, (str(index), str(count))))
        elif kind is DerivativeKind.APPEND_FIELD:
            key, values = d.detail
            if key == PILOT_KEY:
                raise AgentFieldForbidden(f"{PILOT_KEY} cannot be appended as a plain field")
            if key in protected:
                raise NonAppendDerivative(f"{key!r} is covered by an inner signature")
            if key in RESERVED_KEYS:
                raise InvalidDerivative(f"{key!r} is reserved")
            entries.append((key, tuple(values)))
    keys = [k for k, _ in entries]
    if len(set(keys)) != len(keys):
        raise InvalidDerivative("derivatives append the same key twice")
    return entries


def phi(user: Identity, jdl: Jdl, broker_subject: str, window: tuple[int, int],
        certificate: Optional[Certificate] = None) -> SignedEnvelope:
    """Mediation request: the user signs the job for a named broker (sJDL)."""
    names = jdl.get(USER_KEY)
    if names is None or list(names) != [user.name]:
        raise UserMismatch(f"User field {names!r} does not match signer {user.name!r}")
    broker = jdl.get(BROKER_KEY)
    if not broker:
        raise BrokerMissing("job names no Broker")
    if list(broker) != [common_name(broker_subject)]:
        raise BrokerMismatch(f"Broker field {broker!r} does not name {common_name(broker_subject)!r}")
    order = check_hash_ord(jdl)
    if USER_KEY not in order or BROKER_KEY not in order:
        raise BrokerMissing("HashOrd must cover User and Broker")
    if PILOT_KEY in jdl:
        raise AgentFieldForbidden("a mediation request cannot name an agent")
    return sign_envelope(user, jdl, window[0], window[1], certificate)


def _check_input(broker: Identity, e: SignedEnvelope, window: tuple[int, int],
                 trust_roots: Iterable[Certificate], now: Optional[int],
                 certificates: Iterable[Certificate]) -> None:
    report = verify_envelope(e, trust_roots, window[0] if now is None else now, certificates)
    if not report.valid:
        raise InnerInvalid(report)
    if e.lookup(PILOT_KEY) is not None:
        raise AlreadyMediated("envelope is already bound to an agent")
    if current_broker(e) != broker.name:
        raise BrokerMismatch(f"job is addressed to {current_broker(e)!r}, not {broker.name!r}")
    lo, hi = _user_window(e)
    if not (lo <= window[0] < window[1] <= hi):
        raise WindowOutsideUserWindow(f"broker window [{window[0]}, {window[1]}) not within [{lo}, {hi})")


def psi(broker: Identity, sjdl: SignedEnvelope, derivatives: Iterable[Derivative], agent: str,
        window: tuple[int, int], *, trust_roots: Iterable[Certificate], now: Optional[int] = None,
        certificate: Optional[Certificate] = None, certificates: Iterable[Certificate] = ()) -> SignedEnvelope:
    """Mediation: bind the request to ``agent`` and countersign (s2JDL)."""
    if not agent:
        raise InvalidDerivative("agent identifier must be non-empty")
    _check_input(broker, sjdl, window, trust_roots, now, certificates)
    entries = [(PILOT_KEY, (agent,))]
    entries += _derivative_entries(sjdl, derivatives, agent_allowed=True, agent=agent)
    order = [NESTED_KEY] + [k for k, _ in entries]
    appended = Jdl(tuple(entries) + ((HASH_ORD, ("-".join(order),)),))
    return sign_envelope(broker, (sjdl, appended), window[0], window[1], certificate)


def rho(broker: Identity, sjdl: SignedEnvelope, derivatives: Iterable[Derivative], next_broker_subject: str,
        window: tuple[int, int], *, trust_roots: Iterable[Certificate], now: Optional[int] = None,
        certificate: Optional[Certificate] = None, certificates: Iterable[Certificate] = ()) -> SignedEnvelope:
    """Relay: pass the still non-mediated request on to another broker."""
    derivatives = list(derivatives)
    if any(DerivativeKind(d.kind) is DerivativeKind.ASSIGN_AGENT for d in derivatives):
        raise AgentFieldForbidden("relaying cannot assign an agent")
    _check_input(broker, sjdl, window, trust_roots, now, certificates)
    next_name = common_name(next_broker_subject)
    entries = [(BROKER_KEY, (next_name,))]
    entries += _derivative_entries(sjdl, derivatives, agent_allowed=False, next_broker=next_name)
    order = [NESTED_KEY] + [k for k, _ in entries]
    appended = Jdl(tuple(entries) + ((HASH_ORD, ("-".join(order),)),))
    return sign_envelope(broker, (sjdl, appended), window[0], window[1], certificate)


def delta_mediated(user: Identity, jdl: Jdl, brokers: Sequence[Identity], agent: str,
                   windows: Sequence[tuple[int, int]], *, trust_roots: Iterable[Certificate],
                   certificates: Sequence[Certificate] = (), derivatives: Iterable[Derivative] = ()) -> SignedEnvelope:
    """``psi(rho^n(phi(...)))`` for the broker chain ``brokers`` (n = len(brokers) - 1).

    ``windows[0]`` is the user window, ``windows[i]`` the window of broker i.
    ``certificates`` lists the user certificate followed by one per broker.
    """
    certs = list(certificates) or [None] * (len(brokers) + 1)
    env = phi(user, jdl, brokers[0].subject, windows[0], certs[0])
    for i, broker in enumerate(brokers[:-1]):
        env = rho(broker, env, (), brokers[i + 1].subject, windows[i + 1],
                  trust_roots=trust_roots, certificate=certs[i + 1])
    return psi(broker=brokers[-1], sjdl=env, derivatives=derivatives, agent=agent, window=windows[-1],
               trust_roots=trust_roots, certificate=certs[-1])


def split_job(broker: Identity, sjdl: SignedEnvelope, parts: Sequence[Sequence[str]], agents: Sequence[str],
              window: tuple[int, int], *, trust_roots: Iterable[Certificate], now: Optional[int] = None,
              certificate: Optional[Certificate] = None) -> list[SignedEnvelope]:
    """Split a job into ``len(parts)`` sub-jobs, one s2JDL per part."""
    if len(parts) != len(agents):
        raise InvalidDerivative("one agent per sub-job is required")
    return [
        psi(broker, sjdl, [Derivative.split(part, i + 1, len(parts))], agent, window,
            trust_roots=trust_roots, now=now, certificate=certificate)
        for i, (part, agent) in enumerate(zip(parts, agents))
    ]


def concessions_of(e: SignedEnvelope) -> set[Concession]:
    """Concessions stated by an envelope, without checking its signatures."""
    job = e.innermost.jdl
    user = job.first(USER_KEY) or ""
    agent_values = e.lookup(PILOT_KEY)
    agent = agent_values[0] if agent_values else None
    broker = current_broker(e) or ""
    timestamp = e.not_before
    inputs = list(job.get("InputFile", ()))
    subset = e.lookup(SUBJOB_INPUT_KEY)
    if subset is not None:
        inputs = [f for f in inputs if f in set(subset)]
    out = set()
    for entity in inputs:
        out.add(Concession(user, Privilege.READ, entity, agent, timestamp, broker))
    for entity in job.get("Output", ()):
        out.add(Concession(user, Privilege.WRITE, entity, agent, timestamp, broker))
    for entity in job.get("Executable", ()):
        out.add(Concession(user, Privilege.EXECUTE, entity, agent, timestamp, broker))
    return out


def extract_concessions(e: SignedEnvelope, now: int, trust_roots: Iterable[Certificate],
                        certificates: Iterable[Certificate] = ()) -> set[Concession]:
    """Concessions of a verified envelope; raises ``NotValid`` otherwise."""
    report = verify_envelope(e, trust_roots, now, certificates)
    if not report.valid:
        raise NotValid(report)
    return concessions_of(report.envelope)


def concession_lines(concessions: Iterable[Concession]) -> str:
    return "".join(c.line() + "\n" for c in sorted(concessions, key=lambda c: (c.privilege.value, c.entity, c.agent or "")))


def strip_trace(concessions: Iterable[Concession]) -> set[Concession]:
    """Drop the broker and timestamp fields, for comparing relay depths."""
    return {replace(c, broker="", timestamp=0) for c in concessions}
