"""Deterministic discrete-event harness for the job submission protocol.

A scenario is a JSON-compatible dict (see ``builtin_scenarios``). The run
wires the actors together through an event queue ordered by (virtual time,
sequence number). Protocol messages carry octets, and the adversary acts on
those octets only: it can tamper, drop, delay, copy and replay messages,
steal what a message carries, or substitute forged envelopes.

After the run, each declared objective is judged from evidence the
actors do not control: the ledger, the catalogue write history and the
recorded attack outcomes.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from . import actors
from .actors import (
    CentralServices,
    ComputingElement,
    EventLog,
    ExecutionGate,
    FileCatalogue,
    IdentityMapping,
    JobBehaviour,
    JobState,
    ProxyBroker,
    checksum,
)
from .audit import Incident, Ledger, RecordKind, forensic_classify
from .delegation import (
    PILOT_KEY,
    DelegationError,
    Derivative,
    Privilege,
    ProxyCredential,
    concessions_of,
    phi,
    psi,
)
from .envelope import (
    MalformedEnvelope,
    SignedEnvelope,
    parse_envelope,
    serialize_envelope,
    sign_envelope,
    verify_envelope,
)
from .jdl import Jdl, parse_jdl, serialize_jdl
from .pki import (
    DEFAULT_SCHEME,
    Certificate,
    Role,
    certificate_to_text,
    certificates_from_text,
    common_name,
    generate_identity,
    issue_certificate,
    self_signed_certificate,
)

T0 = 1312392035
USER_WINDOW = 1209600
DEFAULT_LATENCY = 1
CERT_VALIDITY = (T0 - 10 * 365 * 86400, T0 + 10 * 365 * 86400)

HELD = "HELD"
VIOLATED = "VIOLATED"
NOT_EXERCISED = "NOT_EXERCISED"
OBJECTIVES = (1, 2, 3, 4, 5, 6, 7, 9)

MODELS = ("certified", "proxy_direct", "proxy_indirect")
ACTIONS = ("TAMPER", "STEAL_CREDENTIAL", "REPLAY", "DROP", "DELAY", "FORGE")
KINDS = ("SUBMIT", "RELAY", "PILOT_REQUEST", "JOB_REQUEST", "JOB", "NO_JOB", "JOB_DONE", "JOB_REFUSED")


class MalformedScenario(ValueError):
    pass


def subject_of(name: str, org: str = "Grid") -> str:
    return f"/O={org}/CN={name}"


# -- messages --------------------------------------------------------------------


@dataclass
class Message:
    seq: int
    time: int
    src: str
    dst: str
    kind: str
    payload: bytes = b""
    job: str = ""
    adversary: Optional[str] = None
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioEvent:
    """One delivered message, as recorded in the outcome."""

    seq: int
    time: int
    src: str
    dst: str
    kind: str
    digest: str
    adversary: Optional[str] = None


def _pack(envelope_text: str, certificates) -> bytes:
    return (envelope_text + "\n" + "".join(certificate_to_text(c) for c in certificates if c is not None)).encode()


def _unpack(payload: bytes) -> tuple[bytes, list[Certificate]]:
    marker = b"\n-----BEGIN SJDL CERTIFICATE-----"
    cut = payload.find(marker)
    if cut < 0:
        return payload.rstrip(b"\n"), []
    try:
        certs = certificates_from_text(payload[cut:].decode("utf-8", "replace"))
    except ValueError:
        certs = []
    return payload[:cut], certs


# -- facts ------------------------------------------------------------------------


@dataclass
class Execution:
    time: int
    job: str
    site: str
    account: str
    uid: int
    pilot_uid: int
    originator: Optional[str]
    envelope_text: str = ""


@dataclass
class Attack:
    time: int
    name: str
    objectives: tuple[int, ...]
    succeeded: bool
    detail: str = ""


@dataclass
class ScenarioOutcome:
    name: str
    seed: int
    model: str
    verdicts: dict[int, str]
    problems: list[int]
    unexpected: list[str]
    log: str
    ledger: Ledger
    events: list[ScenarioEvent]
    messages_per_job: dict[str, int]
    job_states: dict[str, str]
    executions: list[Execution]
    attacks: list[Attack]
    replays: list[tuple[int, bool]]
    forensics: list[tuple[str, str, str, str]]  # (job, origin, accountable, expected)
    trust_roots: list[Certificate] = field(default_factory=list)
    certificates: list[Certificate] = field(default_factory=list)
    catalogue: Optional[FileCatalogue] = None

    @property
    def ok(self) -> bool:
        return not self.unexpected

    def verdict_block(self) -> str:
        lines = [f"scenario: {self.name}", f"model: {self.model}", f"seed: {self.seed}"]
        lines += [f"objective {k}: {self.verdicts[k]}" for k in OBJECTIVES]
        lines.append("problems observed: " + (",".join(map(str, self.problems)) or "none"))
        for job, n in self.messages_per_job.items():
            lines.append(f"messages job {job}: {n}")
        for job, state in self.job_states.items():
            lines.append(f"state job {job}: {state}")
        for job, origin, acc, _ in self.forensics:
            lines.append(f"forensic job {job}: {origin} {acc}")
        lines.append("unexpected: " + ("; ".join(self.unexpected) or "none"))
        return "\n".join(lines) + "\n"


# -- scenario validation ------------------------------------------------------------


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise MalformedScenario(message)


def _substitute(value, params: dict):
    if isinstance(value, str) and value.startswith("$"):
        _require(value[1:] in params, f"undefined parameter {value}")
        return params[value[1:]]
    if isinstance(value, list):
        return [_substitute(v, params) for v in value]
    if isinstance(value, dict):
        return {k: _substitute(v, params) for k, v in value.items()}
    return value


def normalize_scenario(spec: Union[dict, str], params: Optional[dict] = None) -> dict:
    """Validate a scenario and fill in defaults; raises MalformedScenario."""
    if isinstance(spec, str):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise MalformedScenario(f"not JSON: {exc}") from exc
    _require(isinstance(spec, dict), "scenario must be an object")
    merged = dict(spec.get("params", {}))
    merged.update(params or {})
    s = _substitute(copy.deepcopy({k: v for k, v in spec.items() if k != "params"}), merged)
    s["params"] = merged
    s.setdefault("name", "UNNAMED")
    s.setdefault("model", "certified")
    _require(s["model"] in MODELS, f"unknown model {s['model']!r}")
    s.setdefault("brokers", ["myVO"])
    _require(isinstance(s["brokers"], list) and s["brokers"], "brokers must be a non-empty list")
    s.setdefault("users", ["testuser"])
    s.setdefault("sites", [{"name": "siteA"}])
    _require(s["sites"], "at least one site is required")
    for site in s["sites"]:
        _require(isinstance(site, dict) and site.get("name"), "each site needs a name")
        site.setdefault("tags", [])
        site.setdefault("start_delay", 5)
        site.setdefault("clock_skew", 0)
    s.setdefault("files", [])
    for f in s["files"]:
        _require({"path", "owner", "data"} <= set(f), "files need path, owner and data")
        f.setdefault("at", -100)
    _require(isinstance(s.get("jobs"), list), "jobs must be a list")
    for job in s["jobs"]:
        _require(isinstance(job, dict), "each job must be an object")
        job.setdefault("user", s["users"][0])
        _require(job["user"] in s["users"], f"job user {job['user']!r} is not declared")
        job.setdefault("at", 0)
        job.setdefault("executable", "cat")
        job.setdefault("arguments", [])
        job.setdefault("inputs", [])
        job.setdefault("outputs", ["stdout", "stderr"])
        job.setdefault("window", USER_WINDOW)
        job.setdefault("behaviour", {})
        _require(job["window"] > 0, "job window must be positive")
    s.setdefault("split_inputs", None)
    s.setdefault("run_window", 86400)
    s.setdefault("latency", DEFAULT_LATENCY)
    s.setdefault("key_bits", 3072)
    s.setdefault("stale_horizon", 7 * 86400)
    s.setdefault("adversary", [])
    for a in s["adversary"]:
        _require(isinstance(a, dict) and a.get("action") in ACTIONS, f"unknown adversary action in {a!r}")
        a.setdefault("on", "JOB")
        _require(a["on"] in KINDS, f"unknown message kind {a['on']!r}")
        a.setdefault("nth", 1)
        if a["action"] == "TAMPER":
            _require("offset" in a or "find" in a, "TAMPER needs offset or find")
        if a["action"] in ("DELAY", "REPLAY"):
            _require(int(a.get("seconds", a.get("delay", 0))) >= 0, "delays must be non-negative")
    s.setdefault("forensics", {})
    s.setdefault("exercises", [1, 2, 3, 4, 7, 9])
    _require(set(s["exercises"]) <= set(OBJECTIVES), "exercises lists an unknown objective")
    s.setdefault("expect", {})
    s["expect"].setdefault("violated", [])
    s["expect"].setdefault("problems", [])
    return s


# -- simulator -------------------------------------------------------------------------


class Simulation:
    def __init__(self, spec: dict, seed: int):
        self.spec = spec
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = T0
        self.heap: list[tuple[int, int, Message]] = []
        self.seq = 0
        self.log = EventLog()
        self.ledger = Ledger()
        self.catalogue = FileCatalogue(spec["stale_horizon"], on_change=self._catalogue_changed)
        self.events: list[ScenarioEvent] = []
        self.messages: dict[str, int] = {}
        self.executions: list[Execution] = []
        self.attacks: list[Attack] = []
        self.replays: list[tuple[int, bool]] = []
        self.forensic_results: list[tuple[str, str, str, str]] = []
        self.kind_counts: dict[str, int] = {}
        self.pending_replays: dict[str, list[tuple[Message, int]]] = {}
        self.originated: dict[bytes, str] = {}  # innermost request -> user
        self.originated_jobs: dict[str, str] = {}  # baseline job id -> user
        self.finalized: dict[str, int] = {}
        self.stolen: list[dict] = []
        self.job_index: dict[str, int] = {}
        self.baseline_held: dict[str, object] = {}
        self.problem3 = False
        self._setup_identities()
        self._setup_actors()

    # setup
    def _identity(self, subject: str, role: Role, org_seed: str = ""):
        rng = random.Random(f"{self.seed}/{org_seed}{subject}")
        return generate_identity(subject, role, key_bits=self.spec["key_bits"], rng=rng)

    def _setup_identities(self) -> None:
        self.ca = self._identity("/O=Grid/CN=Grid Root CA", Role.CA)
        self.root = self_signed_certificate(self.ca, CERT_VALIDITY)
        self.roots = [self.root]
        self.rogue_ca = self._identity("/O=Evil/CN=Rogue CA", Role.CA)
        self.users = {}
        self.user_certs = {}
        for name in self.spec["users"]:
            ident = self._identity(subject_of(name), Role.USER)
            self.users[name] = ident
            self.user_certs[name] = issue_certificate(self.ca, ident, CERT_VALIDITY)
        self.brokers = {}
        self.broker_certs = {}
        for name in self.spec["brokers"]:
            ident = self._identity(subject_of(name), Role.BROKER)
            self.brokers[name] = ident
            self.broker_certs[name] = issue_certificate(self.ca, ident, CERT_VALIDITY)

    def _setup_actors(self) -> None:
        spec = self.spec
        for f in spec["files"]:
            self.catalogue.write(f["path"], f["data"].encode(), f["owner"], T0 + f["at"])
        self.sites: dict[str, dict] = {}
        for site in spec["sites"]:
            mapping = IdentityMapping()
            for name in spec["users"]:
                mapping.register(subject_of(name))
            gate = ExecutionGate(site["name"], mapping, log=self.log)
            ce = ComputingElement(site["name"], site["tags"], gate=gate, log=self.log)
            self.sites[site["name"]] = {"ce": ce, "gate": gate, "mapping": mapping, "skew": site["clock_skew"],
                                        "delay": site["start_delay"]}
        self.agents: dict[str, actors.JobAgent] = {}
        self.cs: dict[str, Union[CentralServices, ProxyBroker]] = {}
        names = spec["brokers"]
        counter = iter(range(1, 1 << 30))
        next_id = lambda: str(next(counter))  # noqa: E731  job ids are global across brokers
        if spec["model"] == "certified":
            for i, name in enumerate(names):
                relay = subject_of(names[i + 1]) if i + 1 < len(names) else None
                self.cs[name] = CentralServices(
                    self.brokers[name], self.broker_certs[name], self.roots, log=self.log, ledger=self.ledger,
                    catalogue=self.catalogue, rng=random.Random(f"{self.seed}/pilots/{name}"),
                    run_window=spec["run_window"], split_inputs=spec["split_inputs"], relay_to=relay,
                    peer_certificates=list(self.broker_certs.values()), actor_name=f"cs@{name}",
                    job_ids=next_id)
        else:
            mode = "direct" if spec["model"] == "proxy_direct" else "indirect"
            self.cs[names[0]] = ProxyBroker(mode, log=self.log, catalogue=self.catalogue,
                                            rng=random.Random(f"{self.seed}/myproxy"), actor_name=f"cs@{names[0]}")
        self.entry = names[0]
        self.pilot_rng = random.Random(f"{self.seed}/baseline-pilots")

    def _catalogue_changed(self, action: str, now: int, detail: str) -> None:
        self.ledger.append(RecordKind.CATALOGUE_CHANGE, now, f"{action} {detail}")

    # messaging
    def send(self, time: int, src: str, dst: str, kind: str, payload: bytes = b"", job: str = "",
             **meta) -> None:
        self.seq += 1
        msg = Message(self.seq, int(time), src, dst, kind, payload, job, meta.pop("adversary", None), meta)
        self._schedule(msg)

    def _schedule(self, msg: Message) -> None:
        heapq.heappush(self.heap, (msg.time, msg.seq, msg))

    def _adv(self, time: int, event: str, detail: str) -> None:
        self.log.emit(time, "adversary", event, detail)

    def _intercept(self, action: dict, msg: Message) -> Optional[Message]:
        kind = action["action"]
        if kind == "DROP":
            self._adv(msg.time, "DROP", f"seq={msg.seq} {msg.kind}")
            return None
        if kind == "DELAY":
            seconds = int(action.get("seconds", 0))
            self._adv(msg.time, "DELAY", f"seq={msg.seq} {msg.kind} by={seconds}")
            msg.time += seconds
            msg.meta["seen"] = True
            return msg
        if kind == "TAMPER":
            data = bytearray(msg.payload)
            if "find" in action:
                needle = action["find"].encode()
                at = bytes(data).find(needle)
                if at >= 0:
                    data[at:at + len(needle)] = action.get("replace", "").encode()
            else:
                offset = int(action["offset"]) % max(1, len(data))
                data[offset] ^= int(action.get("byte", 1)) or 1
            self._adv(msg.time, "TAMPER", f"seq={msg.seq} {msg.kind}")
            msg.payload = bytes(data)
            return msg
        if kind == "REPLAY":
            delay = int(action.get("delay", 0))
            copy_ = Message(0, msg.time, msg.src, msg.dst, msg.kind, msg.payload, msg.job, "REPLAY", dict(msg.meta))
            self._adv(msg.time, "CAPTURE", f"seq={msg.seq} {msg.kind} job={msg.job}")
            if action.get("after") == "FINALIZE":
                self.pending_replays.setdefault(msg.job, []).append((copy_, delay))
            else:
                self._replay(copy_, msg.time + delay)
            return msg
        if kind == "STEAL_CREDENTIAL":
            self._adv(msg.time, "STEAL", f"seq={msg.seq} {msg.kind} job={msg.job}")
            self._steal({"msg": msg, "time": msg.time + int(action.get("delay", 1)), "action": action})
            return msg
        if kind == "FORGE":
            forged = self._forge(msg, action)
            self._adv(msg.time, "FORGE", f"seq={msg.seq} {msg.kind} signer={action.get('signer', 'rogue')}")
            return forged
        return msg

    def _steal(self, item: dict) -> None:
        self.stolen.append(item)
        self.stolen.sort(key=lambda i: i["time"])

    def _replay(self, msg: Message, at: int) -> None:
        self.seq += 1
        msg.seq = self.seq
        msg.time = at
        self._schedule(msg)

    def _forge(self, msg: Message, action: dict) -> Message:
        """Substitute an envelope signed by a key that does not chain to a trust root."""
        body, certs = _unpack(msg.payload)
        try:
            env = parse_envelope(body)
        except MalformedEnvelope:
            return msg
        if msg.kind == "JOB" and env.depth >= 2:
            name = self.spec["brokers"][-1]
            rogue = self._identity(subject_of(name, "Evil"), Role.BROKER, "rogue/")
            rogue_cert = issue_certificate(self.rogue_ca, rogue, CERT_VALIDITY)
            extra = [Derivative.append_field("Arguments2", ["--exfiltrate"])]
            inner = env.inner.with_certificates([self._resolve(l, certs) for l in env.inner.layers()])
            try:
                forged = psi(rogue, inner, extra, env.jdl.first(PILOT_KEY), (env.not_before, env.not_after),
                             trust_roots=self.roots, now=msg.time, certificate=rogue_cert)
            except DelegationError:
                return msg
            msg.payload = _pack(serialize_envelope(forged), [c for c in forged.certificates()])
        elif msg.kind == "SUBMIT":
            user = env.innermost.jdl.first("User")
            rogue = self._identity(subject_of(user, "Evil"), Role.USER, "rogue/")
            rogue_cert = issue_certificate(self.rogue_ca, rogue, CERT_VALIDITY)
            jdl = env.innermost.jdl.replace("Executable", ("evil",))
            forged = sign_envelope(rogue, jdl, env.not_before, env.not_after, rogue_cert)
            msg.payload = _pack(serialize_envelope(forged), [rogue_cert])
        msg.adversary = "FORGE"
        return msg

    def _resolve(self, layer: SignedEnvelope, certs: list[Certificate]) -> Optional[Certificate]:
        message = layer.signed_bytes()
        return next((c for c in certs if DEFAULT_SCHEME.verify(c.public_key, layer.signature, message)), None)

    # main loop
    def run(self) -> None:
        spec = self.spec
        for index, job in enumerate(spec["jobs"]):
            self.send(T0 + job["at"], f"client:{job['user']}", f"cs@{self.entry}", "SUBMIT",
                      self._client_payload(index, job), "", job_index=index)
        steps = 0
        while self.heap or self.stolen:
            if self.stolen and (not self.heap or self.stolen[0]["time"] <= self.heap[0][0]):
                item = self.stolen.pop(0)
                self.now = max(self.now, item["time"])
                self._exploit(item)
                continue
            time, _, msg = heapq.heappop(self.heap)
            self.now = max(self.now, time)
            steps += 1
            if steps > 100000:
                raise MalformedScenario("scenario does not terminate")
            self._deliver(msg)
        self._probe_pilot_credentials()
        self._run_forensics()

    def _client_payload(self, index: int, job: dict) -> bytes:
        user = self.users[job["user"]]
        jdl = self._job_jdl(job)
        at = T0 + job["at"]
        if self.spec["model"] == "certified":
            sjdl = phi(user, jdl, subject_of(self.entry), (at, at + job["window"]), self.user_certs[job["user"]])
            self.originated[sjdl.canonical_bytes()] = job["user"]
            return _pack(serialize_envelope(sjdl), [self.user_certs[job["user"]]])
        pc = ProxyCredential(job["user"], at, at + job["window"], serial=index + 1)
        return f"{_credential_line(pc)}\n{serialize_jdl(jdl)}".encode()

    def _job_jdl(self, job: dict) -> Jdl:
        entries = [("Executable", (job["executable"],))]
        if job["arguments"]:
            entries.append(("Arguments", tuple(job["arguments"])))
        if job["inputs"]:
            entries.append(("InputFile", tuple(job["inputs"])))
        if job["outputs"]:
            entries.append(("Output", tuple(job["outputs"])))
        if job.get("requirements"):
            entries.append(("Requirements", (job["requirements"],)))
        entries.append(("User", (job["user"],)))
        entries.append(("Broker", (self.entry,)))
        entries.append(("HashOrd", ("-".join(k for k, _ in entries),)))
        return Jdl(tuple(entries))

    def _count(self, job: str) -> None:
        if job:
            parent = job.split(".", 1)[0]
            self.messages[parent] = self.messages.get(parent, 0) + 1

    def _deliver(self, msg: Message) -> None:
        if not msg.meta.pop("seen", False) and not msg.adversary:
            # the adversary sees each message once, in delivery order
            self.kind_counts[msg.kind] = self.kind_counts.get(msg.kind, 0) + 1
            for action in self.spec["adversary"]:
                if action["on"] == msg.kind and action["nth"] == self.kind_counts[msg.kind]:
                    msg = self._intercept(action, msg)
                    if msg is None:
                        return
                    if msg.meta.get("seen"):
                        self._schedule(msg)
                        return
        self.events.append(ScenarioEvent(msg.seq, msg.time, msg.src, msg.dst, msg.kind,
                                         hashlib.sha384(msg.payload).hexdigest()[:16], msg.adversary))
        self.log.emit(msg.time, msg.dst, "RECV", f"seq={msg.seq} {msg.kind} from={msg.src} job={msg.job or '-'}"
                      + (f" via={msg.adversary}" if msg.adversary else ""))
        self._count(msg.job)
        handler = getattr(self, f"_on_{msg.kind.lower()}")
        handler(msg)

    # certified-model handlers
    def _on_submit(self, msg: Message) -> None:
        cs = self.cs[msg.dst.split("@", 1)[1]]
        if isinstance(cs, ProxyBroker):
            return self._baseline_submit(cs, msg)
        body, certs = _unpack(msg.payload)
        try:
            job = cs.submit(body, certs, msg.time, job_id=msg.meta.get("job_id"))
        except actors.Rejected:
            return
        self._count(job)
        if msg.meta.get("job_index") is not None:
            self.job_index[job] = msg.meta["job_index"]
        self._after_accept(cs, job, msg.time)

    def _on_relay(self, msg: Message) -> None:
        self._on_submit(msg)

    def _after_accept(self, cs: CentralServices, job: str, now: int) -> None:
        while cs.outbox:
            job_id, relayed, certs = cs.outbox.pop(0)
            nxt = relayed.jdl.first("Broker")
            self.send(now + self.spec["latency"], cs.name, f"cs@{nxt}", "RELAY",
                      _pack(serialize_envelope(relayed), certs), job_id, job_id=job_id)
        for name, site in self.sites.items():
            for reg in cs.request_pilots(name, site["ce"].tags, now):
                self.send(now + self.spec["latency"], cs.name, f"ce@{name}", "PILOT_REQUEST",
                          reg.identifier.encode(), job, registration=reg, cs=cs.name)

    def _site(self, actor: str) -> dict:
        return self.sites[actor.split("@", 1)[1]]

    def _on_pilot_request(self, msg: Message) -> None:
        site = self._site(msg.dst)
        reg = msg.meta["registration"]
        cs = self.cs[msg.meta["cs"].split("@", 1)[1]]
        certs = list(self.broker_certs.values())
        # the pilot batch job is submitted now and asks for work once it starts
        agent = site["ce"].start_pilot(reg, certs, self.ledger, msg.time)
        self.agents[reg.identifier] = agent
        self.send(msg.time + site["delay"], f"ja@{reg.site}", cs.name, "JOB_REQUEST", reg.identifier.encode(),
                  msg.job, pilot=reg.identifier)

    def _on_job_request(self, msg: Message) -> None:
        cs = self.cs[msg.dst.split("@", 1)[1]]
        pilot = msg.payload.decode("utf-8", "replace")
        if isinstance(cs, ProxyBroker):
            return self._baseline_job_request(cs, msg, pilot)
        try:
            job, s2, certs = cs.request_job(pilot, msg.meta.get("site") or self._pilot_site(pilot), msg.time)
        except (actors.NoMatch, actors.UnknownPilot):
            self.send(msg.time + self.spec["latency"], cs.name, msg.src, "NO_JOB", b"", "", pilot=pilot)
            return
        except DelegationError as exc:
            self.log.emit(msg.time, cs.name, "MEDIATION_FAILED", str(exc))
            return
        self.send(msg.time + self.spec["latency"], cs.name, msg.src, "JOB", _pack(serialize_envelope(s2), certs),
                  job, pilot=pilot, cs=cs.name)

    def _pilot_site(self, pilot: str) -> str:
        agent = self.agents.get(pilot)
        return agent.ce.site if agent else ""

    def _on_no_job(self, msg: Message) -> None:
        self.log.emit(msg.time, msg.dst, "PILOT_EXIT", f"pilot={msg.meta.get('pilot')}")

    def _behaviour(self, job_id: str) -> JobBehaviour:
        index = self._job_index(job_id)
        if index is None:
            return JobBehaviour()
        b = self.spec["jobs"][index]["behaviour"]
        return JobBehaviour(
            extra_reads=tuple(b.get("extra_reads", ())),
            extra_writes=tuple((p, d.encode()) for p, d in b.get("extra_writes", ())),
            external_fetches=tuple(d.encode() for d in b.get("external_fetches", ())),
        )

    def _job_index(self, job_id: str) -> Optional[int]:
        parent = job_id.split(".", 1)[0]
        return self.job_index.get(parent)

    def _on_job(self, msg: Message) -> None:
        pilot = msg.meta["pilot"]
        agent = self.agents[pilot]
        site = self._site(msg.dst)
        now = msg.time + site["skew"]
        cs = self.cs[msg.meta["cs"].split("@", 1)[1]]
        if isinstance(cs, ProxyBroker):
            return self._baseline_run(cs, agent, msg, now)
        body, certs = _unpack(msg.payload)
        replay = msg.adversary == "REPLAY"
        try:
            record = agent.validate_and_run(body.decode("utf-8", "replace"), certs, self.roots, now, cs, msg.job,
                                            self._behaviour(msg.job))
        except actors.ValidationFailed:
            self._refused(msg, cs, replay)
            return
        except actors.Refused:
            self._refused(msg, cs, replay)
            return
        except (actors.ConcessionDenied, actors.TokenRefused, actors.NotFound, actors.ChecksumMismatch):
            if replay:
                self.replays.append((msg.time, False))
            else:
                self.send(msg.time + self.spec["latency"], msg.dst, cs.name, "JOB_DONE", b"ERROR", msg.job,
                          pilot=pilot)
            return
        self._count(msg.job)
        for _ in record.reads + record.writes:
            self._count(msg.job)
        env = parse_envelope(record.s2jdl_text)
        originator = self.originated.get(env.innermost.canonical_bytes())
        self.executions.append(Execution(msg.time, msg.job, agent.ce.site, common_name(record.subject), record.uid,
                                         agent.ce.pilot_uid, originator, record.s2jdl_text))
        if replay:
            self.replays.append((msg.time, True))
            return
        self.send(msg.time + self.spec["latency"], msg.dst, cs.name, "JOB_DONE", b"DONE", msg.job, pilot=pilot)

    def _refused(self, msg: Message, cs, replay: bool) -> None:
        if replay:
            self.replays.append((msg.time, False))
            return
        self.send(msg.time + self.spec["latency"], msg.dst, cs.name, "JOB_REFUSED", b"", msg.job,
                  pilot=msg.meta["pilot"])

    def _on_job_done(self, msg: Message) -> None:
        cs = self.cs[msg.dst.split("@", 1)[1]]
        outcome = JobState.DONE if msg.payload == b"DONE" else JobState.ERROR
        self._finalize(cs, msg.job, outcome, msg.time)
        # the pilot goes on to ask for its next job
        self.send(msg.time + self.spec["latency"], msg.src, cs.name, "JOB_REQUEST",
                  msg.meta["pilot"].encode(), "", pilot=msg.meta["pilot"])

    def _on_job_refused(self, msg: Message) -> None:
        cs = self.cs[msg.dst.split("@", 1)[1]]
        self._finalize(cs, msg.job, JobState.ERROR, msg.time)

    def _finalize(self, cs, job: str, outcome: JobState, now: int) -> None:
        try:
            cs.finalize(job, outcome, now)
        except (actors.AlreadyTerminal, actors.UnknownJob, KeyError):
            return
        self.finalized[job] = now
        for copy_, delay in self.pending_replays.pop(job, []):
            self._replay(copy_, now + delay)
            self._steal({"msg": copy_, "time": now + delay, "action": {"action": "REPLAY_TOKEN"}})

    # adversary use of stolen material
    def _exploit(self, item: dict) -> None:
        msg, now = item["msg"], item["time"]
        cs = self.cs[msg.meta.get("cs", f"cs@{self.entry}").split("@", 1)[1]]
        if isinstance(cs, ProxyBroker):
            return self._baseline_exploit(cs, msg, now)
        pilot = msg.meta.get("pilot", "")
        body, certs = _unpack(msg.payload)
        try:
            s2 = parse_envelope(body)
        except MalformedEnvelope:
            return
        user = s2.innermost.jdl.first("User") or ""
        if item["action"]["action"] == "REPLAY_TOKEN":
            try:
                cs.upload(pilot, s2, "stdout", b"replayed output", now)
                honoured = True
            except actors.ActorError:
                honoured = False
            self.replays.append((now, honoured))
            self._attack(now, "token reuse after finalize", (4,), honoured)
            return
        # a payload holding the pilot identifier and its s2JDL
        try:
            cs.submit_with_credential(pilot, Jdl.of(("Executable", "evil"), ("User", user)), now)
            ok = True
        except actors.Rejected:
            ok = False
        self._attack(now, "submit with stolen pilot identifier", (3, 7), ok)
        foreign = [e.job_id for e in cs.queue.values() if e.agent not in (None, pilot)] + \
                  [e.job_id for e in cs.queue.values() if e.agent is None and e.state is JobState.WAITING]
        for job in foreign[:1]:
            try:
                cs.fetch_job(pilot, job, now)
                ok = True
            except actors.ActorError:
                ok = False
            self._attack(now, f"retrieve foreign job {job}", (7,), ok)
        try:
            cs.upload(pilot, s2, f"/user/{user}/planted", b"planted", now)
            ok = True
        except actors.ActorError:
            ok = False
        self._attack(now, "write outside concessions with stolen token", (4, 7), ok)

    def _attack(self, now: int, name: str, objectives: tuple[int, ...], succeeded: bool) -> None:
        self.attacks.append(Attack(now, name, objectives, succeeded))
        self._adv(now, "ATTACK", f"{name}: {'SUCCEEDED' if succeeded else 'refused'}")

    def _probe_pilot_credentials(self) -> None:
        """What a party controlling a pilot can do with what the pilot holds."""
        if 7 not in self.spec["exercises"]:
            return
        now = self.now + 1
        cs = self.cs[self.entry]
        if isinstance(cs, ProxyBroker):
            for pilot, held in sorted(self.baseline_held.items()):
                try:
                    cred = cs.credential_for(held, now, requester=pilot)
                    cs.submit_with_credential(cred, Jdl.of(("Executable", "probe"), ("User", cred.owner)), now)
                    ok = True
                except (actors.ActorError, DelegationError):
                    ok = False
                self._attack(now, f"pilot {pilot[:8]} submits in the user's name", (7,), ok)
                if ok:
                    self.problem3 = True
            return
        for pilot in sorted(p for c in self.cs.values() for p in c.pilots):
            try:
                cs.submit_with_credential(pilot, Jdl.of(("Executable", "probe"), ("User", "testuser")), now)
                ok = True
            except actors.Rejected:
                ok = False
            self._attack(now, f"pilot {pilot[:8]} submits in a user's name", (7,), ok)

    # proxy-credential baseline
    def _baseline_submit(self, cs: ProxyBroker, msg: Message) -> None:
        lines = msg.payload.decode("utf-8", "replace").split("\n", 1)
        try:
            cred = _parse_credential(lines[0])
            jdl = parse_jdl(lines[1] if len(lines) > 1 else "")
            job = cs.submit_with_credential(cred, jdl, msg.time)
        except (actors.ActorError, DelegationError, ValueError):
            return
        self.messages[job] = self.messages.get(job, 0) + 1
        if msg.meta.get("job_index") is not None and not msg.adversary:
            self.originated_jobs[job] = cred.owner
        if msg.meta.get("job_index") is not None:
            self.job_index[job] = msg.meta["job_index"]
        for name, site in self.sites.items():
            pilot = base64.b64encode(self.pilot_rng.getrandbits(128).to_bytes(16, "big")).decode()
            reg = actors.PilotRegistration(pilot, name, msg.time, True, site["ce"].tags)
            self.send(msg.time + self.spec["latency"], cs.name, f"ce@{name}", "PILOT_REQUEST", pilot.encode(), job,
                      registration=reg, cs=cs.name)
            break

    def _baseline_job_request(self, cs: ProxyBroker, msg: Message, pilot: str) -> None:
        try:
            job, jdl, handle = cs.request_job(pilot, msg.time)
        except actors.NoMatch:
            self.send(msg.time + self.spec["latency"], cs.name, msg.src, "NO_JOB", b"", "", pilot=pilot)
            return
        held = _credential_line(handle) if isinstance(handle, ProxyCredential) else f"MYPROXY {handle}"
        self.baseline_held[pilot] = handle
        self.send(msg.time + self.spec["latency"], cs.name, msg.src, "JOB", f"{held}\n{serialize_jdl(jdl)}".encode(),
                  job, pilot=pilot, cs=cs.name)

    def _baseline_run(self, cs: ProxyBroker, agent, msg: Message, now: int) -> None:
        head, _, text = msg.payload.decode("utf-8", "replace").partition("\n")
        pilot = msg.meta["pilot"]
        try:
            handle = head.split(" ", 1)[1] if head.startswith("MYPROXY ") else _parse_credential(head)
            cred = cs.credential_for(handle, now, requester=pilot)
            jdl = parse_jdl(text)
        except (actors.ActorError, DelegationError, ValueError):
            self.send(msg.time + self.spec["latency"], msg.dst, cs.name, "JOB_DONE", b"ERROR", msg.job, pilot=pilot)
            return
        site = self._site(msg.dst)
        # the gate maps whatever credential accompanies the payload
        uid = site["mapping"].uid(subject_of(cred.owner)) or agent.ce.pilot_uid
        status = b"DONE"
        try:
            inputs = {p: cs.read(cred, p, now) for p in jdl.get("InputFile", ())}
            outputs = actors.run_executable(jdl.first("Executable") or "", tuple(jdl.get("Arguments", ())), inputs,
                                            jdl.get("Output", ()))
            for name, data in outputs.items():
                cs.write(cred, f"/user/{cred.owner}/output/{msg.job}/{name}", data, now)
                self._count(msg.job)
        except actors.ActorError:
            status = b"ERROR"
        self._count(msg.job)
        self.executions.append(Execution(msg.time, msg.job, agent.ce.site, cred.owner, uid, agent.ce.pilot_uid,
                                         self.originated_jobs.get(msg.job)))
        self.send(msg.time + self.spec["latency"], msg.dst, cs.name, "JOB_DONE", status, msg.job, pilot=pilot)

    def _baseline_exploit(self, cs: ProxyBroker, msg: Message, now: int) -> None:
        head = msg.payload.decode("utf-8", "replace").partition("\n")[0]
        try:
            handle = head.split(" ", 1)[1] if head.startswith("MYPROXY ") else _parse_credential(head)
            cred = cs.credential_for(handle, now, requester="adversary")
        except (actors.ActorError, DelegationError, ValueError):
            self._attack(now, "obtain user credential", (7,), False)
            return
        self.problem3 = True
        self._attack(now, f"obtain credential of {cred.owner}", (7,), True)
        jdl = Jdl.of(("Executable", "evil"), ("Output", "stdout"), ("User", cred.owner))
        self.send(now, "adversary", f"cs@{self.entry}", "SUBMIT", f"{_credential_line(cred)}\n{serialize_jdl(jdl)}".encode(),
                  "", adversary="STOLEN")
        try:
            cs.write(cred, f"/user/{cred.owner}/planted", b"planted", now)
            ok = True
        except actors.ActorError:
            ok = False
        self._attack(now, "write outside the job with stolen credential", (4, 7), ok)

    # forensics
    def _run_forensics(self) -> None:
        spec = self.spec["forensics"]
        if not spec:
            return
        steps = []
        for d in spec.get("delete", []):
            steps.append((self._job_end(d) + d.get("after", 0), 0, "delete", d))
        for i, inc in enumerate(spec.get("incidents", [])):
            steps.append((self._job_end(inc) + inc.get("after", 0), 1 + i, "incident", inc))
        for at, _, what, item in sorted(steps, key=lambda s: (s[0], s[1])):
            if what == "delete":
                try:
                    self.catalogue.delete(item["path"], at)
                except actors.NotFound:
                    pass
                continue
            self.catalogue.purge_stale(at)
            self.catalogue.trusted = item.get("trusted", True)
            job = item["job"]
            verdict = forensic_classify(Incident(job, checksum(item["artifact"].encode()), at,
                                                 item.get("packages_compromised", False),
                                                 item.get("worker_node_compromised", False)),
                                        self.ledger, self.catalogue, self.roots)
            self.log.emit(at, "forensics", "VERDICT",
                          f"job={job} origin={verdict.origin.value} accountable={verdict.accountable.value}")
            self.forensic_results.append((job, verdict.origin.value, verdict.accountable.value,
                                          item.get("expect", "")))
        self.catalogue.trusted = True

    def _job_end(self, item: dict) -> int:
        job = item.get("job")
        if job in self.finalized:
            return self.finalized[job]
        return self.now


# -- credential and JDL text for the baseline wire form ------------------------------


def _credential_line(pc: ProxyCredential) -> str:
    return f"PROXY {pc.owner} {pc.t_issued} {pc.t_expires} {pc.serial}"


def _parse_credential(line: str) -> ProxyCredential:
    parts = line.split(" ")
    if len(parts) != 5 or parts[0] != "PROXY":
        raise ValueError("not a credential line")
    return ProxyCredential(parts[1], int(parts[2]), int(parts[3]), serial=int(parts[4]))


# -- objective checks -------------------------------------------------------------------


def _countersigns(ledger: Ledger) -> dict[str, tuple[int, SignedEnvelope, list[Certificate]]]:
    """Final (agent-bound) countersignature per job, from the ledger alone."""
    out = {}
    for r in ledger.find(RecordKind.COUNTERSIGN):
        try:
            env = parse_envelope(r.payload)
        except MalformedEnvelope:
            continue
        if env.jdl.first(PILOT_KEY) is not None:
            out[r.job_id] = (r.time, env, certificates_from_text(r.detail))
    return out


def _finalize_times(ledger: Ledger) -> dict[str, int]:
    return {r.job_id: r.time for r in ledger.find(RecordKind.FINALIZE)}


def judge(sim: Simulation) -> tuple[dict[int, str], list[int], list[str]]:
    """Objective verdicts, observed baseline problems, and per-objective reasons."""
    spec = sim.spec
    reasons: dict[int, list[str]] = {k: [] for k in OBJECTIVES}
    countersigned = _countersigns(sim.ledger)
    finals = _finalize_times(sim.ledger)

    for ex in sim.executions:
        if not ex.envelope_text:
            reasons[1].append(f"job {ex.job} executed without a user-signed request")
            reasons[2].append(f"job {ex.job} executed without a broker countersignature")
        else:
            env = parse_envelope(ex.envelope_text)
            report = verify_envelope(env, sim.roots, ex.time, list(sim.user_certs.values())
                                     + list(sim.broker_certs.values()))
            if not report.valid:
                reasons[2].append(f"job {ex.job} executed with an envelope that does not verify")
            if env.innermost.canonical_bytes() not in sim.originated:
                reasons[1].append(f"job {ex.job} executed a request no user submitted")
            if ex.job not in countersigned or countersigned[ex.job][1].canonical_bytes() != env.canonical_bytes():
                reasons[2].append(f"job {ex.job} executed an s2JDL the ledger does not hold")
        if ex.originator is None:
            reasons[3].append(f"job {ex.job} ran in the name of {ex.account} without their request")
            reasons[9].append(f"job {ex.job} accounted to {ex.account} who did not submit it")
        elif ex.originator != ex.account:
            reasons[9].append(f"job {ex.job} of {ex.originator} accounted to {ex.account}")
        if ex.uid == ex.pilot_uid:
            reasons[5].append(f"job {ex.job} ran as the pilot uid")
            reasons[6].append(f"job {ex.job} shares the pilot uid")
            reasons[9].append(f"job {ex.job} not mapped to a user account")
    uid_of: dict[tuple[str, str], int] = {}
    for ex in sim.executions:
        for (site, acct), uid in uid_of.items():
            if site == ex.site and acct != ex.account and uid == ex.uid:
                reasons[5].append(f"{acct} and {ex.account} share uid {uid}")
        uid_of[(ex.site, ex.account)] = ex.uid

    # submissions accepted in a user's name must come from that user
    for r in sim.ledger.find(RecordKind.SUBMISSION):
        try:
            inner = parse_envelope(r.payload).innermost.canonical_bytes()
        except MalformedEnvelope:
            continue
        if inner not in sim.originated:
            reasons[3].append(f"submission {r.job_id} accepted without the user's request")
    if spec["model"] != "certified":
        cs = sim.cs[sim.entry]
        for job, entry in cs.queue.items():
            if job not in sim.originated_jobs:
                reasons[3].append(f"job {job} accepted in the name of {entry['owner']} without their request")

    # every write in a user's name must be covered by a live concession of one of their jobs
    for path, versions in sorted(sim.catalogue._versions.items()):
        for v in versions:
            if v.written_at < T0 or not path.startswith("/user/"):
                continue
            if not _write_covered(path, v.owner, v.written_at, countersigned, finals):
                reasons[4].append(f"{path} written as {v.owner} at {v.written_at} without a concession")

    for a in sim.attacks:
        if a.succeeded:
            for k in a.objectives:
                reasons[k].append(a.name)

    verdicts = {}
    for k in OBJECTIVES:
        if k not in spec["exercises"]:
            verdicts[k] = NOT_EXERCISED
        else:
            verdicts[k] = VIOLATED if reasons[k] else HELD

    problems = []
    if spec["model"] != "certified":
        if any(ex.originator is None for ex in sim.executions):
            problems.append(1)
        if sim.problem3:
            problems.append(3)
    return verdicts, problems, [f"objective {k}: {r}" for k in OBJECTIVES for r in reasons[k]]


def _write_covered(path: str, owner: str, at: int, countersigned: dict, finals: dict) -> bool:
    for job, (_, env, _) in countersigned.items():
        if env.innermost.jdl.first("User") != owner:
            continue
        if not env.not_before <= at < env.not_after or (job in finals and at >= finals[job]):
            continue
        for c in concessions_of(env):
            if c.privilege is Privilege.WRITE and (c.entity == path or
                                                    f"/user/{owner}/output/{job}/{c.entity}" == path):
                return True
    return False


# -- public entry points -------------------------------------------------------------------


def run_scenario(spec: Union[dict, str], seed: int, params: Optional[dict] = None) -> ScenarioOutcome:
    s = normalize_scenario(spec, params)
    sim = Simulation(s, seed)
    sim.run()
    verdicts, problems, reasons = judge(sim)

    unexpected = []
    expected_violated = set(s["expect"]["violated"])
    for k in OBJECTIVES:
        if k not in s["exercises"]:
            continue
        want = VIOLATED if k in expected_violated else HELD
        if verdicts[k] != want:
            why = [r for r in reasons if r.startswith(f"objective {k}:")]
            unexpected.append(f"objective {k} {verdicts[k]} (expected {want})" + (f": {why[0]}" if why else ""))
    if sorted(problems) != sorted(s["expect"]["problems"]):
        unexpected.append(f"problems {problems} (expected {sorted(s['expect']['problems'])})")
    states = _job_states(sim)
    for job, state in s["expect"].get("states", {}).items():
        if states.get(job) != state:
            unexpected.append(f"job {job} state {states.get(job)} (expected {state})")
    if "executions" in s["expect"] and len(sim.executions) != s["expect"]["executions"]:
        unexpected.append(f"{len(sim.executions)} executions (expected {s['expect']['executions']})")
    for job, origin, acc, want in sim.forensic_results:
        if want and want != f"{origin}/{acc}":
            unexpected.append(f"forensic job {job}: {origin}/{acc} (expected {want})")
    if s["expect"].get("replays_refused") and any(honoured for _, honoured in sim.replays):
        unexpected.append("a replayed token was honoured")

    return ScenarioOutcome(
        name=s["name"], seed=seed, model=s["model"], verdicts=verdicts, problems=problems, unexpected=unexpected,
        log=sim.log.text(), ledger=sim.ledger, events=sim.events, messages_per_job=dict(sorted(
            sim.messages.items(), key=lambda kv: (len(kv[0]), kv[0]))),
        job_states=states, executions=sim.executions, attacks=sim.attacks, replays=sim.replays,
        forensics=sim.forensic_results, trust_roots=sim.roots,
        certificates=list(sim.user_certs.values()) + list(sim.broker_certs.values()), catalogue=sim.catalogue,
    )


def _job_states(sim: Simulation) -> dict[str, str]:
    states = {}
    for cs in sim.cs.values():
        for job, entry in cs.queue.items():
            state = entry.state if isinstance(entry, actors.TaskEntry) else entry["state"]
            if states.get(job) not in (None, JobState.RELAYED.value) and state is JobState.RELAYED:
                continue
            states[job] = state.value
    return dict(sorted(states.items(), key=lambda kv: (len(kv[0]), kv[0])))


def load_scenario(path: Union[str, Path]) -> dict:
    """Read a scenario file, or name a built-in scenario (case-insensitive)."""
    p = Path(path)
    if p.exists():
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedScenario(f"{p}: {exc}") from exc
    wanted = str(path).upper()
    for s in builtin_scenarios():
        if s["name"] == wanted:
            return s
    raise MalformedScenario(f"no scenario file or built-in scenario named {path!r}")


# -- built-in corpus ----------------------------------------------------------------------------

_INPUT = "/catalogue/data/myInputFile"
_SAMPLE_JOB = {"user": "testuser", "executable": "cat", "arguments": ["myInputFile"], "inputs": [_INPUT],
                "outputs": ["stdout", "stderr"]}
_FILES = [{"path": _INPUT, "owner": "testuser", "data": "hello grid\n"}]
_CERTIFIED = [1, 2, 3, 4, 5, 6, 7, 9]
_BASELINE_VIOLATIONS = [1, 2, 3, 4, 7, 9]


def _job(**kw) -> dict:
    job = copy.deepcopy(_SAMPLE_JOB)
    job.update(kw)
    return job


def builtin_scenarios() -> list[dict]:
    return copy.deepcopy([
        {
            "name": "HAPPY_PATH",
            "description": "One job through all protocol steps.",
            "files": _FILES, "jobs": [_job()],
            "exercises": _CERTIFIED, "expect": {"states": {"1": "DONE"}, "executions": 1},
        },
        {
            "name": "TAMPER_IN_TRANSIT",
            "description": "The request is altered on its way to the broker; a second job's s2JDL is altered "
                           "on its way to the pilot.",
            "files": _FILES, "jobs": [_job(), _job(at=10)],
            "adversary": [
                {"action": "TAMPER", "on": "SUBMIT", "nth": 1, "find": "\"cat\"", "replace": "\"rm\""},
                {"action": "TAMPER", "on": "JOB", "nth": 1, "find": "PilotIdentifier", "replace": "PilotIdentifies"},
            ],
            "expect": {"states": {"1": "ERROR"}, "executions": 0},
        },
        {
            "name": "FORGED_BROKER_SIG",
            "description": "An s2JDL countersigned by a key outside the trust roots, and a request signed by "
                           "a counterfeit user certificate.",
            "files": _FILES, "jobs": [_job(), _job(at=10)],
            "adversary": [
                {"action": "FORGE", "on": "JOB", "nth": 1},
                {"action": "FORGE", "on": "SUBMIT", "nth": 2},
            ],
            "expect": {"states": {"1": "ERROR"}, "executions": 0},
        },
        {
            "name": "PILOT_TOKEN_THEFT",
            "description": "A payload captures its pilot's identifier and s2JDL, then tries to submit, to "
                           "fetch a foreign job and to write outside its concessions.",
            "users": ["testuser", "otheruser"],
            "files": _FILES + [{"path": "/catalogue/data/other", "owner": "otheruser", "data": "other\n"}],
            "jobs": [_job(), _job(user="otheruser", inputs=["/catalogue/data/other"], at=2)],
            "sites": [{"name": "siteA", "start_delay": 5}],
            "adversary": [{"action": "STEAL_CREDENTIAL", "on": "JOB", "nth": 1, "delay": 0}],
            "expect": {"states": {"1": "DONE", "2": "DONE"}, "executions": 2},
        },
        {
            "name": "REPLAY_AFTER_DONE",
            "description": "A captured s2JDL is presented again after the job was finalized.",
            "params": {"replay_delay": 100},
            "files": _FILES, "jobs": [_job()],
            "adversary": [{"action": "REPLAY", "on": "JOB", "nth": 1, "after": "FINALIZE",
                           "delay": "$replay_delay"}],
            "expect": {"states": {"1": "DONE"}, "executions": 1, "replays_refused": True},
        },
        {
            "name": "EXPIRED_WINDOWS",
            "description": "A job whose user window lapses before any pilot asks, and an s2JDL delayed past "
                           "its broker window.",
            "files": _FILES,
            "sites": [{"name": "siteA", "start_delay": 900}],
            "jobs": [_job(window=600), _job(at=2000)],
            "adversary": [{"action": "DELAY", "on": "JOB", "nth": 1, "seconds": 86410}],
            "expect": {"states": {"1": "ERROR", "2": "ERROR"}, "executions": 0},
        },
        {
            "name": "SPLIT_JOB",
            "description": "One request split into one sub-job per input file.",
            "files": [{"path": "/data/a", "owner": "testuser", "data": "a\n"},
                      {"path": "/data/b", "owner": "testuser", "data": "b\n"}],
            "split_inputs": 1,
            "jobs": [_job(inputs=["/data/a", "/data/b"], arguments=[])],
            "exercises": _CERTIFIED, "expect": {"states": {"1.1": "DONE", "1.2": "DONE"}, "executions": 2},
        },
        {
            "name": "RELAY_TWO_BROKERS",
            "description": "The first broker relays the request to a partner broker, which mediates it.",
            "brokers": ["myVO", "partnerVO"],
            "files": _FILES, "jobs": [_job()],
            "expect": {"states": {"1": "DONE"}, "executions": 1},
        },
        {
            "name": "PROXY_BASELINE_DIRECT",
            "description": "Proxy credentials shipped with the payload; a credential is stolen from a job "
                           "message and used to submit and write in the owner's name.",
            "model": "proxy_direct",
            "files": _FILES, "jobs": [_job()],
            "adversary": [{"action": "STEAL_CREDENTIAL", "on": "JOB", "nth": 1}],
            "expect": {"violated": _BASELINE_VIOLATIONS, "problems": [1, 3]},
        },
        {
            "name": "PROXY_BASELINE_INDIRECT",
            "description": "Pilots retrieve proxy credentials from a credential store by key; the key is "
                           "stolen from a job message.",
            "model": "proxy_indirect",
            "files": _FILES, "jobs": [_job()],
            "adversary": [{"action": "STEAL_CREDENTIAL", "on": "JOB", "nth": 1}],
            "expect": {"violated": _BASELINE_VIOLATIONS, "problems": [1, 3]},
        },
        {
            "name": "CATALOGUE_FORENSICS",
            "description": "Malicious content traced to signed inputs, before and after deletion.",
            "users": ["testuser", "otheruser"],
            "files": [{"path": _INPUT, "owner": "testuser", "data": "MALWARE-1"},
                      {"path": "/catalogue/data/shared", "owner": "otheruser", "data": "MALWARE-2"}],
            "jobs": [_job(), _job(inputs=["/catalogue/data/shared"], at=5)],
            "forensics": {
                "delete": [{"job": "1", "path": _INPUT, "after": 3600}],
                "incidents": [
                    {"job": "1", "artifact": "MALWARE-1", "after": 86400, "expect": "INTERNAL_I/YES"},
                    {"job": "1", "artifact": "MALWARE-1", "after": 2 * 86400, "trusted": False,
                     "expect": "UNATTRIBUTABLE/INDETERMINATE"},
                    {"job": "2", "artifact": "MALWARE-2", "after": 3 * 86400, "expect": "INTERNAL_I/NO"},
                    {"job": "1", "artifact": "MALWARE-1", "after": 3600 + 7 * 86400 + 60,
                     "expect": "INTERNAL_I/INDETERMINATE"},
                ],
            },
            "expect": {"states": {"1": "DONE", "2": "DONE"}, "executions": 2},
        },
    ])
