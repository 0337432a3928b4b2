"""Protocol roles for certified Grid job submission.

Client, CentralServices (broker, task queue, token lifecycle),
ComputingElement, JobAgent (pilot), ExecutionGate (payload identity switch)
and the FileCatalogue. Each actor is a plain single-threaded state machine;
``simnet`` drives them from its event loop, but every method is usable
directly.

The proxy-credential baseline (``ProxyBroker``) sits next to them so the
two delegation models can be run through the same scenarios.
"""

from __future__ import annotations

import base64
import dataclasses
import enum
import hashlib
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from .audit import Ledger, RecordKind
from .delegation import (
    PILOT_KEY,
    Concession,
    Derivative,
    MyProxyService,
    Privilege,
    ProxyCredential,
    concessions_of,
    current_broker,
    gamma_pc,
    phi,
    psi,
    rho,
)
from .envelope import (
    NOT_YET_VALID,
    MalformedEnvelope,
    SignedEnvelope,
    VerificationReport,
    parse_envelope,
    serialize_envelope,
    verify_envelope,
)
from .jdl import Jdl
from .pki import Certificate, Identity, certificate_to_text, common_name

SUBMISSION_TOLERANCE = 300
DEFAULT_RUN_WINDOW = 86400
DEFAULT_STALE_HORIZON = 7 * 86400


def checksum(data: bytes) -> str:
    return hashlib.sha384(data).hexdigest()


def _clean(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


# -- event log -----------------------------------------------------------------


@dataclass(frozen=True)
class LogRecord:
    seq: int
    time: int
    actor: str
    event: str
    detail: str

    def line(self) -> str:
        return f"{self.seq}\t{self.time}\t{self.actor}\t{self.event}\t{_clean(self.detail)}\n"


class EventLog:
    """Append-only line log: ``SEQ<TAB>TIME<TAB>ACTOR<TAB>EVENT<TAB>DETAIL``."""

    def __init__(self):
        self.records: list[LogRecord] = []

    def emit(self, time: int, actor: str, event: str, detail: str = "") -> int:
        seq = len(self.records) + 1
        self.records.append(LogRecord(seq, int(time), actor, event, detail))
        return seq

    def text(self) -> str:
        return "".join(r.line() for r in self.records)

    def events(self, event: Optional[str] = None, actor: Optional[str] = None) -> list[LogRecord]:
        return [r for r in self.records if (event is None or r.event == event) and (actor is None or r.actor == actor)]


# -- errors ----------------------------------------------------------------------


class ActorError(Exception):
    pass


class Rejected(ActorError):
    pass


class RejectedBadSignature(Rejected):
    def __init__(self, message: str, report: Optional[VerificationReport] = None):
        self.report = report
        super().__init__(message)


class RejectedWindow(Rejected):
    pass


class RejectedNotForThisBroker(Rejected):
    pass


class RejectedDuplicate(Rejected):
    pass


class RejectedCredential(Rejected):
    pass


class UnknownPilot(ActorError):
    pass


class NoMatch(ActorError):
    pass


class ForeignJob(ActorError):
    pass


class UnknownJob(ActorError):
    pass


class AlreadyTerminal(ActorError):
    pass


class TokenRefused(ActorError):
    pass


class ConcessionDenied(ActorError):
    def __init__(self, message: str, record: Optional["ExecutionRecord"] = None):
        self.record = record
        super().__init__(message)


class ValidationFailed(ActorError):
    def __init__(self, report: VerificationReport, reason: str = ""):
        self.report = report
        failures = "; ".join(str(f) for f in report.failures)
        super().__init__(reason or failures or "validation failed")


class Refused(ActorError):
    pass


class RefusedInvalid(Refused):
    pass


class RefusedUnmappedSubject(Refused):
    pass


class NotFound(ActorError):
    pass


class ChecksumMismatch(ActorError):
    pass


# -- identity mapping ------------------------------------------------------------


class IdentityMapping:
    """Certificate subject to internal user name, and to a local uid on a site."""

    def __init__(self, first_uid: int = 10001):
        self._names: dict[str, str] = {}
        self._uids: dict[str, int] = {}
        self._next_uid = first_uid

    def register(self, subject: str, username: Optional[str] = None, uid: Optional[int] = None) -> str:
        name = username or common_name(subject)
        self._names[subject] = name
        if uid is None:
            uid = self._next_uid
            self._next_uid += 1
        self._uids[subject] = uid
        return name

    def username(self, subject: str) -> Optional[str]:
        return self._names.get(subject)

    def uid(self, subject: str) -> Optional[int]:
        return self._uids.get(subject)

    def __contains__(self, subject: str) -> bool:
        return subject in self._names


# -- file catalogue --------------------------------------------------------------


@dataclass
class CatalogueEntry:
    path: str
    owner: str
    checksum: str
    altered_at: int
    physical_id: int
    live: bool = True
    shadow: Optional[tuple[str, int]] = None  # (prior checksum, disassociated-at)


@dataclass(frozen=True)
class FileVersion:
    path: str
    owner: str
    checksum: str
    written_at: int
    physical_id: int
    disassociated_at: Optional[int] = None


class FileCatalogue:
    """Logical file catalogue over write-once physical storage.

    Overwrite and delete only disassociate the physical file; a shadow
    record keeps the prior identity, and the data stays recoverable until
    the stale-file horizon passes.
    """

    def __init__(self, stale_horizon: int = DEFAULT_STALE_HORIZON, trusted: bool = True,
                 on_change: Optional[Callable[[str, int, str], None]] = None):
        self.stale_horizon = stale_horizon
        self.trusted = trusted
        self.entries: dict[str, CatalogueEntry] = {}
        self.shadows: list[FileVersion] = []
        self.storage: dict[int, bytes] = {}
        self._versions: dict[str, list[FileVersion]] = {}
        self._next_physical = 1
        self.on_change = on_change

    def _changed(self, action: str, now: int, detail: str) -> None:
        if self.on_change is not None:
            self.on_change(action, now, detail)

    def _disassociate(self, entry: CatalogueEntry, now: int) -> FileVersion:
        versions = self._versions[entry.path]
        old = versions[-1]
        gone = FileVersion(old.path, old.owner, old.checksum, old.written_at, old.physical_id, now)
        versions[-1] = gone
        self.shadows.append(gone)
        return gone

    def write(self, path: str, data: bytes, owner: str, now: int) -> CatalogueEntry:
        digest = checksum(data)
        physical = self._next_physical
        self._next_physical += 1
        self.storage[physical] = bytes(data)
        prior = self.entries.get(path)
        shadow = None
        if prior is not None and prior.live:
            self._disassociate(prior, now)
            shadow = (prior.checksum, now)
        entry = CatalogueEntry(path, owner, digest, now, physical, True, shadow)
        self.entries[path] = entry
        self._versions.setdefault(path, []).append(FileVersion(path, owner, digest, now, physical))
        self._changed("overwrite" if shadow else "write", now, f"{path} owner={owner} checksum={digest}")
        return entry

    def delete(self, path: str, now: int) -> None:
        entry = self.entries.get(path)
        if entry is None or not entry.live:
            raise NotFound(path)
        self._disassociate(entry, now)
        entry.live = False
        entry.shadow = (entry.checksum, now)
        entry.altered_at = now
        self._changed("delete", now, f"{path} checksum={entry.checksum}")

    def read(self, path: str, now: int = 0) -> bytes:
        entry = self.entries.get(path)
        if entry is None or not entry.live:
            raise NotFound(path)
        data = self.storage.get(entry.physical_id)
        if data is None:
            raise NotFound(path)
        if checksum(data) != entry.checksum:
            raise ChecksumMismatch(f"{path}: stored data does not match catalogue checksum")
        return data

    def owner(self, path: str) -> Optional[str]:
        entry = self.entries.get(path)
        return entry.owner if entry is not None and entry.live else None

    def corrupt(self, path: str) -> None:
        """Flip a byte in the backing data of ``path`` (storage compromise)."""
        entry = self.entries[path]
        data = bytearray(self.storage[entry.physical_id] or b"\x00")
        data[0] ^= 0xFF
        self.storage[entry.physical_id] = bytes(data)

    def history(self, path: str) -> list[FileVersion]:
        return list(self._versions.get(path, ()))

    def version_at(self, path: str, t: int) -> Optional[FileVersion]:
        """The version associated with ``path`` at time ``t``."""
        found = None
        for v in self._versions.get(path, ()):
            if v.written_at <= t and (v.disassociated_at is None or t < v.disassociated_at):
                found = v
        return found

    def data_available(self, version: FileVersion, now: int) -> bool:
        if version.physical_id not in self.storage:
            return False
        if version.disassociated_at is None:
            return True
        return now < version.disassociated_at + self.stale_horizon

    def recover(self, path: str, digest: str, now: int) -> bytes:
        """Data of a disassociated version of ``path``, inside the stale horizon."""
        for v in reversed(self._versions.get(path, ())):
            if v.checksum == digest and v.disassociated_at is not None and self.data_available(v, now):
                return self.storage[v.physical_id]
        raise NotFound(f"{path}: no recoverable version with checksum {digest[:16]}")

    def purge_stale(self, now: int) -> int:
        dropped = 0
        for v in self.shadows:
            if now >= v.disassociated_at + self.stale_horizon and v.physical_id in self.storage:
                live = self.entries.get(v.path)
                if live is not None and live.live and live.physical_id == v.physical_id:
                    continue
                del self.storage[v.physical_id]
                dropped += 1
        return dropped

    def to_dict(self) -> dict:
        """JSON-compatible snapshot of versions, stored data and settings."""
        return {
            "stale_horizon": self.stale_horizon,
            "trusted": self.trusted,
            "versions": {path: [dataclasses.asdict(v) for v in versions] for path, versions in self._versions.items()},
            "storage": {str(k): base64.b64encode(v).decode() for k, v in self.storage.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FileCatalogue":
        cat = cls(int(data["stale_horizon"]), bool(data["trusted"]))
        cat.storage = {int(k): base64.b64decode(v) for k, v in data["storage"].items()}
        for path, versions in data["versions"].items():
            history = [FileVersion(**v) for v in versions]
            cat._versions[path] = history
            cat.shadows.extend(v for v in history if v.disassociated_at is not None)
            last = history[-1]
            live = last.disassociated_at is None
            prior = history[-2] if len(history) > 1 else None
            shadow = (prior.checksum, prior.disassociated_at) if live and prior else None
            if not live:
                shadow = (last.checksum, last.disassociated_at)
            cat.entries[path] = CatalogueEntry(path, last.owner, last.checksum, last.written_at, last.physical_id,
                                               live, shadow)
        cat.shadows.sort(key=lambda v: (v.disassociated_at, v.physical_id))
        cat._next_physical = max(cat.storage, default=0) + 1
        return cat


def catalogue_write(catalogue: FileCatalogue, path: str, data: bytes, owner: str, now: int) -> CatalogueEntry:
    return catalogue.write(path, data, owner, now)


def catalogue_read(catalogue: FileCatalogue, path: str, now: int = 0) -> bytes:
    return catalogue.read(path, now)


def catalogue_delete(catalogue: FileCatalogue, path: str, now: int) -> None:
    catalogue.delete(path, now)


# -- task queue ------------------------------------------------------------------


class JobState(str, enum.Enum):
    WAITING = "WAITING"
    ASSIGNED = "ASSIGNED"
    RELAYED = "RELAYED"
    DONE = "DONE"
    ERROR = "ERROR"
    INVALIDATED = "INVALIDATED"


TERMINAL = frozenset({JobState.DONE, JobState.ERROR, JobState.INVALIDATED, JobState.RELAYED})


@dataclass
class TaskEntry:
    job_id: str
    envelope: SignedEnvelope
    certificates: list[Certificate]
    state: JobState = JobState.WAITING
    agent: Optional[str] = None
    s2jdl: Optional[SignedEnvelope] = None
    requirement: Optional[str] = None
    derivatives: tuple[Derivative, ...] = ()
    pilot_requested: bool = False
    token_valid: bool = False

    @property
    def user(self) -> str:
        return self.envelope.innermost.jdl.first("User") or ""


@dataclass(frozen=True)
class PilotRegistration:
    identifier: str
    site: str
    issued_at: int
    authorized: bool = True
    tags: frozenset = frozenset()


def new_pilot_identifier(rng: random.Random) -> str:
    return base64.b64encode(rng.getrandbits(128).to_bytes(16, "big")).decode("ascii")


# -- central services --------------------------------------------------------------


class CentralServices:
    """VO central services: submission checks, task queue, countersigning, token lifecycle."""

    def __init__(self, identity: Identity, certificate: Certificate, trust_roots: Iterable[Certificate], *,
                 log: Optional[EventLog] = None, ledger: Optional[Ledger] = None,
                 catalogue: Optional[FileCatalogue] = None, rng: Optional[random.Random] = None,
                 tolerance: int = SUBMISSION_TOLERANCE, run_window: int = DEFAULT_RUN_WINDOW,
                 split_inputs: Optional[int] = None, relay_to: Optional[str] = None,
                 peer_certificates: Iterable[Certificate] = (), actor_name: str = "cs",
                 job_ids: Optional[Callable[[], str]] = None):
        self.identity = identity
        self.certificate = certificate
        self.trust_roots = list(trust_roots)
        self.log = log if log is not None else EventLog()
        self.ledger = ledger if ledger is not None else Ledger()
        self.catalogue = catalogue if catalogue is not None else FileCatalogue()
        self.rng = rng or random.Random()
        self.tolerance = tolerance
        self.run_window = run_window
        self.split_inputs = split_inputs
        self.relay_to = relay_to
        self.peer_certificates = list(peer_certificates)
        self.name = actor_name
        self.queue: dict[str, TaskEntry] = {}
        self.pilots: dict[str, PilotRegistration] = {}
        self.outbox: list[tuple[str, SignedEnvelope, list[Certificate]]] = []
        self._counter = 0
        self._job_ids = job_ids
        self._seen: set[bytes] = set()

    def _emit(self, now: int, event: str, detail: str = "") -> None:
        self.log.emit(now, self.name, event, detail)

    def _new_job_id(self) -> str:
        if self._job_ids is not None:
            return self._job_ids()
        self._counter += 1
        return str(self._counter)

    # Steps 2-3
    def submit(self, envelope: Union[SignedEnvelope, str, bytes], certificates: Iterable[Certificate], now: int,
               job_id: Optional[str] = None) -> str:
        certificates = list(certificates)
        try:
            env = envelope if isinstance(envelope, SignedEnvelope) else parse_envelope(envelope)
        except MalformedEnvelope as exc:
            self._emit(now, "REJECT", f"malformed submission: {exc}")
            raise RejectedBadSignature(f"malformed submission: {exc}") from exc
        report = verify_envelope(env, self.trust_roots, now, certificates + self.peer_certificates)
        hard = [f for f in report.failures if f.kind != NOT_YET_VALID]
        if hard and not all(f.kind == "Expired" for f in hard):
            self._emit(now, "REJECT", "bad signature: " + "; ".join(str(f) for f in hard))
            raise RejectedBadSignature("submission does not verify", report)
        submitted_at = env.innermost.not_before
        if abs(submitted_at - now) > self.tolerance or any(now >= l.not_after for l in env.layers()) \
                or any(now + self.tolerance < l.not_before for l in env.layers()):
            self._emit(now, "REJECT", f"window [{env.not_before},{env.not_after}) submitted at {submitted_at}")
            raise RejectedWindow(f"submission timestamp {submitted_at} outside tolerance at {now}")
        if env.lookup(PILOT_KEY) is not None:
            self._emit(now, "REJECT", "submission already names an agent")
            raise RejectedNotForThisBroker("a submission cannot carry a PilotIdentifier")
        if current_broker(env) != self.identity.name:
            self._emit(now, "REJECT", f"addressed to {current_broker(env)}")
            raise RejectedNotForThisBroker(f"job is addressed to {current_broker(env)!r}")

        digest = hashlib.sha384(env.innermost.canonical_bytes()).digest()
        if digest in self._seen:
            self._emit(now, "REJECT", "duplicate submission")
            raise RejectedDuplicate("this signed request was already accepted")
        self._seen.add(digest)

        job_id = job_id or self._new_job_id()
        certs = report.envelope.certificates()
        self.ledger.append(RecordKind.SUBMISSION, now, serialize_envelope(env), job_id=job_id,
                           detail="".join(certificate_to_text(c) for c in certs if c is not None))
        self._emit(now, "ACCEPT", f"job={job_id} user={env.innermost.jdl.first('User')} depth={env.depth}")

        if self.relay_to is not None:
            self._relay(job_id, report.envelope, now)
            return job_id

        requirement = env.innermost.jdl.first("Requirements")
        inputs = list(env.innermost.jdl.get("InputFile", ()))
        if self.split_inputs and len(inputs) > self.split_inputs:
            parts = [inputs[i:i + self.split_inputs] for i in range(0, len(inputs), self.split_inputs)]
            for i, part in enumerate(parts, 1):
                sub_id = f"{job_id}.{i}"
                self.queue[sub_id] = TaskEntry(sub_id, report.envelope, certs, requirement=requirement,
                                               derivatives=(Derivative.split(part, i, len(parts)),))
                self._emit(now, "ENQUEUE", f"job={sub_id} split={i}/{len(parts)}")
        else:
            self.queue[job_id] = TaskEntry(job_id, report.envelope, certs, requirement=requirement)
            self._emit(now, "ENQUEUE", f"job={job_id}")
        return job_id

    def _relay(self, job_id: str, env: SignedEnvelope, now: int) -> None:
        lo = max(l.not_before for l in env.layers())
        hi = min(l.not_after for l in env.layers())
        window = (max(now, lo), hi)
        relayed = rho(self.identity, env, (), self.relay_to, window, trust_roots=self.trust_roots, now=now,
                      certificate=self.certificate)
        self.ledger.append(RecordKind.COUNTERSIGN, now, serialize_envelope(relayed), job_id=job_id,
                           detail="".join(certificate_to_text(c) for c in relayed.certificates() if c is not None))
        self.queue[job_id] = TaskEntry(job_id, env, env.certificates(), state=JobState.RELAYED, s2jdl=relayed)
        self.outbox.append((job_id, relayed, [c for c in relayed.certificates() if c is not None]))
        self._emit(now, "RELAY", f"job={job_id} to={common_name(self.relay_to)}")

    def waiting(self, tags: Iterable[str] = ()) -> list[TaskEntry]:
        tags = set(tags)
        return [e for e in self.queue.values()
                if e.state is JobState.WAITING and (e.requirement is None or e.requirement in tags)]

    # Step 4
    def request_pilots(self, site: str, tags: Iterable[str], now: int) -> list[PilotRegistration]:
        tags = frozenset(tags)
        registrations = []
        for entry in self.waiting(tags):
            if entry.pilot_requested:
                continue
            entry.pilot_requested = True
            reg = PilotRegistration(new_pilot_identifier(self.rng), site, now, True, tags)
            self.pilots[reg.identifier] = reg
            registrations.append(reg)
            self._emit(now, "PILOT_REQUEST", f"site={site} for={entry.job_id}")
        return registrations

    def _pilot(self, pilot_id: str, site: Optional[str] = None) -> PilotRegistration:
        reg = self.pilots.get(pilot_id)
        if reg is None or not reg.authorized or (site is not None and reg.site != site):
            raise UnknownPilot("pilot identifier not registered")
        return reg

    # Steps 5-6
    def request_job(self, pilot_id: str, site: str, now: int) -> tuple[str, SignedEnvelope, list[Certificate]]:
        try:
            reg = self._pilot(pilot_id, site)
        except UnknownPilot:
            self._emit(now, "REFUSE_PILOT", f"site={site}")
            raise
        for entry in self.waiting(reg.tags):
            lo = max(l.not_before for l in entry.envelope.layers())
            hi = min(l.not_after for l in entry.envelope.layers())
            if now >= hi:
                entry.state = JobState.ERROR
                self._emit(now, "EXPIRE", f"job={entry.job_id}")
                continue
            window = (max(now, lo), min(now + self.run_window, hi))
            s2 = psi(self.identity, entry.envelope, entry.derivatives, pilot_id, window,
                     trust_roots=self.trust_roots, now=now, certificate=self.certificate)
            entry.state = JobState.ASSIGNED
            entry.agent = pilot_id
            entry.s2jdl = s2
            entry.token_valid = True
            certs = [c for c in s2.certificates() if c is not None]
            self.ledger.append(RecordKind.COUNTERSIGN, now, serialize_envelope(s2), job_id=entry.job_id,
                               detail="".join(certificate_to_text(c) for c in certs))
            self._emit(now, "ASSIGN", f"job={entry.job_id} pilot={pilot_id}")
            return entry.job_id, s2, certs
        self._emit(now, "NO_MATCH", f"pilot={pilot_id}")
        raise NoMatch("no matching waiting job")

    def fetch_job(self, pilot_id: str, job_id: str, now: int) -> tuple[SignedEnvelope, list[Certificate]]:
        """Re-deliver a specific job; only to the pilot it is assigned to."""
        self._pilot(pilot_id)
        entry = self.queue.get(job_id)
        if entry is None or entry.state is not JobState.ASSIGNED or entry.agent != pilot_id:
            self._emit(now, "REFUSE_FETCH", f"job={job_id} pilot={pilot_id}")
            raise ForeignJob(f"job {job_id} is not assigned to this pilot")
        return entry.s2jdl, [c for c in entry.s2jdl.certificates() if c is not None]

    def submit_with_credential(self, credential: object, jdl: Jdl, now: int) -> str:
        """Pilot identifiers and proxy credentials carry no submission right here."""
        self._emit(now, "REJECT", f"unsigned submission with {type(credential).__name__}")
        raise RejectedCredential("submission requires a user-signed job description")

    # token lifecycle
    def _entry_for(self, s2jdl: SignedEnvelope) -> Optional[TaskEntry]:
        wanted = s2jdl.canonical_bytes()
        for entry in self.queue.values():
            if entry.s2jdl is not None and entry.s2jdl.canonical_bytes() == wanted:
                return entry
        return None

    def token_status(self, s2jdl: SignedEnvelope) -> bool:
        entry = self._entry_for(s2jdl)
        return entry is not None and entry.state is JobState.ASSIGNED and entry.token_valid

    def _authorize(self, pilot_id: str, s2jdl: SignedEnvelope, privilege: Privilege, entity: str,
                   now: int) -> TaskEntry:
        self._pilot(pilot_id)
        entry = self._entry_for(s2jdl)
        if entry is None or entry.agent != pilot_id or not self.token_status(s2jdl):
            self._emit(now, "REFUSE_TOKEN", f"{privilege.value} {entity}")
            raise TokenRefused("s2JDL is not an active token for this pilot")
        report = verify_envelope(entry.s2jdl, self.trust_roots, now)
        if not report.valid:
            self._emit(now, "REFUSE_TOKEN", f"{privilege.value} {entity}: {report.failures[0]}")
            raise TokenRefused("token no longer verifies: " + "; ".join(str(f) for f in report.failures))
        granted = concessions_of(entry.s2jdl)
        if not any(c.privilege is privilege and c.entity == entity and c.agent == pilot_id for c in granted):
            self._emit(now, "DENY", f"job={entry.job_id} {privilege.value} {entity}")
            raise ConcessionDenied(f"{privilege.value} {entity} is not granted by job {entry.job_id}")
        return entry

    def read(self, pilot_id: str, s2jdl: SignedEnvelope, path: str, now: int) -> bytes:
        entry = self._authorize(pilot_id, s2jdl, Privilege.READ, path, now)
        data = self.catalogue.read(path, now)
        self._emit(now, "READ", f"job={entry.job_id} {path}")
        return data

    def output_path(self, job_id: str, user: str, name: str) -> str:
        return name if name.startswith("/") else f"/user/{user}/output/{job_id}/{name}"

    def upload(self, pilot_id: str, s2jdl: SignedEnvelope, name: str, data: bytes, now: int) -> str:
        entry = self._authorize(pilot_id, s2jdl, Privilege.WRITE, name, now)
        path = self.output_path(entry.job_id, entry.user, name)
        self.catalogue.write(path, data, entry.user, now)
        self._emit(now, "UPLOAD", f"job={entry.job_id} {path} as={entry.user}")
        return path

    # Step 10
    def finalize(self, job_id: str, outcome: Union[JobState, str], now: int) -> None:
        entry = self.queue.get(job_id)
        if entry is None:
            raise UnknownJob(job_id)
        if entry.state in TERMINAL:
            raise AlreadyTerminal(f"job {job_id} already {entry.state.value}")
        outcome = JobState(outcome)
        if outcome not in (JobState.DONE, JobState.ERROR, JobState.INVALIDATED):
            raise ValueError(f"{outcome.value} is not a final state")
        entry.state = outcome
        entry.token_valid = False
        self.ledger.append(RecordKind.FINALIZE, now, outcome.value, job_id=job_id)
        self._emit(now, "FINALIZE", f"job={job_id} state={outcome.value} token=INVALIDATED")


def client_submit(user: Identity, jdl: Jdl, window: tuple[int, int], cs: CentralServices,
                  certificate: Certificate, now: int) -> str:
    """Steps 1-2: sign the job for ``cs`` and send it with the user certificate."""
    sjdl = phi(user, jdl, cs.identity.subject, window, certificate)
    return cs.submit(serialize_envelope(sjdl), [certificate], now)


def cs_request_pilot(cs: CentralServices, ce: "ComputingElement", now: int) -> list[PilotRegistration]:
    return cs.request_pilots(ce.site, ce.tags, now)


def cs_finalize(cs: CentralServices, job_id: str, outcome: Union[JobState, str], now: int) -> None:
    cs.finalize(job_id, outcome, now)


# -- site side ---------------------------------------------------------------------


class ExecutionGate:
    """Authenticates an s2JDL and maps its submitter to a local uid."""

    def __init__(self, site: str, mapping: IdentityMapping, pilot_uid: int = 500,
                 log: Optional[EventLog] = None):
        self.site = site
        self.mapping = mapping
        self.pilot_uid = pilot_uid
        self.log = log if log is not None else EventLog()

    def authorize(self, s2jdl: SignedEnvelope, user_cert: Certificate, trust_roots: Iterable[Certificate],
                  now: int, token_check: Optional[Callable[[SignedEnvelope], bool]] = None,
                  certificates: Iterable[Certificate] = ()) -> int:
        actor = f"gate@{self.site}"
        report = verify_envelope(s2jdl, trust_roots, now, [user_cert, *certificates])
        if not report.valid:
            self.log.emit(now, actor, "REFUSE", "; ".join(str(f) for f in report.failures))
            raise RefusedInvalid("s2JDL does not verify")
        if s2jdl.depth < 2 or s2jdl.jdl.first(PILOT_KEY) is None:
            self.log.emit(now, actor, "REFUSE", "not a mediated envelope")
            raise RefusedInvalid("envelope is not bound to an agent")
        if token_check is not None and not token_check(s2jdl):
            self.log.emit(now, actor, "REFUSE", "token no longer active")
            raise RefusedInvalid("token has been invalidated")
        uid = self.mapping.uid(user_cert.subject)
        if uid is None:
            self.log.emit(now, actor, "REFUSE", f"unmapped subject {user_cert.subject}")
            raise RefusedUnmappedSubject(user_cert.subject)
        if uid == self.pilot_uid:
            raise RefusedUnmappedSubject("payload would run as the pilot uid")
        self.log.emit(now, actor, "SWITCH", f"subject={user_cert.subject} uid={uid}")
        return uid


def gate_authorize(s2jdl: SignedEnvelope, user_cert: Certificate, trust_roots: Iterable[Certificate], now: int,
                   mapping: IdentityMapping, token_check: Optional[Callable[[SignedEnvelope], bool]] = None,
                   pilot_uid: int = 500) -> int:
    return ExecutionGate("site", mapping, pilot_uid).authorize(s2jdl, user_cert, trust_roots, now, token_check)


def run_executable(executable: str, arguments: tuple[str, ...], inputs: dict[str, bytes],
                   outputs: Iterable[str]) -> dict[str, bytes]:
    """Deterministic stand-in for the payload: ``cat`` concatenates inputs."""
    outputs = list(outputs)
    result = {}
    if executable == "cat":
        body = b"".join(inputs[k] for k in sorted(inputs))
    else:
        h = hashlib.sha384(executable.encode() + b"\0" + "\0".join(arguments).encode())
        for k in sorted(inputs):
            h.update(inputs[k])
        body = f"{executable} {' '.join(arguments)}: {h.hexdigest()[:16]}\n".encode()
    for name in outputs:
        result[name] = body if name == outputs[0] else b""
    return result


@dataclass
class JobBehaviour:
    """Extra actions a (possibly malicious) payload performs while running."""

    extra_reads: tuple[str, ...] = ()
    extra_writes: tuple[tuple[str, bytes], ...] = ()
    external_fetches: tuple[bytes, ...] = ()
    steal_pilot_token: bool = False
    steal_credential: bool = False


@dataclass
class ExecutionRecord:
    job_id: str
    pilot_id: str
    site: str
    user: str
    subject: str
    uid: int
    status: str
    reads: list[str] = field(default_factory=list)
    writes: list[str] = field(default_factory=list)
    denied: list[str] = field(default_factory=list)
    external: list[str] = field(default_factory=list)
    s2jdl_text: str = ""


class ComputingElement:
    def __init__(self, site: str, tags: Iterable[str] = (), gate: Optional[ExecutionGate] = None,
                 log: Optional[EventLog] = None, pilot_uid: int = 500):
        self.site = site
        self.tags = frozenset(tags) | {site}
        self.gate = gate
        self.log = log if log is not None else EventLog()
        self.pilot_uid = pilot_uid
        self.agents: list[JobAgent] = []

    def start_pilot(self, registration: PilotRegistration, broker_certificates: Iterable[Certificate],
                    ledger: Optional[Ledger] = None, now: Optional[int] = None) -> "JobAgent":
        agent = JobAgent(registration, self, list(broker_certificates), ledger)
        self.agents.append(agent)
        when = registration.issued_at if now is None else now
        self.log.emit(when, f"ce@{self.site}", "PILOT_START", f"pilot={registration.identifier}")
        return agent


class JobAgent:
    """Pilot job: fetches s2JDLs, validates them and runs the payload within its concessions."""

    def __init__(self, registration: PilotRegistration, ce: ComputingElement,
                 broker_certificates: list[Certificate], ledger: Optional[Ledger] = None):
        self.registration = registration
        self.ce = ce
        self.broker_certificates = broker_certificates
        self.ledger = ledger
        self.site_log: list[str] = []
        self.stolen: list[str] = []

    @property
    def identifier(self) -> str:
        return self.registration.identifier

    @property
    def actor(self) -> str:
        return f"ja@{self.ce.site}"

    def request_job(self, cs: CentralServices, now: int) -> tuple[str, SignedEnvelope, list[Certificate]]:
        return cs.request_job(self.identifier, self.ce.site, now)

    def validate(self, s2jdl: Union[SignedEnvelope, str], certificates: Iterable[Certificate],
                 trust_roots: Iterable[Certificate], now: int) -> SignedEnvelope:
        """Step 7; raises ValidationFailed."""
        log = self.ce.log
        report = verify_envelope(s2jdl, trust_roots, now, [*certificates, *self.broker_certificates])
        if not report.valid:
            log.emit(now, self.actor, "REFUSE", "; ".join(str(f) for f in report.failures))
            raise ValidationFailed(report)
        env = report.envelope
        if env.depth < 2 or env.jdl.first(PILOT_KEY) != self.identifier:
            log.emit(now, self.actor, "REFUSE", "s2JDL is not bound to this pilot")
            raise ValidationFailed(report, "s2JDL is not bound to this pilot")
        return env

    def validate_and_run(self, s2jdl: Union[SignedEnvelope, str], certificates: Iterable[Certificate],
                         trust_roots: Iterable[Certificate], now: int, cs: CentralServices,
                         job_id: str = "", behaviour: Optional[JobBehaviour] = None) -> ExecutionRecord:
        certificates = list(certificates)
        trust_roots = list(trust_roots)
        log = self.ce.log
        env = self.validate(s2jdl, certificates, trust_roots, now)
        text = serialize_envelope(env)
        user_cert = env.innermost.signer_certificate
        job = env.innermost.jdl
        user = job.first("User") or ""
        # site-side record of the retrieved job
        self.site_log.append(text)
        log.emit(now, self.actor, "SITE_LOG", f"job={job_id} subject={user_cert.subject} pilot={self.identifier}")

        if self.ce.gate is not None:
            uid = self.ce.gate.authorize(env, user_cert, trust_roots, now, token_check=cs.token_status)
        else:
            uid = self.ce.pilot_uid
        record = ExecutionRecord(job_id, self.identifier, self.ce.site, user, user_cert.subject, uid, "RUNNING",
                                 s2jdl_text=text)
        behaviour = behaviour or JobBehaviour()
        if behaviour.steal_pilot_token:
            self.stolen.append(self.identifier)

        granted = concessions_of(env)
        inputs = {}
        try:
            for c in sorted(granted):
                if c.privilege is Privilege.READ:
                    inputs[c.entity] = cs.read(self.identifier, env, c.entity, now)
                    record.reads.append(c.entity)
            for path in behaviour.extra_reads:
                cs.read(self.identifier, env, path, now)
                record.reads.append(path)
            outputs = run_executable(job.first("Executable") or "", tuple(job.get("Arguments", ())), inputs,
                                     job.get("Output", ()))
            for blob in behaviour.external_fetches:
                record.external.append(checksum(blob))
            for name, data in behaviour.extra_writes:
                cs.upload(self.identifier, env, name, data, now)
                record.writes.append(name)
            for name, data in outputs.items():
                record.writes.append(cs.upload(self.identifier, env, name, data, now))
        except (ConcessionDenied, TokenRefused, NotFound, ChecksumMismatch) as exc:
            record.status = "ERROR"
            record.denied.append(str(exc))
            log.emit(now, self.actor, "JOB_ERROR", f"job={job_id} {type(exc).__name__}: {exc}")
            self._site_record(record, now)
            if isinstance(exc, ConcessionDenied):
                exc.record = record
            raise
        record.status = "DONE"
        log.emit(now, self.actor, "JOB_DONE", f"job={job_id} uid={uid}")
        self._site_record(record, now)
        return record

    def _site_record(self, record: ExecutionRecord, now: int) -> None:
        if self.ledger is None:
            return
        detail = (f"subject={record.subject}\nuid={record.uid}\npilot={record.pilot_id}\nstatus={record.status}\n"
                  f"external={','.join(record.external)}\n")
        self.ledger.append(RecordKind.SITE_LOG, now, record.s2jdl_text, job_id=record.job_id, detail=detail)


def ja_request_job(agent: JobAgent, cs: CentralServices, now: int):
    return agent.request_job(cs, now)


def ja_validate_and_run(agent: JobAgent, s2jdl, certificates, trust_roots, now, cs, job_id="", behaviour=None):
    return agent.validate_and_run(s2jdl, certificates, trust_roots, now, cs, job_id, behaviour)


# -- proxy-credential baseline -----------------------------------------------------


class ProxyBroker:
    """Central services that propagate user proxy credentials to pilots.

    ``mode="direct"`` keeps the credentials in the VO and ships them with the
    payload; ``mode="indirect"`` keeps only MyProxy keys and the pilot
    retrieves the credential itself.
    """

    def __init__(self, mode: str, *, log: Optional[EventLog] = None, catalogue: Optional[FileCatalogue] = None,
                 rng: Optional[random.Random] = None, myproxy: Optional[MyProxyService] = None,
                 actor_name: str = "cs"):
        if mode not in ("direct", "indirect"):
            raise ValueError(f"unknown propagation mode {mode!r}")
        self.mode = mode
        self.log = log if log is not None else EventLog()
        self.catalogue = catalogue if catalogue is not None else FileCatalogue()
        self.rng = rng or random.Random()
        self.myproxy = myproxy or MyProxyService(self.rng)
        self.name = actor_name
        self.queue: dict[str, dict] = {}
        self._counter = 0

    def submit_with_credential(self, credential: ProxyCredential, jdl: Jdl, now: int) -> str:
        if Privilege.SUBMIT not in gamma_pc(credential, now):
            self.log.emit(now, self.name, "REJECT", f"credential of {credential.owner} not valid")
            raise RejectedCredential("credential not valid")
        self._counter += 1
        job_id = str(self._counter)
        if self.mode == "direct":
            handle = credential
        else:
            handle = self.myproxy.store(credential, now)
        self.queue[job_id] = {"jdl": jdl, "owner": credential.owner, "handle": handle, "state": JobState.WAITING}
        self.log.emit(now, self.name, "ACCEPT", f"job={job_id} user={credential.owner} via=proxy")
        return job_id

    def request_job(self, pilot_id: str, now: int):
        for job_id, entry in self.queue.items():
            if entry["state"] is JobState.WAITING:
                entry["state"] = JobState.ASSIGNED
                self.log.emit(now, self.name, "ASSIGN", f"job={job_id} pilot={pilot_id} propagation={self.mode}")
                return job_id, entry["jdl"], entry["handle"]
        raise NoMatch("no matching waiting job")

    def credential_for(self, handle, now: int, requester: str = "") -> ProxyCredential:
        if isinstance(handle, ProxyCredential):
            return handle
        return self.myproxy.retrieve(handle, now, requester)

    def write(self, credential: ProxyCredential, path: str, data: bytes, now: int) -> str:
        if Privilege.WRITE not in gamma_pc(credential, now, entity=path):
            raise RejectedCredential("credential grants no write access")
        self.catalogue.write(path, data, credential.owner, now)
        self.log.emit(now, self.name, "UPLOAD", f"{path} as={credential.owner} via=proxy")
        return path

    def read(self, credential: ProxyCredential, path: str, now: int) -> bytes:
        if Privilege.READ not in gamma_pc(credential, now, entity=path):
            raise RejectedCredential("credential grants no read access")
        return self.catalogue.read(path, now)

    def finalize(self, job_id: str, outcome, now: int) -> None:
        entry = self.queue[job_id]
        if entry["state"] in TERMINAL:
            raise AlreadyTerminal(job_id)
        entry["state"] = JobState(outcome)
        self.log.emit(now, self.name, "FINALIZE", f"job={job_id} state={entry['state'].value} credential=STILL_VALID")


def output_concessions(concessions: Iterable[Concession]) -> set[str]:
    return {c.entity for c in concessions if c.privilege is Privilege.WRITE}
