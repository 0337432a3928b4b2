"""Hash-chained evidence ledger and forensic attribution of incidents."""

from __future__ import annotations

import base64
import enum
import hashlib
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, Optional

from .delegation import Privilege, concessions_of
from .envelope import MalformedEnvelope, parse_envelope, verify_envelope
from .pki import Certificate, PkiError, certificates_from_text

if TYPE_CHECKING:
    from .actors import FileCatalogue

GENESIS = "0" * 96


class RecordKind(str, enum.Enum):
    SUBMISSION = "SUBMISSION"
    COUNTERSIGN = "COUNTERSIGN"
    SITE_LOG = "SITE_LOG"
    FINALIZE = "FINALIZE"
    CATALOGUE_CHANGE = "CATALOGUE_CHANGE"


class AuditError(Exception):
    pass


class LedgerBroken(AuditError):
    pass


class UnknownJob(AuditError):
    pass


@dataclass(frozen=True)
class AuditRecord:
    record_id: int
    kind: RecordKind
    time: int
    job_id: str
    payload: str
    detail: str
    prev_hash: str
    hash: str = ""

    def body(self) -> bytes:
        return "\x1f".join(
            (str(self.record_id), RecordKind(self.kind).value, str(self.time), self.job_id,
             self.payload, self.detail, self.prev_hash)
        ).encode("utf-8")

    def compute_hash(self) -> str:
        return hashlib.sha384(self.body()).hexdigest()


class Ledger:
    """Append-only, single-writer record chain."""

    def __init__(self, records: Iterable[AuditRecord] = ()):
        self.records: list[AuditRecord] = list(records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def head(self) -> str:
        return self.records[-1].hash if self.records else GENESIS

    def append(self, kind: RecordKind | str, time: int, payload: str = "", *, job_id: str = "", detail: str = "") -> int:
        record = AuditRecord(len(self.records), RecordKind(kind), int(time), job_id, payload, detail, self.head)
        record = replace(record, hash=record.compute_hash())
        self.records.append(record)
        return record.record_id

    def verify(self) -> bool:
        prev = GENESIS
        for index, record in enumerate(self.records):
            if record.record_id != index or record.prev_hash != prev or record.compute_hash() != record.hash:
                return False
            prev = record.hash
        return True

    def find(self, kind: RecordKind | str, job_id: Optional[str] = None) -> list[AuditRecord]:
        kind = RecordKind(kind)
        return [r for r in self.records if r.kind is kind and (job_id is None or r.job_id == job_id)]

    def snapshot(self, upto: int) -> "Ledger":
        return Ledger(self.records[:upto])

    # text export: one record per line, free-text fields base64 encoded
    def to_text(self) -> str:
        lines = []
        for r in self.records:
            lines.append("\t".join((
                str(r.record_id), r.kind.value, str(r.time), r.job_id or "-",
                _b64(r.payload), _b64(r.detail), r.prev_hash, r.hash,
            )))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text: str) -> "Ledger":
        records = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 8:
                raise AuditError(f"line {n}: expected 8 fields, got {len(parts)}")
            rid, kind, time, job, payload, detail, prev, digest = parts
            try:
                records.append(AuditRecord(int(rid), RecordKind(kind), int(time), "" if job == "-" else job,
                                           _unb64(payload), _unb64(detail), prev, digest))
            except ValueError as exc:
                raise AuditError(f"line {n}: {exc}") from exc
        return cls(records)


def _b64(text: str) -> str:
    return base64.b64encode(text.encode("utf-8")).decode("ascii") if text else "-"


def _unb64(text: str) -> str:
    return "" if text == "-" else base64.b64decode(text, validate=True).decode("utf-8")


def ledger_append(ledger: Ledger, record_kind, time, payload="", **kw) -> int:
    return ledger.append(record_kind, time, payload, **kw)


def ledger_verify(ledger: Ledger) -> bool:
    return ledger.verify()


# -- forensics ------------------------------------------------------------------


class Origin(str, enum.Enum):
    INTERNAL_I = "INTERNAL_I"
    INTERNAL_II = "INTERNAL_II"
    INTERNAL_III = "INTERNAL_III"
    EXTERNAL = "EXTERNAL"
    UNATTRIBUTABLE = "UNATTRIBUTABLE"


class Accountable(str, enum.Enum):
    YES = "YES"
    NO = "NO"
    INDETERMINATE = "INDETERMINATE"


@dataclass(frozen=True)
class Incident:
    job_id: str
    artifact_checksum: str
    time: int
    packages_compromised: bool = False
    worker_node_compromised: bool = False


@dataclass(frozen=True)
class ForensicVerdict:
    incident: str
    origin: Origin
    accountable: Accountable
    evidence: tuple[int, ...] = ()
    reason: str = ""

    def text(self) -> str:
        return (
            f"incident: {self.incident}\n"
            f"origin: {self.origin.value}\n"
            f"user-accountable: {self.accountable.value}\n"
            f"evidence: {','.join(map(str, self.evidence)) or '-'}\n"
            f"reason: {self.reason}\n"
        )


def _parent(job_id: str) -> str:
    return job_id.split(".", 1)[0]


def _certs(detail: str) -> list[Certificate]:
    try:
        return certificates_from_text(detail)
    except PkiError:
        return []


def forensic_classify(incident: Incident, ledger: Ledger, catalogue: "FileCatalogue",
                      trust_roots: Iterable[Certificate]) -> ForensicVerdict:
    """Attribute a malicious artifact observed after ``incident.job_id`` ran.

    The verdict depends only on the ledger, the catalogue and the incident.
    """
    if not ledger.verify():
        raise LedgerBroken("ledger hash chain does not verify")
    trust_roots = list(trust_roots)
    job = incident.job_id
    submissions = ledger.find(RecordKind.SUBMISSION, _parent(job))
    countersigns = ledger.find(RecordKind.COUNTERSIGN, job)
    if not submissions or not countersigns:
        raise UnknownJob(f"no submission and countersignature recorded for job {job!r}")
    submission, countersign = submissions[0], countersigns[-1]
    evidence = [submission.record_id, countersign.record_id]

    def verdict(origin, accountable, reason, extra=()):
        return ForensicVerdict(job, Origin(origin), Accountable(accountable), tuple(evidence) + tuple(extra), reason)

    if not catalogue.trusted:
        return verdict(Origin.UNATTRIBUTABLE, Accountable.INDETERMINATE,
                       "file catalogue is not trusted; counterfeit evidence cannot be excluded")

    try:
        envelope = parse_envelope(countersign.payload)
        submitted = parse_envelope(submission.payload)
    except MalformedEnvelope as exc:
        return verdict(Origin.UNATTRIBUTABLE, Accountable.INDETERMINATE, f"recorded envelope malformed: {exc}")
    certs = _certs(countersign.detail) + _certs(submission.detail)
    report = verify_envelope(envelope, trust_roots, countersign.time, certs)
    if not report.valid or envelope.innermost.canonical_bytes() != submitted.innermost.canonical_bytes():
        return verdict(Origin.UNATTRIBUTABLE, Accountable.INDETERMINATE,
                       "no verifiable user signature chain for the executed job")

    if incident.packages_compromised:
        return verdict(Origin.INTERNAL_II, Accountable.INDETERMINATE, "software packages compromised")
    if incident.worker_node_compromised:
        return verdict(Origin.INTERNAL_III, Accountable.INDETERMINATE, "worker node compromised")

    site_logs = ledger.find(RecordKind.SITE_LOG, job)
    for record in site_logs:
        fetched = _detail_field(record.detail, "external")
        if incident.artifact_checksum in fetched:
            return verdict(Origin.EXTERNAL, Accountable.INDETERMINATE,
                           "artifact was retrieved from a third-party source at run time", [record.record_id])

    user = envelope.innermost.jdl.first("User")
    executed_at = site_logs[-1].time if site_logs else countersign.time
    evidence.extend(r.record_id for r in site_logs)
    inputs = sorted(c.entity for c in concessions_of(envelope) if c.privilege is Privilege.READ)
    unrecoverable = []
    for path in inputs:
        version = catalogue.version_at(path, executed_at)
        if version is None:
            unrecoverable.append(path)
            continue
        available = catalogue.data_available(version, incident.time)
        if version.checksum != incident.artifact_checksum:
            if not available:
                unrecoverable.append(path)
            continue
        how = "live entry" if version.disassociated_at is None else "shadow entry"
        if not available:
            return verdict(Origin.INTERNAL_I, Accountable.INDETERMINATE,
                           f"{path}: matching {how} is past the stale-file horizon; data not recoverable")
        if version.owner == user:
            return verdict(Origin.INTERNAL_I, Accountable.YES,
                           f"{path}: signed input owned by {user} matches the artifact ({how})")
        return verdict(Origin.INTERNAL_I, Accountable.NO,
                       f"{path}: signed input was uploaded by {version.owner}, not {user} ({how})")
    if unrecoverable:
        return verdict(Origin.UNATTRIBUTABLE, Accountable.INDETERMINATE,
                       "referenced inputs not recoverable: " + ", ".join(unrecoverable))
    return verdict(Origin.UNATTRIBUTABLE, Accountable.NO,
                   "artifact matches none of the job's signed inputs")


def _detail_field(detail: str, name: str) -> list[str]:
    for line in detail.splitlines():
        key, _, value = line.partition("=")
        if key == name:
            return [v for v in value.split(",") if v]
    return []
