"""File formats: review logs, model parameters, learner state and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import SpacedError
from .memory import MemoryState, ModelParams, ReviewEvent, canonical_events, replay
from .policies import DifficultyCursor, PolicyKind

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EVENT_KEYS = ("learner_id", "item_id", "ts", "recall")


@dataclass
class IngestReport:
    events: list[ReviewEvent]
    read: int = 0
    dropped: int = 0
    duplicates: int = 0
    errors: list[str] = field(default_factory=list)

    @property
    def learners(self) -> int:
        return len({ev.learner_id for ev in self.events})

    def counts(self) -> dict:
        return {
            "read": self.read,
            "kept": len(self.events),
            "dropped": self.dropped,
            "duplicates": self.duplicates,
            "learners": self.learners,
        }


def _parse_record(rec: dict) -> ReviewEvent:
    missing = [k for k in EVENT_KEYS if k not in rec]
    if missing:
        raise SpacedError("INVALID_ARGUMENT", f"missing keys {missing}")
    ts, recall = rec["ts"], rec["recall"]
    if isinstance(ts, str):
        ts = int(ts)
    if isinstance(recall, str):
        recall = int(recall)
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise SpacedError("INVALID_ARGUMENT", f"ts must be an integer, got {ts!r}")
    if isinstance(recall, bool) or recall not in (0, 1):
        raise SpacedError("INVALID_ARGUMENT", f"recall must be 0 or 1, got {recall!r}")
    return ReviewEvent(str(rec["learner_id"]), str(rec["item_id"]), ts, recall)


def _records(path: Path, fmt: str):
    with open(path, newline="") as fh:
        if fmt == "csv":
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                yield lineno, row
        else:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, exc
                    continue
                yield lineno, rec if isinstance(rec, dict) else TypeError("record is not an object")


def detect_format(path: Path | str) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "jsonl"


def ingest(path: Path | str, fmt: str | None = None, strict: bool = False) -> IngestReport:
    """Read, validate, sort and de-duplicate a review log.

    Malformed lines are dropped with a diagnostic; with ``strict`` the first
    one raises instead.
    """
    path = Path(path)
    if not path.is_file():
        raise SpacedError("INVALID_ARGUMENT", f"no such file: {path}")
    fmt = fmt or detect_format(path)
    if fmt not in ("jsonl", "csv"):
        raise SpacedError("INVALID_ARGUMENT", f"unknown format {fmt!r}")
    report = IngestReport(events=[])
    raw: list[ReviewEvent] = []
    for lineno, rec in _records(path, fmt):
        report.read += 1
        try:
            if isinstance(rec, Exception):
                raise SpacedError("INVALID_ARGUMENT", str(rec))
            raw.append(_parse_record(rec))
        except (SpacedError, ValueError, TypeError) as exc:
            msg = f"{path}:{lineno}: {exc}"
            if strict:
                raise SpacedError("MALFORMED_INPUT", msg) from None
            log.warning(msg)
            report.errors.append(msg)
            report.dropped += 1
    report.events = canonical_events(raw)
    report.duplicates = len(raw) - len(report.events)
    return report


def event_line(ev: ReviewEvent) -> str:
    return json.dumps({"learner_id": ev.learner_id, "item_id": ev.item_id, "ts": ev.ts, "recall": ev.recall})


def write_events(path: Path | str, events: Iterable[ReviewEvent]) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(event_line(ev) + "\n")


def params_to_dict(params: ModelParams) -> dict:
    return {
        "kind": params.kind.value,
        "alpha": params.alpha,
        "beta": params.beta,
        "initial_rates": {k: params.initial_rates[k] for k in sorted(params.initial_rates)},
    }


def params_from_dict(data: dict) -> ModelParams:
    try:
        return ModelParams(
            data["kind"], float(data["alpha"]), float(data["beta"]),
            {str(k): float(v) for k, v in data["initial_rates"].items()},
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise SpacedError("INVALID_ARGUMENT", f"malformed parameter file: {exc}") from None


def dump_params(params: ModelParams) -> str:
    return json.dumps(params_to_dict(params), sort_keys=True, indent=2) + "\n"


def save_params(path: Path | str, params: ModelParams) -> None:
    Path(path).write_text(dump_params(params))


def load_params(path: Path | str) -> ModelParams:
    return params_from_dict(_load_json(path))


def _load_json(path: Path | str):
    path = Path(path)
    if not path.is_file():
        raise SpacedError("INVALID_ARGUMENT", f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpacedError("INVALID_ARGUMENT", f"{path}: {exc}") from None


@dataclass
class LearnerStateFile:
    learner_id: str
    states: list[MemoryState]
    policy: PolicyKind = PolicyKind.SELECT
    cursor: DifficultyCursor | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise SpacedError("INVALID_ARGUMENT", f"unsupported schema_version {self.schema_version}")
        ids = [s.item_id for s in self.states]
        if len(set(ids)) != len(ids):
            raise SpacedError("INVALID_ARGUMENT", "state file lists an item twice")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "learner_id": self.learner_id,
            "policy": PolicyKind.parse(self.policy).value,
            "states": [
                {
                    "item_id": s.item_id,
                    "n_correct": s.n_correct,
                    "n_incorrect": s.n_incorrect,
                    "last_review_ts": s.last_review_ts,
                }
                for s in self.states
            ],
            "cursor": None if self.cursor is None else {
                "ordering": list(self.cursor.ordering),
                "position": self.cursor.position,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LearnerStateFile":
        try:
            cursor = data.get("cursor")
            return cls(
                learner_id=str(data["learner_id"]),
                states=[MemoryState(**s) for s in data["states"]],
                policy=PolicyKind.parse(data.get("policy", "select")),
                cursor=None if cursor is None else DifficultyCursor(tuple(cursor["ordering"]), int(cursor["position"])),
                schema_version=int(data.get("schema_version", -1)),
            )
        except (KeyError, TypeError) as exc:
            raise SpacedError("INVALID_ARGUMENT", f"malformed learner state: {exc}") from None


def load_state(path: Path | str) -> LearnerStateFile:
    return LearnerStateFile.from_dict(_load_json(path))


def save_state(path: Path | str, state: LearnerStateFile) -> None:
    Path(path).write_text(json.dumps(state.to_dict(), indent=2) + "\n")


def learner_state_from_events(
    learner_id: str, events: Iterable[ReviewEvent], items: Sequence[str], policy: PolicyKind = PolicyKind.SELECT
) -> LearnerStateFile:
    """State for ``learner_id`` after replaying their events; every item in ``items`` is listed."""
    mine = sorted((ev for ev in events if ev.learner_id == learner_id), key=lambda e: (e.ts, e.item_id))
    folded = replay(mine)
    states = [folded.get(item, MemoryState(item)) for item in items]
    return LearnerStateFile(learner_id, states, policy)


def file_digest(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(
    path: Path | str,
    subcommand: str,
    config: dict,
    seed: int | None,
    inputs: Sequence[Path | str] = (),
    outputs: Sequence[Path | str] = (),
) -> dict:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs if os.path.exists(p)},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest
