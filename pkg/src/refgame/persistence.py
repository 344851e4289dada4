"""Run directories, manifests with content digests, CSV export, and replay.

A simulation persists as a self-contained directory: manifest (config,
seeds, versions, file digests), an events log (one structured record per
interaction and backend call), per-block vocabulary snapshots, and a
metrics CSV whose rows all carry a schema version. Any completed run can be
replayed offline: the metrics are recomputed from the logged interactions
and snapshots and compared against the stored CSV.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .backend import EventLog
from .chains import GenerationRecord
from .domain import Stimulus, Vocabulary, split_for_train
from .engine import (
    CommunicationResult,
    GuessingRecord,
    GuessingResult,
    InteractionRecord,
    LabellingRecord,
    LabellingResult,
    MetricRow,
    RunConfig,
    SimulationResult,
    TestingRecord,
    TestingResult,
    compute_metric_rows,
)
from .metrics import normalized_levenshtein

SCHEMA_VERSION = 1

METRICS_COLUMNS = [
    "schema_version",
    "block",
    "round",
    "agent",
    "topsim_z",
    "topsim_p",
    "topsim_r",
    "permutations",
    "mantel_method",
    "ngram_diversity",
    "mean_signal_length",
    "unique_signal_ratio",
    "perc_com",
    "gen_score",
    "gen_score_pairs",
    "accuracy",
    "mean_levenshtein",
    "degenerate",
]

CHAIN_COLUMNS = [
    "schema_version",
    "chain",
    "generation",
    "donor",
    "learnability",
    "perc_com",
    "topsim_z",
    "topsim_p",
    "ngram_diversity",
    "unique_signal_ratio",
]

GEN_SCORE_PAIRS = "cross"  # pair definition used throughout, see README

# Numeric fields compared during replay verification.
_REPLAY_NUMERIC = [
    "topsim_z",
    "topsim_p",
    "topsim_r",
    "ngram_diversity",
    "mean_signal_length",
    "unique_signal_ratio",
    "perc_com",
    "gen_score",
    "accuracy",
    "mean_levenshtein",
]


class PersistenceError(Exception):
    pass


class DigestMismatch(PersistenceError):
    pass


class SchemaVersionError(PersistenceError):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metric_row_to_csv(row: MetricRow) -> dict:
    report = row.report
    topsim = report.topsim
    return {
        "schema_version": str(SCHEMA_VERSION),
        "block": row.block,
        "round": _fmt(row.round),
        "agent": row.agent_id,
        "topsim_z": _fmt(topsim.z_score if topsim else None),
        "topsim_p": _fmt(topsim.p_value if topsim else None),
        "topsim_r": _fmt(topsim.observed_r if topsim else None),
        "permutations": _fmt(topsim.permutations if topsim else None),
        "mantel_method": topsim.method if topsim else "",
        "ngram_diversity": _fmt(report.ngram_diversity),
        "mean_signal_length": _fmt(report.mean_signal_length),
        "unique_signal_ratio": _fmt(report.unique_signal_ratio),
        "perc_com": _fmt(report.perc_com),
        "gen_score": _fmt(report.gen_score),
        "gen_score_pairs": GEN_SCORE_PAIRS if report.gen_score is not None else "",
        "accuracy": _fmt(row.accuracy),
        "mean_levenshtein": _fmt(row.mean_levenshtein),
        "degenerate": "1" if report.degenerate else "0",
    }


def write_csv(path: str | Path, columns: list[str], rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        version = row.get("schema_version", "")
        if version.split(".")[0] != str(SCHEMA_VERSION):
            raise SchemaVersionError(f"unsupported schema version {version!r} in {path}")
    return rows


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config: dict
    master_seed: int
    artifact_version: str = __version__
    schema_version: int = SCHEMA_VERSION
    status: str = "complete"
    started: float = 0.0
    finished: float = 0.0
    files: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def save(self, run_dir: str | Path) -> None:
        path = Path(run_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunManifest":
        path = Path(run_dir) / "manifest.json"
        if not path.exists():
            raise PersistenceError(f"no manifest in {run_dir}")
        return cls(**json.loads(path.read_text()))

    def verify_digests(self, run_dir: str | Path) -> None:
        base = Path(run_dir)
        for name, digest in self.files.items():
            target = base / name
            if not target.exists():
                raise DigestMismatch(f"missing file {name}")
            actual = file_digest(target)
            if actual != digest:
                raise DigestMismatch(f"digest mismatch for {name}: {actual} != {digest}")


def config_dict(config: RunConfig) -> dict:
    return asdict(config)


def _vocab_paths(result: SimulationResult) -> dict[str, Vocabulary]:
    paths = {"vocab/initial.vocab": result.initial_language}
    for agent_id in result.agent_ids:
        paths[f"vocab/learned_{agent_id}.vocab"] = result.labelling[agent_id].learned
    for agent_id in result.agent_ids:
        for round_number, vocab in enumerate(result.communication.round_vocabs[agent_id], start=1):
            paths[f"vocab/round{round_number}_{agent_id}.vocab"] = vocab
    for agent_id in result.agent_ids:
        testing = Vocabulary(
            (
                _entry(record.stimulus, record.signal)
                for record in result.testing[agent_id].records
                if not record.failed
            )
        )
        paths[f"vocab/testing_{agent_id}.vocab"] = testing
    return paths


def _entry(stimulus, signal):
    from .domain import VocabularyEntry

    return VocabularyEntry(stimulus, signal, 0)


def save_simulation(
    result: SimulationResult,
    run_dir: str | Path,
    event_log: EventLog | None = None,
    started: float | None = None,
) -> RunManifest:
    """Persist a completed simulation: vocab snapshots, metrics CSV, manifest.

    The events file must already live at run_dir/events.jsonl (the engine
    writes it live through the EventLog); it is digested like every other
    artifact.
    """
    base = Path(run_dir)
    (base / "vocab").mkdir(parents=True, exist_ok=True)
    for rel_path, vocab in _vocab_paths(result).items():
        vocab.save(base / rel_path)
    write_csv(
        base / "metrics.csv",
        METRICS_COLUMNS,
        [metric_row_to_csv(row) for row in result.metric_rows],
    )
    files = {}
    for path in sorted(base.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[path.relative_to(base).as_posix()] = file_digest(path)
    manifest = RunManifest(
        config=config_dict(result.config),
        master_seed=result.config.master_seed,
        status="complete" if result.complete else "incomplete",
        started=started or time.time(),
        finished=time.time(),
        files=files,
        extra={"agent_ids": list(result.agent_ids)},
    )
    manifest.save(base)
    return manifest


def save_partial(
    partial: dict,
    config: RunConfig,
    run_dir: str | Path,
    error: str,
    started: float | None = None,
) -> RunManifest:
    """Persist whatever an aborted simulation completed, marked incomplete.

    ``partial`` is the payload of SimulationAborted: initial language and
    split always, plus the block results that finished before the failure.
    """
    base = Path(run_dir)
    (base / "vocab").mkdir(parents=True, exist_ok=True)
    partial["initial_language"].save(base / "vocab" / "initial.vocab")
    for agent_id, labelling in partial.get("labelling", {}).items():
        labelling.learned.save(base / "vocab" / f"learned_{agent_id}.vocab")
    communication = partial.get("communication")
    if communication is not None:
        for agent_id, vocabs in communication.round_vocabs.items():
            for round_number, vocab in enumerate(vocabs, start=1):
                vocab.save(base / "vocab" / f"round{round_number}_{agent_id}.vocab")
    files = {}
    for path in sorted(base.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[path.relative_to(base).as_posix()] = file_digest(path)
    manifest = RunManifest(
        config=config_dict(config),
        master_seed=config.master_seed,
        status="incomplete",
        started=started or time.time(),
        finished=time.time(),
        files=files,
        extra={"error": error, "completed_blocks": sorted(set(partial) - {"split", "initial_language"})},
    )
    manifest.save(base)
    return manifest


def _stimulus(attrs) -> Stimulus:
    shape, colour, amount = attrs
    return Stimulus(int(shape), str(colour), int(amount))


def _load_events(run_dir: Path) -> list[dict]:
    events_path = run_dir / "events.jsonl"
    if not events_path.exists():
        raise PersistenceError(f"no events log in {run_dir}")
    return EventLog.read(events_path)


def load_run_for_replay(run_dir: str | Path):
    """Rebuild the block results of a persisted run from its directory alone."""
    base = Path(run_dir)
    manifest = RunManifest.load(base)
    if manifest.status != "complete":
        raise PersistenceError(
            f"run is marked {manifest.status!r}; only completed runs replay"
        )
    manifest.verify_digests(base)
    config = RunConfig(**manifest.config)
    agent_ids = tuple(manifest.extra["agent_ids"])
    events = _load_events(base)

    initial = Vocabulary.load(base / "vocab" / "initial.vocab")
    split = split_for_train(initial.stimuli())

    guessing = {}
    labelling = {}
    testing = {}
    for agent_id in agent_ids:
        guess_records = [
            GuessingRecord(
                stimulus=_stimulus(e["stimulus"]),
                candidates=tuple(e["candidates"]),
                chosen_index=e["chosen"],
                correct=e["correct"],
                failure_mode=e.get("failure_mode", "none"),
            )
            for e in events
            if e["kind"] == "guess" and e["agent"] == agent_id
        ]
        guessing[agent_id] = GuessingResult(agent_id=agent_id, records=guess_records)
        label_records = [
            LabellingRecord(
                stimulus=_stimulus(e["stimulus"]),
                truth=e["truth"],
                produced=e["produced"],
                distance=normalized_levenshtein(e["truth"], e["produced"]),
                failed=e.get("failed", False),
            )
            for e in events
            if e["kind"] == "label" and e["agent"] == agent_id
        ]
        labelling[agent_id] = LabellingResult(
            agent_id=agent_id,
            records=label_records,
            learned=Vocabulary.load(base / "vocab" / f"learned_{agent_id}.vocab"),
        )
        test_records = [
            TestingRecord(
                stimulus=_stimulus(e["stimulus"]),
                signal=e["signal"],
                failed=e.get("failed", False),
                extrapolated=e.get("extrapolated", False),
            )
            for e in events
            if e["kind"] == "testing" and e["agent"] == agent_id
        ]
        testing[agent_id] = TestingResult(agent_id=agent_id, records=test_records)

    interactions = [
        InteractionRecord(
            round=e["round"],
            task_index=e["task"],
            speaker_id=e["speaker"],
            listener_id=e["listener"],
            stimulus=_stimulus(e["stimulus"]),
            signal=e["signal"],
            candidates=tuple(_stimulus(c) for c in e["candidates"]),
            chosen_index=e["chosen"],
            success=e["success"],
            failure_mode=e.get("failure_mode", "none"),
        )
        for e in events
        if e["kind"] == "interaction"
    ]
    rounds = config.rounds
    perc_com = []
    for round_number in range(1, rounds + 1):
        in_round = [r for r in interactions if r.round == round_number]
        if not in_round:
            raise PersistenceError(f"no interactions logged for round {round_number}")
        perc_com.append(sum(r.success for r in in_round) / len(in_round))
    round_vocabs = {
        agent_id: [
            Vocabulary.load(base / "vocab" / f"round{n}_{agent_id}.vocab")
            for n in range(1, rounds + 1)
        ]
        for agent_id in agent_ids
    }
    communication = CommunicationResult(
        records=interactions, perc_com=perc_com, round_vocabs=round_vocabs
    )
    return manifest, config, agent_ids, split, initial, guessing, labelling, communication, testing


@dataclass
class ReplayMismatch:
    block: str
    round: str
    agent: str
    column: str
    stored: str
    recomputed: str


@dataclass
class ReplayReport:
    ok: bool
    mismatches: list[ReplayMismatch]
    rows_checked: int


def replay_run(run_dir: str | Path, tolerance: float = 1e-9) -> ReplayReport:
    """Offline verification: digests, then metric recomputation from the
    event log and vocabulary snapshots, compared against the stored CSV."""
    base = Path(run_dir)
    (
        manifest,
        config,
        agent_ids,
        split,
        initial,
        guessing,
        labelling,
        communication,
        testing,
    ) = load_run_for_replay(base)
    recomputed_rows = compute_metric_rows(
        config, split, initial, guessing, labelling, communication, testing, agent_ids
    )
    recomputed = [metric_row_to_csv(r) for r in recomputed_rows]
    stored = read_csv(base / "metrics.csv")
    mismatches: list[ReplayMismatch] = []
    if len(stored) != len(recomputed):
        mismatches.append(
            ReplayMismatch("*", "", "", "row_count", str(len(stored)), str(len(recomputed)))
        )
        return ReplayReport(ok=False, mismatches=mismatches, rows_checked=0)
    for old, new in zip(stored, recomputed):
        for column in METRICS_COLUMNS:
            a, b = old.get(column, ""), new.get(column, "")
            if column in _REPLAY_NUMERIC and a and b:
                if abs(float(a) - float(b)) <= tolerance:
                    continue
            elif a == b:
                continue
            mismatches.append(
                ReplayMismatch(
                    block=old.get("block", "?"),
                    round=old.get("round", ""),
                    agent=old.get("agent", ""),
                    column=column,
                    stored=a,
                    recomputed=b,
                )
            )
    return ReplayReport(ok=not mismatches, mismatches=mismatches, rows_checked=len(stored))


def chain_row(chain_index: int, record: GenerationRecord) -> dict:
    """One chain-level CSV row per generation."""
    result = record.result
    learnability = sum(
        result.labelling[a].mean_distance for a in result.agent_ids
    ) / len(result.agent_ids)
    perc_com = sum(result.communication.perc_com) / len(result.communication.perc_com)
    donor_row = next(
        row
        for row in result.metric_rows
        if row.block == "testing" and row.agent_id == record.donor_id
    )
    topsim = donor_row.report.topsim
    return {
        "schema_version": str(SCHEMA_VERSION),
        "chain": str(chain_index),
        "generation": str(record.generation),
        "donor": record.donor_id,
        "learnability": _fmt(learnability),
        "perc_com": _fmt(perc_com),
        "topsim_z": _fmt(topsim.z_score if topsim else None),
        "topsim_p": _fmt(topsim.p_value if topsim else None),
        "ngram_diversity": _fmt(donor_row.report.ngram_diversity),
        "unique_signal_ratio": _fmt(donor_row.report.unique_signal_ratio),
    }
