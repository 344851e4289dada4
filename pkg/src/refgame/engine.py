"""The four-block dyad protocol: guessing, labelling, communication, testing.

A simulation runs both agents through a guessing block (candidate
discrimination over the training language), a labelling block (whose
productions become each agent's learned vocabulary), four communication
rounds of thirty referential-game interactions with vocabulary updates, and
a testing block producing signals for the full 27-stimulus space.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from random import Random
from typing import Sequence

from .agents import Agent, ChoiceFailure, ProductionFailure
from .backend import EventLog
from .domain import (
    Signal,
    Stimulus,
    TrainTestSplit,
    Vocabulary,
    enumerate_stimuli,
    sample_training_set,
    generate_language,
    split_for_train,
)
from .metrics import (
    MetricReport,
    normalized_levenshtein,
    generalization_score,
    vocabulary_report,
)
from .prompts import PromptTask


class EngineError(Exception):
    pass


class SimulationAborted(EngineError):
    """A block failed fatally; ``partial`` holds everything completed so far
    so the caller can persist an incomplete run."""

    def __init__(self, message: str, partial: dict):
        super().__init__(message)
        self.partial = partial


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 64-bit sub-seed for a named component of a run."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class RunConfig:
    master_seed: int = 0
    rounds: int = 4
    tasks_per_round: int = 30
    candidate_count: int = 4  # target + 3 distractors; chance level 25%
    guessing_distractors: int = 3
    mantel_permutations: int = 10_000
    max_agent_retries: int = 3

    def validate(self) -> None:
        if self.rounds < 1:
            raise EngineError("rounds must be >= 1")
        if self.tasks_per_round != 30:
            raise EngineError("the paper schedule fixes tasks_per_round at 30 (2 x 15 stimuli)")
        if not 2 <= self.candidate_count <= 15:
            raise EngineError("candidate_count must be between 2 and 15")
        if not 1 <= self.guessing_distractors <= 14:
            raise EngineError("guessing_distractors must be between 1 and 14")


@dataclass
class InteractionRecord:
    round: int  # 1-based
    task_index: int
    speaker_id: str
    listener_id: str
    stimulus: Stimulus
    signal: Signal
    candidates: tuple[Stimulus, ...]
    chosen_index: int
    success: bool
    failure_mode: str = "none"  # none | failed-production | failed-choice


@dataclass
class GuessingRecord:
    stimulus: Stimulus
    candidates: tuple[Signal, ...]
    chosen_index: int
    correct: bool
    failure_mode: str = "none"


@dataclass
class LabellingRecord:
    stimulus: Stimulus
    truth: Signal
    produced: Signal
    distance: float
    failed: bool = False


@dataclass
class TestingRecord:
    stimulus: Stimulus
    signal: Signal
    failed: bool = False
    extrapolated: bool = False


@dataclass
class GuessingResult:
    agent_id: str
    records: list[GuessingRecord]

    @property
    def accuracy(self) -> float:
        return sum(r.correct for r in self.records) / len(self.records)


@dataclass
class LabellingResult:
    agent_id: str
    records: list[LabellingRecord]
    learned: Vocabulary

    @property
    def mean_distance(self) -> float:
        return sum(r.distance for r in self.records) / len(self.records)


@dataclass
class CommunicationResult:
    records: list[InteractionRecord]
    perc_com: list[float]  # one value per round
    round_vocabs: dict[str, list[Vocabulary]]  # agent id -> post-round snapshots


@dataclass
class TestingResult:
    agent_id: str
    records: list[TestingRecord]

    def pairs(self) -> list[tuple[Stimulus, Signal]]:
        return [(r.stimulus, r.signal) for r in self.records if not r.failed]


@dataclass
class MetricRow:
    """One metrics-CSV row: a MetricReport in its block/round/agent context."""

    block: str
    round: int | None
    agent_id: str
    report: MetricReport
    accuracy: float | None = None
    mean_levenshtein: float | None = None


@dataclass
class SimulationResult:
    config: RunConfig
    agent_ids: tuple[str, str]
    split: TrainTestSplit
    initial_language: Vocabulary
    guessing: dict[str, GuessingResult]
    labelling: dict[str, LabellingResult]
    communication: CommunicationResult
    testing: dict[str, TestingResult]
    metric_rows: list[MetricRow]
    complete: bool = True
    failure: str | None = None


def _context(event_log: EventLog | None, **fields) -> None:
    if event_log is not None:
        event_log.set_context(**fields)


def _emit(event_log: EventLog | None, kind: str, **fields) -> None:
    if event_log is not None:
        event_log.append(kind, **fields)


def run_guessing_block(
    agent: Agent,
    vocab: Vocabulary,
    rng: Random,
    distractors: int = 3,
    event_log: EventLog | None = None,
) -> GuessingResult:
    """Each training stimulus once, in random order: pick the true signal out
    of ``distractors`` + 1 candidates drawn from other entries. The context
    vocabulary includes the current stimulus."""
    order = list(vocab.stimuli())
    rng.shuffle(order)
    records = []
    for task_index, stimulus in enumerate(order):
        _context(event_log, block="guessing", round=None, task=task_index, agent=agent.agent_id)
        truth = vocab.signal_for(stimulus)
        others = [e.signal for e in vocab if e.stimulus != stimulus and e.signal != truth]
        candidates = [truth] + rng.sample(others, distractors)
        rng.shuffle(candidates)
        try:
            chosen = agent.choose(stimulus, candidates, PromptTask.GUESSING, rng)
            record = GuessingRecord(
                stimulus=stimulus,
                candidates=tuple(candidates),
                chosen_index=chosen,
                correct=candidates[chosen] == truth,
            )
        except ChoiceFailure:
            record = GuessingRecord(
                stimulus=stimulus,
                candidates=tuple(candidates),
                chosen_index=-1,
                correct=False,
                failure_mode="failed-choice",
            )
        records.append(record)
        _emit(
            event_log,
            "guess",
            stimulus=stimulus.attributes(),
            candidates=list(record.candidates),
            chosen=record.chosen_index,
            correct=record.correct,
            failure_mode=record.failure_mode,
        )
    return GuessingResult(agent_id=agent.agent_id, records=records)


def run_labelling_block(
    agent: Agent,
    vocab: Vocabulary,
    rng: Random,
    event_log: EventLog | None = None,
) -> LabellingResult:
    """Produce a signal for every training stimulus with the full vocabulary
    (current stimulus included) in context. The productions replace the
    agent's entries and become its learned vocabulary; failed productions
    retain the ground-truth signal."""
    order = list(vocab.stimuli())
    rng.shuffle(order)
    learned = vocab.copy()
    records = []
    for task_index, stimulus in enumerate(order):
        _context(event_log, block="labelling", round=None, task=task_index, agent=agent.agent_id)
        truth = vocab.signal_for(stimulus)
        try:
            produced = agent.produce_signal(stimulus, PromptTask.LABELLING, rng)
            failed = False
        except ProductionFailure:
            produced = truth
            failed = True
        learned.update(stimulus, produced, 0)
        records.append(
            LabellingRecord(
                stimulus=stimulus,
                truth=truth,
                produced=produced,
                distance=normalized_levenshtein(truth, produced),
                failed=failed,
            )
        )
        _emit(
            event_log,
            "label",
            stimulus=stimulus.attributes(),
            truth=truth,
            produced=produced,
            failed=failed,
        )
    agent.set_vocabulary(learned)
    return LabellingResult(agent_id=agent.agent_id, records=records, learned=learned)


def schedule_round(
    train: Sequence[Stimulus],
    rng: Random,
    agent_ids: tuple[str, str] = ("A", "B"),
) -> list[tuple[str, Stimulus]]:
    """Thirty (speaker, stimulus) tasks: roles strictly alternate and each
    agent speaks every training stimulus exactly once, in an independent
    random order."""
    first_order = list(train)
    rng.shuffle(first_order)
    second_order = list(train)
    rng.shuffle(second_order)
    tasks = []
    for a_stim, b_stim in zip(first_order, second_order):
        tasks.append((agent_ids[0], a_stim))
        tasks.append((agent_ids[1], b_stim))
    return tasks


def run_communication_block(
    agent_a: Agent,
    agent_b: Agent,
    rng: Random,
    config: RunConfig,
    event_log: EventLog | None = None,
) -> CommunicationResult:
    """The referential game: per task the speaker produces a signal for the
    target from its own vocabulary (target excluded from context); the
    listener picks the target out of ``candidate_count`` stimuli by scoring
    each candidate. Afterwards both agents map the target to the produced
    signal and set its success flag to the outcome."""
    assert agent_a.vocabulary is not None and agent_b.vocabulary is not None
    agent_a.vocabulary.track_success = True
    agent_b.vocabulary.track_success = True
    agents = {agent_a.agent_id: agent_a, agent_b.agent_id: agent_b}
    train = list(agent_a.vocabulary.stimuli())
    records: list[InteractionRecord] = []
    perc_com: list[float] = []
    round_vocabs: dict[str, list[Vocabulary]] = {agent_a.agent_id: [], agent_b.agent_id: []}

    for round_number in range(1, config.rounds + 1):
        tasks = schedule_round(train, rng, (agent_a.agent_id, agent_b.agent_id))
        round_records = []
        for task_index, (speaker_id, stimulus) in enumerate(tasks):
            speaker = agents[speaker_id]
            listener = agents[[i for i in agents if i != speaker_id][0]]
            _context(
                event_log,
                block="communication",
                round=round_number,
                task=task_index,
                agent=speaker_id,
            )
            distractors = rng.sample([s for s in train if s != stimulus], config.candidate_count - 1)
            candidates = [stimulus] + distractors
            rng.shuffle(candidates)

            signal = ""
            chosen = -1
            success = False
            failure_mode = "none"
            try:
                signal = speaker.produce_signal(stimulus, PromptTask.SPEAKING, rng)
            except ProductionFailure:
                failure_mode = "failed-production"
            if failure_mode == "none":
                _context(event_log, agent=listener.agent_id)
                try:
                    chosen = listener.choose(
                        signal, candidates, PromptTask.LISTENING, rng, exclude=stimulus
                    )
                    success = candidates[chosen] == stimulus
                except ChoiceFailure:
                    failure_mode = "failed-choice"

            record = InteractionRecord(
                round=round_number,
                task_index=task_index,
                speaker_id=speaker_id,
                listener_id=listener.agent_id,
                stimulus=stimulus,
                signal=signal,
                candidates=tuple(candidates),
                chosen_index=chosen,
                success=success,
                failure_mode=failure_mode,
            )
            round_records.append(record)
            _emit(
                event_log,
                "interaction",
                round=round_number,
                task=task_index,
                speaker=speaker_id,
                listener=listener.agent_id,
                stimulus=stimulus.attributes(),
                signal=signal,
                candidates=[c.attributes() for c in candidates],
                chosen=chosen,
                success=success,
                failure_mode=failure_mode,
            )

            # both vocabularies adopt the produced signal, flag = outcome
            if failure_mode != "failed-production":
                flag = 1 if success else 0
                agent_a.vocabulary.update(stimulus, signal, flag)
                agent_b.vocabulary.update(stimulus, signal, flag)

        records.extend(round_records)
        perc_com.append(sum(r.success for r in round_records) / len(round_records))
        round_vocabs[agent_a.agent_id].append(agent_a.vocabulary.copy())
        round_vocabs[agent_b.agent_id].append(agent_b.vocabulary.copy())

    return CommunicationResult(records=records, perc_com=perc_com, round_vocabs=round_vocabs)


def run_testing_block(
    agent: Agent,
    rng: Random,
    event_log: EventLog | None = None,
) -> TestingResult:
    """Produce a signal for all 27 stimuli, the context being the agent's
    train vocabulary minus the current stimulus; test stimuli never appear
    in context. Failed productions are flagged for exclusion from metrics."""
    assert agent.vocabulary is not None
    records = []
    for task_index, stimulus in enumerate(enumerate_stimuli()):
        _context(event_log, block="testing", round=None, task=task_index, agent=agent.agent_id)
        try:
            signal = agent.produce_signal(stimulus, PromptTask.SPEAKING, rng)
            record = TestingRecord(
                stimulus=stimulus,
                signal=signal,
                extrapolated=agent.extrapolated(stimulus),
            )
        except ProductionFailure:
            record = TestingRecord(stimulus=stimulus, signal="", failed=True)
        records.append(record)
        _emit(
            event_log,
            "testing",
            stimulus=stimulus.attributes(),
            signal=record.signal,
            failed=record.failed,
            extrapolated=record.extrapolated,
        )
    return TestingResult(agent_id=agent.agent_id, records=records)


def compute_metric_rows(
    config: RunConfig,
    split: TrainTestSplit,
    initial_language: Vocabulary,
    guessing: dict[str, GuessingResult],
    labelling: dict[str, LabellingResult],
    communication: CommunicationResult,
    testing: dict[str, TestingResult],
    agent_ids: tuple[str, str],
) -> list[MetricRow]:
    """All metric rows of a run. TopSim seeds derive from the master seed and
    the row context, so recomputation (replay) is reproducible."""
    permutations = config.mantel_permutations

    def report(pairs, label, **kwargs):
        return vocabulary_report(
            pairs,
            permutations=permutations,
            rng=derive_seed(config.master_seed, f"metrics:{label}"),
            **kwargs,
        )

    rows = [
        MetricRow(
            block="initial",
            round=None,
            agent_id="",
            report=report(initial_language.pairs(), "initial"),
        )
    ]
    for agent_id in agent_ids:
        rows.append(
            MetricRow(
                block="guessing",
                round=None,
                agent_id=agent_id,
                report=report(initial_language.pairs(), f"guessing::{agent_id}"),
                accuracy=guessing[agent_id].accuracy,
            )
        )
    for agent_id in agent_ids:
        result = labelling[agent_id]
        rows.append(
            MetricRow(
                block="labelling",
                round=None,
                agent_id=agent_id,
                report=report(result.learned.pairs(), f"labelling::{agent_id}"),
                mean_levenshtein=result.mean_distance,
            )
        )
    for round_number in range(1, config.rounds + 1):
        for agent_id in agent_ids:
            vocab = communication.round_vocabs[agent_id][round_number - 1]
            rows.append(
                MetricRow(
                    block="communication",
                    round=round_number,
                    agent_id=agent_id,
                    report=report(
                        vocab.pairs(),
                        f"communication:{round_number}:{agent_id}",
                        perc_com=communication.perc_com[round_number - 1],
                    ),
                )
            )
    train_set = set(split.train)
    for agent_id in agent_ids:
        pairs = testing[agent_id].pairs()
        train_pairs = [(s, w) for s, w in pairs if s in train_set]
        test_pairs = [(s, w) for s, w in pairs if s not in train_set]
        gen_score = None
        if train_pairs and test_pairs:
            try:
                gen_score = generalization_score(train_pairs, test_pairs, pairs="cross")
            except Exception:
                gen_score = None
        rows.append(
            MetricRow(
                block="testing",
                round=None,
                agent_id=agent_id,
                report=report(pairs, f"testing::{agent_id}", gen_score=gen_score),
            )
        )
    return rows


def run_simulation(
    config: RunConfig,
    agents: tuple[Agent, Agent],
    initial_language: Vocabulary | None = None,
    split: TrainTestSplit | None = None,
    event_log: EventLog | None = None,
) -> SimulationResult:
    """Guessing, labelling, communication, and testing for one dyad.

    Without an explicit initial language a fresh balanced split and random
    holistic language are generated from the master seed. Fatal agent
    failures abort with the partial result marked incomplete.
    """
    config.validate()
    agent_a, agent_b = agents
    seed = config.master_seed

    if initial_language is None:
        if split is None:
            split = sample_training_set(Random(derive_seed(seed, "split")))
        initial_language = generate_language(Random(derive_seed(seed, "language")), split.train)
    elif split is None:
        split = split_for_train(initial_language.stimuli())

    _context(event_log, simulation=f"sim-{seed:x}")
    _emit(event_log, "run_start", master_seed=seed, agents=[agent_a.agent_id, agent_b.agent_id])

    guessing: dict[str, GuessingResult] = {}
    labelling: dict[str, LabellingResult] = {}
    testing: dict[str, TestingResult] = {}
    partial: dict = {"split": split, "initial_language": initial_language}
    for agent in (agent_a, agent_b):
        agent.set_vocabulary(initial_language.copy())

    try:
        for agent in (agent_a, agent_b):
            guessing[agent.agent_id] = run_guessing_block(
                agent,
                initial_language,
                Random(derive_seed(seed, f"guessing:{agent.agent_id}")),
                distractors=config.guessing_distractors,
                event_log=event_log,
            )
        partial["guessing"] = guessing
        for agent in (agent_a, agent_b):
            labelling[agent.agent_id] = run_labelling_block(
                agent,
                initial_language,
                Random(derive_seed(seed, f"labelling:{agent.agent_id}")),
                event_log=event_log,
            )
        partial["labelling"] = labelling
        communication = run_communication_block(
            agent_a,
            agent_b,
            Random(derive_seed(seed, "communication")),
            config,
            event_log=event_log,
        )
        partial["communication"] = communication
        for agent in (agent_a, agent_b):
            testing[agent.agent_id] = run_testing_block(
                agent,
                Random(derive_seed(seed, f"testing:{agent.agent_id}")),
                event_log=event_log,
            )
        partial["testing"] = testing
    except Exception as err:  # fatal backend exhaustion: partial result
        _emit(event_log, "run_aborted", error=str(err))
        raise SimulationAborted(str(err), partial) from err

    rows = compute_metric_rows(
        config,
        split,
        initial_language,
        guessing,
        labelling,
        communication,
        testing,
        (agent_a.agent_id, agent_b.agent_id),
    )
    _emit(event_log, "run_end", complete=True)
    return SimulationResult(
        config=config,
        agent_ids=(agent_a.agent_id, agent_b.agent_id),
        split=split,
        initial_language=initial_language,
        guessing=guessing,
        labelling=labelling,
        communication=communication,
        testing=testing,
        metric_rows=rows,
    )
