"""Command-line surface: simulate, chain, metrics, replay.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure,
3 verification mismatch (replay).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from random import Random

from .agents import make_agent
from .backend import BackendError, EventLog, HttpBackend, retrying
from .chains import ChainConfig, DonorSelection, derive_training_language, run_chain, select_donor
from .config import (
    ConfigError,
    ExperimentConfig,
    check_backend_credentials,
    load_config,
)
from .domain import DomainError, Vocabulary
from .engine import RunConfig, SimulationAborted, derive_seed, run_simulation
from .metrics import (
    DEFAULT_PERMUTATIONS,
    MetricError,
    generalization_score,
    ngram_diversity,
    topsim_mantel,
    unique_signal_ratio,
)
from .persistence import (
    CHAIN_COLUMNS,
    DigestMismatch,
    PersistenceError,
    RunManifest,
    chain_row,
    replay_run,
    save_partial,
    save_simulation,
    write_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_MISMATCH = 3


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        config.master_seed = args.seed
        config.run.master_seed = args.seed
    if getattr(args, "count", None) is not None:
        config.count = args.count
    if getattr(args, "agents", None):
        config.agents = [s.strip() for s in args.agents.split(",")]
    if getattr(args, "out", None):
        config.output_dir = args.out
    if getattr(args, "permutations", None) is not None:
        config.run.mantel_permutations = args.permutations
    if getattr(args, "rounds", None) is not None:
        config.run.rounds = args.rounds
    if getattr(args, "chains", None) is not None:
        config.chain.chains = args.chains
    if getattr(args, "generations", None) is not None:
        config.chain.generations = args.generations
    if getattr(args, "seed_from", None):
        config.chain.seed_from = args.seed_from
    return config


def _load_or_default(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = ExperimentConfig()
    return _apply_overrides(config, args)


def _build_agents(config: ExperimentConfig, event_log: EventLog):
    backend = None
    if any(spec == "llm" for spec in config.agents):
        check_backend_credentials(config)
        backend = retrying(
            HttpBackend(config.backend, event_log=event_log), config.backend
        )
    return tuple(
        make_agent(spec, agent_id, backend, max_retries=config.run.max_agent_retries)
        for spec, agent_id in zip(config.agents, ("A", "B"))
    )


def _run_one_simulation(config: ExperimentConfig, run_seed: int, run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    event_log = EventLog(run_dir / "events.jsonl")
    agents = _build_agents(config, event_log)
    run_config = RunConfig(
        master_seed=run_seed,
        rounds=config.run.rounds,
        tasks_per_round=config.run.tasks_per_round,
        candidate_count=config.run.candidate_count,
        guessing_distractors=config.run.guessing_distractors,
        mantel_permutations=config.run.mantel_permutations,
        max_agent_retries=config.run.max_agent_retries,
    )
    started = time.time()
    try:
        result = run_simulation(run_config, agents, event_log=event_log)
    except SimulationAborted as err:
        save_partial(err.partial, run_config, run_dir, error=str(err), started=started)
        raise
    save_simulation(result, run_dir, event_log=event_log, started=started)
    return result


def _summary_line(name: str, result) -> str:
    rounds = " ".join(f"{v:.2f}" for v in result.communication.perc_com)
    testing_rows = [r for r in result.metric_rows if r.block == "testing"]
    topsim = " ".join(
        f"{row.agent_id}={row.report.topsim.z_score:.2f}" if row.report.topsim else f"{row.agent_id}=degenerate"
        for row in testing_rows
    )
    return f"{name}  perc_com[{rounds}]  testing_topsim_z[{topsim}]"


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_or_default(args)
    out_base = Path(config.output_dir)
    print(f"running {config.count} simulation(s), master seed {config.master_seed}")
    for index in range(config.count):
        run_seed = (
            config.master_seed
            if config.count == 1
            else derive_seed(config.master_seed, f"sim:{index}")
        )
        run_dir = out_base / f"sim-{index:02d}"
        result = _run_one_simulation(config, run_seed, run_dir)
        print(_summary_line(run_dir.as_posix(), result))
    return EXIT_OK


def _seed_language_from_run(seed_dir: Path, chain_seed: int, donor_permutations: int):
    """Import a prior simulation as generation 0: pick its donor testing
    vocabulary and derive the next generation's training language."""
    manifest = RunManifest.load(seed_dir)
    manifest.verify_digests(seed_dir)
    agent_ids = tuple(manifest.extra["agent_ids"])
    testing = {
        agent_id: Vocabulary.load(seed_dir / "vocab" / f"testing_{agent_id}.vocab").pairs()
        for agent_id in agent_ids
    }
    selection = select_donor(
        testing[agent_ids[0]],
        testing[agent_ids[1]],
        agent_ids,
        permutations=donor_permutations,
        rng=derive_seed(chain_seed, "donor:0"),
    )
    language = derive_training_language(
        selection.pairs, Random(derive_seed(chain_seed, "portion:1"))
    )
    return selection, language


def _row_from_run_dir(chain_index: int, generation: int, run_dir: Path, donor_id: str) -> dict:
    """Rebuild one chain.csv row from a persisted run directory."""
    from .persistence import SCHEMA_VERSION, read_csv, _fmt

    stored = read_csv(run_dir / "metrics.csv")
    donor_testing = next(
        row for row in stored if row["block"] == "testing" and row["agent"] == donor_id
    )
    labelling_rows = [row for row in stored if row["block"] == "labelling"]
    comm_rows = [row for row in stored if row["block"] == "communication"]
    learnability = sum(float(r["mean_levenshtein"]) for r in labelling_rows) / len(labelling_rows)
    perc_com = sum(float(r["perc_com"]) for r in comm_rows) / len(comm_rows)
    return {
        "schema_version": str(SCHEMA_VERSION),
        "chain": str(chain_index),
        "generation": str(generation),
        "donor": donor_id,
        "learnability": _fmt(learnability),
        "perc_com": _fmt(perc_com),
        "topsim_z": donor_testing["topsim_z"],
        "topsim_p": donor_testing["topsim_p"],
        "ngram_diversity": donor_testing["ngram_diversity"],
        "unique_signal_ratio": donor_testing["unique_signal_ratio"],
    }


def _imported_generation_row(chain_index: int, seed_dir: Path, selection: DonorSelection) -> dict:
    return _row_from_run_dir(chain_index, 0, seed_dir, selection.donor_id)


def _resume_point(chain_dir: Path, generations: int):
    """Largest prefix of complete, digest-valid generation directories."""
    done = 0
    for generation in range(generations):
        gen_dir = chain_dir / f"gen{generation:02d}"
        try:
            manifest = RunManifest.load(gen_dir)
            manifest.verify_digests(gen_dir)
        except PersistenceError:
            break
        if manifest.status != "complete" or "donor_id" not in manifest.extra:
            break
        done += 1
    return done


def cmd_chain(args: argparse.Namespace) -> int:
    config = _load_or_default(args)
    out_base = Path(config.output_dir)
    settings = config.chain
    print(
        f"running {settings.chains} chain(s) x {settings.generations} generation(s), "
        f"master seed {config.master_seed}"
    )
    for chain_index in range(settings.chains):
        chain_seed = derive_seed(config.master_seed, f"chain:{chain_index}")
        chain_dir = out_base / f"chain-{chain_index:02d}"
        chain_dir.mkdir(parents=True, exist_ok=True)
        rows: list[dict] = []

        chain_config = ChainConfig(
            generations=settings.generations,
            master_seed=chain_seed,
            run=config.run,
            donor_permutations=settings.donor_permutations,
            generation_overrides={
                int(g): dict(o) for g, o in settings.generation_overrides.items()
            },
        )

        start_generation = 0
        training_language = None
        if settings.seed_from:
            selection, training_language = _seed_language_from_run(
                Path(settings.seed_from), chain_seed, settings.donor_permutations
            )
            rows.append(_imported_generation_row(chain_index, Path(settings.seed_from), selection))
            start_generation = 1
        else:
            resumed = _resume_point(chain_dir, settings.generations)
            if resumed:
                print(f"chain {chain_index}: resuming after generation {resumed - 1}")
                last_dir = chain_dir / f"gen{resumed - 1:02d}"
                donor_id = RunManifest.load(last_dir).extra["donor_id"]
                donor_pairs = Vocabulary.load(
                    last_dir / "vocab" / f"testing_{donor_id}.vocab"
                ).pairs()
                training_language = derive_training_language(
                    donor_pairs, Random(derive_seed(chain_seed, f"portion:{resumed}"))
                )
                start_generation = resumed
                rows.extend(_stored_chain_rows(chain_dir, chain_index, resumed))

        current_log: dict[int, EventLog] = {}

        def event_log_factory(generation: int) -> EventLog:
            gen_dir = chain_dir / f"gen{generation:02d}"
            gen_dir.mkdir(parents=True, exist_ok=True)
            current_log[generation] = EventLog(gen_dir / "events.jsonl")
            return current_log[generation]

        def agent_factory(generation):
            return _build_agents(config, current_log.get(generation) or EventLog())

        def persist_generation(record, chain_index=chain_index, chain_dir=chain_dir, rows=rows):
            gen_dir = chain_dir / f"gen{record.generation:02d}"
            manifest = save_simulation(record.result, gen_dir)
            manifest.extra.update(
                donor_id=record.donor_id,
                donor_degenerate=record.donor_degenerate,
                generation=record.generation,
            )
            manifest.save(gen_dir)
            rows.append(chain_row(chain_index, record))
            write_csv(chain_dir / "chain.csv", CHAIN_COLUMNS, rows)

        run_chain(
            chain_config,
            agent_factory,
            event_log_factory=event_log_factory,
            on_generation=persist_generation,
            start_generation=start_generation,
            training_language=training_language,
        )
        write_csv(chain_dir / "chain.csv", CHAIN_COLUMNS, rows)
        print(f"chain {chain_index}: {len(rows)} generation rows -> {chain_dir / 'chain.csv'}")
    return EXIT_OK


def _stored_chain_rows(chain_dir: Path, chain_index: int, generations_done: int) -> list[dict]:
    """chain.csv rows for finished generations, rebuilt from the generation
    directories when the CSV is missing or behind."""
    from .persistence import read_csv

    csv_path = chain_dir / "chain.csv"
    by_generation = {}
    if csv_path.exists():
        for row in read_csv(csv_path):
            by_generation[int(row["generation"])] = row
    rows = []
    for generation in range(generations_done):
        if generation in by_generation:
            rows.append(by_generation[generation])
            continue
        gen_dir = chain_dir / f"gen{generation:02d}"
        donor_id = RunManifest.load(gen_dir).extra["donor_id"]
        rows.append(_row_from_run_dir(chain_index, generation, gen_dir, donor_id))
    return rows


def cmd_metrics(args: argparse.Namespace) -> int:
    permutations = args.permutations or DEFAULT_PERMUTATIONS
    train = Vocabulary.load(args.train)
    if len(train) < 3:
        print(f"error: {args.train} has {len(train)} entries, need at least 3", file=sys.stderr)
        return EXIT_VALIDATION
    result = topsim_mantel(train.pairs(), permutations=permutations, rng=args.seed)
    print(f"entries: {len(train)}")
    print(f"topsim_z: {result.z_score:.4f}")
    print(f"topsim_p: {result.p_value:.6f}")
    print(f"observed_r: {result.observed_r:.4f}")
    print(f"permutations: {result.permutations} ({result.method})")
    print(f"ngram_diversity: {ngram_diversity(train.signals()):.4f}")
    print(f"unique_signal_ratio: {unique_signal_ratio(train.signals()):.4f}")
    if args.test:
        test = Vocabulary.load(args.test)
        score = generalization_score(train.pairs(), test.pairs(), pairs=args.gen_pairs)
        print(f"gen_score[{args.gen_pairs}]: {score:.4f}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    report = replay_run(args.run_dir, tolerance=args.tolerance)
    if report.ok:
        print(f"replay OK ({report.rows_checked} metric rows verified)")
        return EXIT_OK
    for mismatch in report.mismatches:
        where = f"block={mismatch.block} round={mismatch.round or '-'} agent={mismatch.agent or '-'}"
        print(
            f"mismatch {where} {mismatch.column}: stored={mismatch.stored} "
            f"recomputed={mismatch.recomputed}",
            file=sys.stderr,
        )
    return EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refgame",
        description="Referential-game and iterated-learning simulations over artificial languages.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="run dyad simulations")
    simulate.add_argument("--config", help="YAML config file")
    simulate.add_argument("--seed", type=int, help="master seed override")
    simulate.add_argument("--count", type=int, help="number of independent simulations")
    simulate.add_argument("--agents", help="comma-separated agent specs, e.g. oracle:lookup,oracle:lookup")
    simulate.add_argument("--out", help="output directory")
    simulate.add_argument("--permutations", type=int, help="Mantel permutation count")
    simulate.add_argument("--rounds", type=int, help="communication rounds")
    simulate.set_defaults(func=cmd_simulate)

    chain = sub.add_parser("chain", help="run transmission chains")
    chain.add_argument("--config", help="YAML config file")
    chain.add_argument("--seed", type=int, help="master seed override")
    chain.add_argument("--chains", type=int, help="number of chains")
    chain.add_argument("--generations", type=int, help="generations per chain")
    chain.add_argument("--seed-from", dest="seed_from", help="simulation directory to import as generation 0")
    chain.add_argument("--agents", help="agent specs")
    chain.add_argument("--out", help="output directory")
    chain.add_argument("--permutations", type=int, help="Mantel permutation count")
    chain.set_defaults(func=cmd_chain)

    metrics = sub.add_parser("metrics", help="compute metrics for vocabulary files")
    metrics.add_argument("train", help="vocabulary file")
    metrics.add_argument("test", nargs="?", help="optional second vocabulary for the generalisation score")
    metrics.add_argument("--permutations", type=int, default=DEFAULT_PERMUTATIONS)
    metrics.add_argument("--seed", type=int, default=0)
    metrics.add_argument("--gen-pairs", choices=("cross", "all"), default="cross")
    metrics.set_defaults(func=cmd_metrics)

    replay = sub.add_parser("replay", help="verify a run directory offline")
    replay.add_argument("run_dir", help="run directory with manifest and events")
    replay.add_argument("--tolerance", type=float, default=1e-9)
    replay.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DigestMismatch as err:
        print(f"verification failed: {err}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ConfigError, FileNotFoundError, DomainError, MetricError, PersistenceError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except SimulationAborted as err:
        print(f"run aborted: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except BackendError as err:
        print(f"backend failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
