"""Command-line pipeline: data generation, dissimilarity, training, evaluation.

One JSON config and one master seed drive everything; every stage draws from
named substreams so stages can be re-run independently with identical results.
Output files carry the resolved-config hash so stale artifacts are detected.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments, otcore, server
from .clients import ClientData, SyntheticConfig, generate_synthetic, make_clients, smoothness_constant
from .geometry import FeasibleSet, dykstra_project
from .seeding import substream
from .server import AlgoConfig, run_strategy

log = logging.getLogger("karula")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3

# zero, the decades around the useful coupling range with one half-decade
# refinement where the optimum sits for the synthetic task, and a large
# sentinel (t >= 1 is already in the identity-projection regime there)
DEFAULT_T_GRID = [0.0, 1e-3, 1e-2, 3e-2, 1e-1, 1e3]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str = "experiment"
    seed: int = 0
    repetitions: int = 10
    out_dir: str = "runs"
    data_dir: str | None = None
    n_clients: int = 30
    d: int = 50
    group_means: tuple = (1.0, 1.5, 2.0)
    n_range: tuple = (10, 100)
    noise_std: float = 3.0
    theta_spread: float = 0.5
    feature_mean_spread: float = 0.1
    lam: float = 1e-6
    n_reference: int = 50
    label_weight: float = 60.0
    strategies: tuple = ("local", "fedavg", "ifca", "karula")
    rounds: int = 2500
    participation: int | None = None
    batch_size: int = 0
    proj_tol: float = 1e-6
    max_sweeps: int = 500
    diag_every: int = 0
    nu_scaling: str = "lemma"
    fedavg_local_steps: int = 5
    ifca_clusters: int = 3
    local_exact: bool = True
    t: float | None = None
    t_grid: tuple = tuple(DEFAULT_T_GRID)
    cv_folds: int = 5
    cv_rounds: int = 1200
    threads: int = 1

    @property
    def s(self) -> int:
        if self.participation is not None:
            return self.participation
        return max(2, self.n_clients // 3)


_KNOWN_STRATEGIES = ("local", "fedavg", "ifca", "karula")


def resolve_config(raw: dict) -> RunConfig:
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig(**{
        k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()
    })
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if cfg.repetitions < 1:
        raise ConfigError("repetitions must be at least 1")
    if cfg.participation is not None and not 2 <= cfg.participation <= cfg.n_clients - 1:
        raise ConfigError(
            f"participation={cfg.participation} violates 2 <= s <= n-1 "
            f"(n={cfg.n_clients})"
        )
    for strat in cfg.strategies:
        if strat not in _KNOWN_STRATEGIES:
            raise ConfigError(f"unknown strategy {strat!r}")
    if cfg.data_dir is not None and not Path(cfg.data_dir).is_dir():
        raise ConfigError(f"data_dir does not exist: {cfg.data_dir}")
    if cfg.t is not None and cfg.t < 0:
        raise ConfigError("t must be nonnegative")
    if not cfg.t_grid:
        raise ConfigError("t_grid must not be empty")
    if cfg.nu_scaling not in ("lemma", "verbatim"):
        raise ConfigError("nu_scaling must be 'lemma' or 'verbatim'")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return resolve_config(raw)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(x) -> str:
    return f"{x:.12g}"


def write_matrix_csv(path, mat, chash: str, header_row: str | None = None):
    mat = np.asarray(mat, dtype=float)
    lines = [f"# config_hash={chash}"]
    if header_row:
        lines.append(header_row)
    lines += [",".join(_fmt(v) for v in row) for row in np.atleast_2d(mat)]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        first = line.split(",")[0]
        try:
            float(first)
        except ValueError:
            continue  # header row
        rows.append([float(v) for v in line.split(",")])
    return np.array(rows)


def write_json(path, obj, chash: str):
    payload = {"config_hash": chash, **obj}
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", newline="\n"
    )


def verify_hash(path, chash: str):
    """Refuse to reuse an output directory produced by a different config."""
    path = Path(path)
    if not path.exists():
        return
    text = path.read_text()
    if path.suffix == ".json":
        old = json.loads(text).get("config_hash")
    else:
        old = None
        for line in text.splitlines():
            if line.startswith("# config_hash="):
                old = line.split("=", 1)[1]
                break
    if old is not None and old != chash:
        raise RuntimeError(
            f"{path} was produced with config hash {old}, current is {chash}; "
            f"use a fresh output directory"
        )


class DirLock:
    """One process owns one output directory."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"{self.path} exists: directory in use (remove it if stale)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# stages


def synthetic_config(cfg: RunConfig, seed: int) -> SyntheticConfig:
    return SyntheticConfig(
        n_clients=cfg.n_clients,
        d=cfg.d,
        group_means=tuple(cfg.group_means),
        n_range=tuple(cfg.n_range),
        noise_std=cfg.noise_std,
        theta_spread=cfg.theta_spread,
        feature_mean_spread=cfg.feature_mean_spread,
        seed=seed,
    )


def stage_gen_data(cfg: RunConfig, seed: int, out: Path, chash: str):
    out.mkdir(parents=True, exist_ok=True)
    scfg = synthetic_config(cfg, seed)
    train, truth, labels, test = generate_synthetic(scfg, substream(seed, "data"))
    header = ",".join([f"x{j}" for j in range(cfg.d)] + ["y"])
    for i, (tr, te) in enumerate(zip(train, test)):
        write_matrix_csv(out / f"client_{i:03d}_train.csv",
                         np.column_stack([tr.x, tr.y]), chash, header)
        write_matrix_csv(out / f"client_{i:03d}_test.csv",
                         np.column_stack([te.x, te.y]), chash, header)
    write_json(out / "ground_truth.json", {
        "theta_star": truth.tolist(),
        "group_labels": labels.tolist(),
        "config": dataclasses.asdict(scfg),
    }, chash)
    return train, truth, labels, test


def load_client_dir(data_dir) -> tuple[list[ClientData], list[ClientData]]:
    data_dir = Path(data_dir)
    train_files = sorted(data_dir.glob("client_*_train.csv"))
    if not train_files:
        raise FileNotFoundError(f"no client_*_train.csv files in {data_dir}")
    train, test = [], []
    for tf in train_files:
        mat = read_matrix_csv(tf)
        train.append(ClientData(mat[:, :-1], mat[:, -1]))
        te = tf.with_name(tf.name.replace("_train", "_test"))
        if te.exists():
            mat = read_matrix_csv(te)
            test.append(ClientData(mat[:, :-1], mat[:, -1]))
    return train, test if len(test) == len(train) else []


def stage_dissim(cfg: RunConfig, seed: int, train, out: Path, chash: str):
    d, embeddings, reference = otcore.client_dissimilarity(
        [c.x for c in train],
        [c.y for c in train],
        substream(seed, "reference"),
        n_reference=cfg.n_reference,
        label_weight=cfg.label_weight,
        threads=cfg.threads,
    )
    write_matrix_csv(out / "dissim.csv", d, chash)
    write_json(out / "embeddings.json", {
        "reference": reference.rows.tolist(),
        "embeddings": [e.phi.tolist() for e in embeddings],
    }, chash)
    return d


def strategy_eta(strategy: str, l_smooth: float) -> float:
    if strategy == "karula":
        return 3.0 / (8.0 * l_smooth)
    if strategy == "fedavg":
        return 1.0 / (10.0 * l_smooth)
    if strategy == "ifca":
        return 1.0 / (2.0 * l_smooth)
    return 1.0 / (2.0 * l_smooth)


def algo_config(cfg: RunConfig, strategy: str, seed: int, l_smooth: float,
                t: float, rounds: int | None = None) -> AlgoConfig:
    return AlgoConfig(
        eta=strategy_eta(strategy, l_smooth),
        s=min(cfg.s, cfg.n_clients),
        rounds=cfg.rounds if rounds is None else rounds,
        t=t,
        proj_tol=cfg.proj_tol,
        max_sweeps=cfg.max_sweeps,
        batch_size=cfg.batch_size,
        seed=seed,
        diag_every=cfg.diag_every,
        nu_scaling=cfg.nu_scaling,
        local_steps=cfg.fedavg_local_steps,
        clusters=cfg.ifca_clusters,
    )


def write_trace(path, logs, chash: str):
    lines = [f"# config_hash={chash}", "round,objective,grad_mapping_sq,delta_hat,proj_sweeps"]
    for entry in logs:
        gm = "" if entry.grad_mapping_sq is None else _fmt(entry.grad_mapping_sq)
        lines.append(
            f"{entry.round},{_fmt(entry.objective)},{gm},"
            f"{_fmt(entry.delta_hat)},{entry.proj_sweeps}"
        )
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def stage_train(cfg: RunConfig, strategy: str, seed: int, clients, t: float,
                dissim: np.ndarray | None, out: Path, chash: str):
    l_smooth = smoothness_constant([c.data for c in clients],
                                   [c.objective for c in clients])
    acfg = algo_config(cfg, strategy, seed, l_smooth, t)
    if strategy == "local" and cfg.local_exact:
        models = server.local_train(clients, use_exact=True)
        logs = []
    else:
        kset = FeasibleSet(t, dissim) if strategy == "karula" else None
        models, logs = run_strategy(strategy, clients, acfg, kset)
    write_trace(out / f"trace_{strategy}.csv", logs, chash)
    write_json(out / f"models_{strategy}.json", {
        "strategy": strategy,
        "models": models.tolist(),
    }, chash)
    return models, logs


def run_seed(cfg: RunConfig, rep: int, exp_dir: Path, chash: str) -> dict:
    """All stages for one repetition; returns the per-seed metrics record."""
    seed = cfg.seed + rep
    out = exp_dir / str(seed)
    out.mkdir(parents=True, exist_ok=True)

    log.info("seed %d: generating data", seed)
    if cfg.data_dir is None:
        train, truth, labels, test = stage_gen_data(cfg, seed, out / "clients", chash)
    else:
        train, test = load_client_dir(cfg.data_dir)
        truth = None
    clients = make_clients(train, lam=cfg.lam, test_sets=test or None)

    dissim = None
    if "karula" in cfg.strategies:
        log.info("seed %d: dissimilarity", seed)
        dissim = stage_dissim(cfg, seed, train, out, chash)

    t = cfg.t
    if t is None and "karula" in cfg.strategies:
        log.info("seed %d: cross-validating t", seed)
        l_smooth = smoothness_constant([c.data for c in clients],
                                       [c.objective for c in clients])
        cv = experiments.cross_validate_t(
            clients, list(cfg.t_grid),
            algo_config(cfg, "karula", seed, l_smooth, 0.0),
            substream(seed, "cv"), folds=cfg.cv_folds, dissim=dissim,
            cv_rounds=cfg.cv_rounds,
        )
        t = cv.t
        write_json(out / "cv.json", {
            "t": cv.t,
            "mean_scores": {str(k): v for k, v in cv.mean_scores.items()},
        }, chash)
    t = 0.0 if t is None else float(t)

    record = {}
    model_stacks = {}
    for strategy in cfg.strategies:
        log.info("seed %d: training %s", seed, strategy)
        models, _ = stage_train(cfg, strategy, seed, clients, t, dissim, out, chash)
        model_stacks[strategy] = models
        entry = {}
        if truth is not None:
            entry["estimation_error"] = experiments.estimation_error(models, truth).value
        if test:
            entry["r2"] = experiments.r2_score(models, test)
        record[strategy] = entry

    if truth is not None and dissim is not None and "local" in model_stacks:
        mats = {
            "ground_truth": experiments.model_sq_distances(truth),
            "karula_dissimilarity": dissim,
            "local_model_distance": experiments.model_sq_distances(model_stacks["local"]),
        }
        spear = experiments.heatmap_export(mats, out, header=f"# config_hash={chash}")
        record["spearman"] = spear
    write_json(out / "metrics.json", record, chash)
    return record


def aggregate(cfg: RunConfig, records: list[dict], exp_dir: Path, chash: str) -> dict:
    per_seed = [{k: v for k, v in r.items() if k != "spearman"} for r in records]
    summary = {"experiment": cfg.experiment, "seeds": len(records)}
    if len(records) >= 2 and all(
        "estimation_error" in r.get(s, {}) for r in per_seed for s in cfg.strategies
    ):
        summary["rows"] = experiments.summarize_runs(per_seed)
    spear = [r["spearman"] for r in records if "spearman" in r]
    if spear:
        wins = sum(
            1 for s in spear
            if s["karula_dissimilarity"] > s["local_model_distance"]
        )
        summary["spearman_wins"] = wins
        summary["spearman"] = {
            key: float(np.mean([s[key] for s in spear])) for key in spear[0]
        }
    write_json(exp_dir / "summary.json", summary, chash)
    return summary


def pipeline_checks(cfg: RunConfig, summary: dict) -> list[str]:
    """Qualitative reproduction checks on the aggregated summary."""
    failures = []
    rows = {r["strategy"]: r for r in summary.get("rows", [])}
    if {"karula", "fedavg", "local"} <= set(rows):
        karula_err = rows["karula"]["estimation_error"]
        others = [r["estimation_error"] for s, r in rows.items() if s != "karula"]
        if not all(karula_err < v for v in others):
            failures.append("karula estimation error is not strictly lowest")
        karula_r2 = rows["karula"]["r2"]
        if not all(karula_r2 > r["r2"] for s, r in rows.items() if s != "karula"):
            failures.append("karula r2 is not strictly highest")
        if rows["local"]["estimation_error"] < 2.0 * rows["fedavg"]["estimation_error"]:
            failures.append("local estimation error below 2x fedavg")
    if "spearman_wins" in summary:
        need = max(1, int(np.ceil(0.8 * summary["seeds"])))
        if summary["spearman_wins"] < need:
            failures.append(
                f"dissimilarity beat local-model distances in only "
                f"{summary['spearman_wins']}/{summary['seeds']} seeds"
            )
    return failures


def run_pipeline(cfg: RunConfig, check: bool = False) -> int:
    chash = config_hash(cfg)
    exp_dir = Path(cfg.out_dir) / cfg.experiment
    exp_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(exp_dir / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        with DirLock(exp_dir):
            verify_hash(exp_dir / "summary.json", chash)
            write_json(exp_dir / "resolved_config.json",
                       {"config": dataclasses.asdict(cfg)}, chash)
            records = []
            for rep in range(cfg.repetitions):
                try:
                    records.append(run_seed(cfg, rep, exp_dir, chash))
                except Exception:
                    log.exception("stage failure in repetition %d", rep)
                    raise
            summary = aggregate(cfg, records, exp_dir, chash)
            if check:
                failures = pipeline_checks(cfg, summary)
                for f in failures:
                    log.error("check failed: %s", f)
                if failures:
                    return EXIT_CHECK
                log.info("all pipeline checks passed")
        return EXIT_OK
    finally:
        log.removeHandler(handler)
        handler.close()


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_data(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.out_dir)
    stage_gen_data(cfg, cfg.seed, out, config_hash(cfg))
    return EXIT_OK


def _cmd_dissim(cfg: RunConfig, args) -> int:
    train, _ = load_client_dir(args.data)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage_dissim(cfg, cfg.seed, train, out, config_hash(cfg))
    return EXIT_OK


def _cmd_train(cfg: RunConfig, args) -> int:
    train, test = load_client_dir(args.data)
    clients = make_clients(train, lam=cfg.lam, test_sets=test or None)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    dissim = None
    t = args.t if args.t is not None else (cfg.t or 0.0)
    if args.strategy == "karula":
        dissim_path = Path(args.data) / "dissim.csv"
        if not dissim_path.exists():
            dissim_path = out / "dissim.csv"
        if dissim_path.exists():
            dissim = read_matrix_csv(dissim_path)
        else:
            dissim = stage_dissim(cfg, cfg.seed, train, out, chash)
    stage_train(cfg, args.strategy, cfg.seed, clients, float(t), dissim, out, chash)
    return EXIT_OK


def _cmd_cv(cfg: RunConfig, args) -> int:
    train, _ = load_client_dir(args.data)
    clients = make_clients(train, lam=cfg.lam)
    l_smooth = smoothness_constant([c.data for c in clients],
                                   [c.objective for c in clients])
    cv = experiments.cross_validate_t(
        clients, list(cfg.t_grid),
        algo_config(cfg, "karula", cfg.seed, l_smooth, 0.0),
        substream(cfg.seed, "cv"), folds=cfg.cv_folds, cv_rounds=cfg.cv_rounds,
    )
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "cv.json", {
        "t": cv.t,
        "mean_scores": {str(k): v for k, v in cv.mean_scores.items()},
    }, config_hash(cfg))
    print(f"chosen t = {cv.t}")
    return EXIT_OK


def _cmd_check_bound(cfg: RunConfig, args) -> int:
    train, _ = load_client_dir(args.data)
    clients = make_clients(train, lam=cfg.lam)
    mat = read_matrix_csv(args.trace)
    logs = []
    for row in mat:
        logs.append(server.RoundLog(
            round=int(row[0]), participants=(), objective=row[1],
            grad_mapping_sq=None if np.isnan(row[2]) else row[2],
            delta_hat=row[3], proj_sweeps=int(row[4]),
        ))
    constants = experiments.compute_constants(clients, s=cfg.s)
    acfg = algo_config(cfg, "karula", cfg.seed, constants.l_smooth, cfg.t or 0.0)
    report = experiments.check_theorem1(logs, constants, acfg, len(clients))
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "bound.json", {
        "holds": report.holds,
        "delta_max": report.delta_max,
        "epsilon": report.epsilon,
        "decay_exponent": report.decay_exponent,
        "k_values": report.k_values.tolist(),
        "min_so_far": report.min_so_far.tolist(),
        "rhs": report.rhs.tolist(),
        "rhs_blockwise": report.rhs_blockwise.tolist(),
    }, config_hash(cfg))
    print("bound holds" if report.holds else "bound VIOLATED")
    return EXIT_OK if report.holds else EXIT_CHECK


def _cmd_report(cfg: RunConfig, args) -> int:
    exp_dir = Path(cfg.out_dir) / cfg.experiment
    records = []
    for mp in sorted(exp_dir.glob("*/metrics.json"),
                     key=lambda p: int(p.parent.name)):
        data = json.loads(mp.read_text())
        data.pop("config_hash", None)
        records.append(data)
    if not records:
        raise FileNotFoundError(f"no metrics.json files under {exp_dir}")
    aggregate(cfg, records, exp_dir, config_hash(cfg))
    return EXIT_OK


def _cmd_project_test(cfg: RunConfig, args) -> int:
    payload = json.loads(Path(args.input).read_text())
    kset = FeasibleSet(float(payload["t"]), np.asarray(payload["dissimilarity"]))
    res = dykstra_project(
        np.asarray(payload["stack"], dtype=float), kset,
        eta=float(payload.get("eta", 1.0)),
        tol=float(payload.get("tol", cfg.proj_tol)),
        max_sweeps=int(payload.get("max_sweeps", cfg.max_sweeps)),
    )
    out = {
        "point": res.point.tolist(),
        "sweeps": res.sweeps,
        "delta_hat": res.delta_hat,
        "max_violation_before_restore": res.max_violation_before_restore,
        "converged": res.converged,
    }
    if args.out:
        write_json(Path(args.out), out, config_hash(cfg))
    else:
        print(json.dumps(out, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_run(cfg: RunConfig, args) -> int:
    return run_pipeline(cfg, check=args.check)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="karula",
        description="Constrained personalized federated learning simulation",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override master seed")
    parser.add_argument("--out", help="override output directory")
    parser.add_argument("--check", action="store_true",
                        help="fail (exit 3) when pipeline checks do not pass")
    parser.add_argument("--threads", type=int, help="worker threads within stages")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", help="full pipeline: generate, embed, train, report")
    sub.add_parser("gen-data", help="write synthetic client datasets")
    p = sub.add_parser("dissim", help="dissimilarity matrix from client CSVs")
    p.add_argument("--data", required=True)
    p = sub.add_parser("train", help="train one strategy on client CSVs")
    p.add_argument("--strategy", required=True, choices=_KNOWN_STRATEGIES)
    p.add_argument("--t", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--participation", type=int)
    p.add_argument("--data", required=True)
    p = sub.add_parser("cv", help="cross-validate the coupling level t")
    p.add_argument("--data", required=True)
    p = sub.add_parser("check-bound", help="convergence-bound check on a trace")
    p.add_argument("--data", required=True)
    p.add_argument("--trace", required=True)
    p = sub.add_parser("project-test", help="run one projection from a JSON instance")
    p.add_argument("--input", required=True)
    p = sub.add_parser("report", help="aggregate per-seed metrics into summary.json")
    return parser


_COMMANDS = {
    "run": _cmd_run,
    "gen-data": _cmd_gen_data,
    "dissim": _cmd_dissim,
    "train": _cmd_train,
    "cv": _cmd_cv,
    "check-bound": _cmd_check_bound,
    "report": _cmd_report,
    "project-test": _cmd_project_test,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if args.threads is not None:
            overrides["threads"] = args.threads
        if getattr(args, "rounds", None) is not None:
            overrides["rounds"] = args.rounds
        if getattr(args, "participation", None) is not None:
            overrides["participation"] = args.participation
        if overrides:
            cfg = resolve_config({**dataclasses.asdict(cfg), **overrides})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - map any stage failure to exit 2
        log.exception("runtime failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
