"""Metrics, cross-validation of the coupling level, and numerical theory checks."""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .clients import (
    Client,
    ClientData,
    RidgeObjective,
    kfold_split,
    make_clients,
    ridge_exact_solve,
    smoothness_constant,
)
from .geometry import FeasibleSet
from .otcore import client_dissimilarity, joint_encode, wasserstein1
from .seeding import substream
from .server import AlgoConfig, RoundLog, run_strategy

__all__ = [
    "EstimationError",
    "AnalysisConstants",
    "CVResult",
    "Prop1Report",
    "Theorem1Report",
    "estimation_error",
    "r2_score",
    "model_sq_distances",
    "cross_validate_t",
    "compute_constants",
    "measure_oracle_mse",
    "check_prop1",
    "check_theorem1",
    "heatmap_export",
    "upper_triangle_spearman",
    "pilot_noise_sweep",
    "summarize_runs",
]


@dataclass
class EstimationError:
    value: float
    se: float
    per_client: np.ndarray


@dataclass
class AnalysisConstants:
    """Constants entering the convergence bound and the ideal-model check."""

    l_smooth: float
    sigma_sq_hat: float = 0.0
    gamma: float = 0.0
    l_x: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        for name in ("l_smooth", "sigma_sq_hat", "gamma", "l_x", "epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class CVResult:
    t: float
    mean_scores: dict
    fold_scores: dict


def estimation_error(models, truth) -> EstimationError:
    """Mean over clients of squared parameter distance, with its standard error."""
    models = np.asarray(models, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if models.shape != truth.shape:
        raise ValueError(f"shape mismatch: {models.shape} vs {truth.shape}")
    per = np.sum((models - truth) ** 2, axis=1)
    n = per.size
    se = float(per.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EstimationError(value=float(per.mean()), se=se, per_client=per)


def r2_score(models, test_sets) -> float:
    """Sample-size-weighted mean held-out R^2 across clients.

    Clients whose test responses have zero variance are excluded with a
    warning since R^2 is undefined there.
    """
    models = np.asarray(models, dtype=float)
    if len(test_sets) == 0:
        raise ValueError("need at least one test set")
    vals, weights = [], []
    for i, ds in enumerate(test_sets):
        ss_tot = float(np.sum((ds.y - ds.y.mean()) ** 2))
        if ss_tot == 0:
            warnings.warn(f"client {i} has zero-variance test responses; excluded")
            continue
        ss_res = float(np.sum((ds.y - ds.x @ models[i]) ** 2))
        vals.append(1.0 - ss_res / ss_tot)
        weights.append(ds.n_samples)
    if not vals:
        raise ValueError("all clients excluded from R^2")
    return float(np.average(vals, weights=weights))


def per_client_r2(models, test_sets) -> np.ndarray:
    models = np.asarray(models, dtype=float)
    out = np.full(len(test_sets), np.nan)
    for i, ds in enumerate(test_sets):
        ss_tot = float(np.sum((ds.y - ds.y.mean()) ** 2))
        if ss_tot > 0:
            out[i] = 1.0 - float(np.sum((ds.y - ds.x @ models[i]) ** 2)) / ss_tot
    return out


def model_sq_distances(stack) -> np.ndarray:
    """Pairwise squared Euclidean distances between model rows."""
    stack = np.asarray(stack, dtype=float)
    n = stack.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            val = float(np.sum((stack[i] - stack[j]) ** 2))
            out[i, j] = out[j, i] = val
    return out


def _choose_t(t_grid, mean_scores) -> float:
    """Smallest t attaining the minimum mean validation score."""
    grid = sorted(t_grid)
    best = min(mean_scores[t] for t in grid)
    for t in grid:
        if mean_scores[t] == best:
            return t
    raise RuntimeError("unreachable")


def cross_validate_t(
    clients: list[Client],
    t_grid,
    cfg: AlgoConfig,
    rng: np.random.Generator,
    folds: int = 5,
    dissim: np.ndarray | None = None,
    n_reference: int = 50,
    label_weight: float = 1.0,
    cv_rounds: int | None = None,
) -> CVResult:
    """Pick the coupling level by k-fold validation of mean squared prediction error.

    The dissimilarity matrix is computed once on the full training data and
    reused across folds. Clients with fewer samples than folds train on all
    their data in every fold and contribute no validation score. Ties go to
    the smaller t.
    """
    if len(t_grid) == 0:
        raise ValueError("t grid must not be empty")
    if dissim is None:
        dissim, _, _ = client_dissimilarity(
            [c.data.x for c in clients],
            [c.data.y for c in clients],
            rng,
            n_reference=n_reference,
            label_weight=label_weight,
        )
    splits = []
    for c in clients:
        if c.n_samples >= folds:
            splits.append(kfold_split(c.data, folds, rng))
        else:
            splits.append(None)
    lam = clients[0].objective.lam
    rounds = cfg.rounds if cv_rounds is None else cv_rounds
    fold_scores = {float(t): [] for t in t_grid}
    for f in range(folds):
        train_sets, val_sets = [], []
        for c, split in zip(clients, splits):
            if split is None:
                train_sets.append(c.data)
                val_sets.append(None)
            else:
                train_sets.append(split[f][0])
                val_sets.append(split[f][1])
        fold_clients = make_clients(train_sets, lam)
        l_smooth = smoothness_constant(
            [c.data for c in fold_clients], [c.objective for c in fold_clients]
        )
        for t in t_grid:
            fold_cfg = dataclasses.replace(
                cfg, t=float(t), eta=3.0 / (8.0 * l_smooth), rounds=rounds, diag_every=0
            )
            models, _ = run_strategy(
                "karula", fold_clients, fold_cfg, FeasibleSet(float(t), dissim)
            )
            errs = [
                float(np.mean((ds.y - ds.x @ models[i]) ** 2))
                for i, ds in enumerate(val_sets)
                if ds is not None
            ]
            fold_scores[float(t)].append(float(np.mean(errs)))
    mean_scores = {t: float(np.mean(v)) for t, v in fold_scores.items()}
    return CVResult(t=_choose_t(list(mean_scores), mean_scores),
                    mean_scores=mean_scores, fold_scores=fold_scores)


def compute_constants(clients: list[Client], s: int, delta: float = 0.0,
                      sigma_sq: float = 0.0) -> AnalysisConstants:
    """Measured constants for the convergence bound on a ridge instance."""
    l_smooth = smoothness_constant(
        [c.data for c in clients], [c.objective for c in clients]
    )
    gammas = []
    for c in clients:
        h = c.data.x.T @ c.data.x / c.n_samples + c.objective.lam * np.eye(c.data.x.shape[1])
        gammas.append(float(np.linalg.eigvalsh(h)[0]))
    eps = 4.0 * sigma_sq * (s + 1) / s + 2.0 * delta
    return AnalysisConstants(
        l_smooth=l_smooth, sigma_sq_hat=sigma_sq, gamma=min(gammas), epsilon=eps
    )


def measure_oracle_mse(clients, theta, batch_size: int, trials: int,
                       rng: np.random.Generator) -> float:
    """Empirical worst-client mean squared error of the minibatch oracle."""
    worst = 0.0
    for i, c in enumerate(clients):
        full = c.gradient(theta[i]).gradient
        if batch_size >= c.n_samples:
            continue
        errs = np.empty(trials)
        for trial in range(trials):
            g = c.gradient(theta[i], batch=batch_size, rng=rng).gradient
            errs[trial] = float(np.sum((g - full) ** 2))
        worst = max(worst, float(errs.mean()))
    return worst


@dataclass
class Prop1Report:
    lhs: float
    rhs: float
    gamma: float
    l_x: float
    w1: float
    holds: bool


def _discrete_lipschitz(theta, points) -> float:
    """Largest |loss difference| / distance of the squared-error loss over sample pairs.

    The loss is affine-in-data along segments only through its residual, so
    the pairwise ratio over the support is the exact Lipschitz constant of the
    loss restricted to the support, which is what the duality argument needs.
    """
    x = points[:, :-1]
    y = points[:, -1]
    losses = 0.5 * (y - x @ theta) ** 2
    n = points.shape[0]
    best = 0.0
    for i in range(n):
        dist = np.linalg.norm(points[i + 1:] - points[i], axis=1)
        num = np.abs(losses[i + 1:] - losses[i])
        ok = dist > 0
        if np.any(ok):
            best = max(best, float((num[ok] / dist[ok]).max()))
    return best


def check_prop1(
    data_a: ClientData,
    data_b: ClientData,
    lam: float,
    box_bound: float = 10.0,
) -> Prop1Report:
    """Verify that squared ideal-model distance is within (2 L_X / gamma) W1.

    gamma is the exact smallest Hessian eigenvalue across the two quadratic
    losses; L_X is the exact Lipschitz constant of the loss over the union of
    the two empirical supports, maximized over the two ideal models (the only
    models the duality argument evaluates). Ideal models must lie in the
    configured parameter box.
    """
    if lam <= 0:
        raise ValueError("lam must be positive so gamma is bounded away from zero")
    obj = RidgeObjective(lam=lam, alpha=1.0)
    th_a = ridge_exact_solve(data_a, obj)
    th_b = ridge_exact_solve(data_b, obj)
    for th in (th_a, th_b):
        if np.abs(th).max() > box_bound:
            raise ValueError("ideal model outside the parameter box")
    gammas = []
    for data in (data_a, data_b):
        h = data.x.T @ data.x / data.n_samples + lam * np.eye(data.x.shape[1])
        gammas.append(float(np.linalg.eigvalsh(h)[0]))
    gamma = min(gammas)
    enc_a = joint_encode(data_a.x, data_a.y)
    enc_b = joint_encode(data_b.x, data_b.y)
    w1 = wasserstein1(enc_a, enc_b)
    points = np.vstack([enc_a.rows, enc_b.rows])
    l_x = max(_discrete_lipschitz(th_a, points), _discrete_lipschitz(th_b, points))
    lhs = float(np.sum((th_a - th_b) ** 2))
    rhs = 2.0 * l_x / gamma * w1
    return Prop1Report(lhs=lhs, rhs=rhs, gamma=gamma, l_x=l_x, w1=w1,
                       holds=lhs <= rhs + 1e-12)


@dataclass
class Theorem1Report:
    k_values: np.ndarray
    min_so_far: np.ndarray
    rhs: np.ndarray
    rhs_blockwise: np.ndarray
    delta_max: float
    epsilon: float
    holds: bool
    decay_exponent: float


def check_theorem1(
    logs: list[RoundLog],
    constants: AnalysisConstants,
    cfg: AlgoConfig,
    n_clients: int,
    f_star_lower: float = 0.0,
) -> Theorem1Report:
    """Check min-so-far squared gradient mapping against the convergence bound.

    The unknown optimum is replaced by a certified lower bound (zero for
    nonnegative ridge losses), which can only loosen the right-hand side.
    Reported under both smoothness conventions: the per-client weighted
    constant L used for the step size, and the n-times-smaller blockwise
    constant of the averaged objective.
    """
    diag = [(log.round, log.grad_mapping_sq) for log in logs
            if log.grad_mapping_sq is not None]
    if not diag:
        raise ValueError("trace has no gradient-mapping diagnostics")
    if not logs or logs[0].round != 0:
        raise ValueError("trace must start at round 0")
    f0 = logs[0].objective
    delta_max = max((log.delta_hat for log in logs), default=0.0)
    s = cfg.s
    eps = 4.0 * constants.sigma_sq_hat * (s + 1) / s + 2.0 * delta_max
    l = constants.l_smooth
    l_block = l / n_clients
    ks, mins = [], []
    best = np.inf
    for r, gsq in diag:
        best = min(best, gsq)
        ks.append(r + 1)  # bound covers rounds 0..r, i.e. K = r + 1
        mins.append(best)
    ks = np.asarray(ks, dtype=float)
    mins = np.asarray(mins)
    rhs = (8.0 * l / 3.0) * ((f0 - f_star_lower) / ks + eps)
    rhs_block = (8.0 * l_block / 3.0) * ((f0 - f_star_lower) / ks + eps)
    holds = bool(np.all(mins <= rhs))
    positive = mins > 0
    if positive.sum() >= 2:
        slope = float(np.polyfit(np.log(ks[positive]), np.log(mins[positive]), 1)[0])
    else:
        slope = 0.0
    return Theorem1Report(
        k_values=ks, min_so_far=mins, rhs=rhs, rhs_blockwise=rhs_block,
        delta_max=delta_max, epsilon=eps, holds=holds, decay_exponent=slope,
    )


def upper_triangle_spearman(a, b) -> float:
    """Spearman rank correlation of the strict upper triangles of two matrices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    iu = np.triu_indices(a.shape[0], 1)
    rho = spearmanr(a[iu], b[iu]).statistic
    return float(rho)


def heatmap_export(matrices: dict, out_dir, truth_key: str = "ground_truth",
                   header: str | None = None) -> dict:
    """Write one CSV per named square matrix; return Spearman correlations vs truth."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shapes = {np.asarray(m).shape for m in matrices.values()}
    if len(shapes) != 1 or any(s[0] != s[1] for s in shapes):
        raise ValueError("matrices must be square and share one shape")
    for name, mat in matrices.items():
        mat = np.asarray(mat, dtype=float)
        lines = [] if header is None else [header]
        lines += [",".join(f"{v:.12g}" for v in row) for row in mat]
        (out_dir / f"heatmap_{name}.csv").write_text("\n".join(lines) + "\n")
    truth = matrices[truth_key]
    return {
        name: upper_triangle_spearman(mat, truth)
        for name, mat in matrices.items()
        if name != truth_key
    }


def pilot_noise_sweep(cfg, noise_grid, rng_factory) -> list[dict]:
    """Compare per-client and pooled ridge estimation error across noise levels.

    Cheap closed-form proxies for the Local and global-model baselines; used
    to locate the regime where pooling beats purely local estimation.
    """
    from .clients import generate_synthetic
    import dataclasses as dc

    rows = []
    for noise in noise_grid:
        c = dc.replace(cfg, noise_std=float(noise))
        train, truth, _, _ = generate_synthetic(c, rng_factory(noise))
        clients = make_clients(train, lam=1e-6)
        local = np.stack([cl.exact_solve() for cl in clients])
        d = train[0].x.shape[1]
        h = sum(cl.objective.alpha * (cl.data.x.T @ cl.data.x / cl.n_samples)
                for cl in clients) / len(clients) + 1e-6 * np.eye(d)
        b = sum(cl.objective.alpha * (cl.data.x.T @ cl.data.y / cl.n_samples)
                for cl in clients) / len(clients)
        pooled = np.linalg.solve(h, b)
        rows.append({
            "noise_std": float(noise),
            "local_error": estimation_error(local, truth).value,
            "global_error": estimation_error(np.tile(pooled, (len(clients), 1)), truth).value,
        })
    return rows


def summarize_runs(per_seed: list[dict]) -> list[dict]:
    """Table rows (mean and 2*SE across seeds) per strategy.

    per_seed: one dict per seed mapping strategy -> {"estimation_error", "r2"}.
    """
    if len(per_seed) < 2:
        raise ValueError("need at least two repetitions for standard errors")
    strategies = list(per_seed[0])
    rows = []
    for strat in strategies:
        errs = np.array([m[strat]["estimation_error"] for m in per_seed])
        r2s = np.array([m[strat]["r2"] for m in per_seed])
        rows.append({
            "strategy": strat,
            "estimation_error": float(errs.mean()),
            "est_err_2se": float(2.0 * errs.std(ddof=1) / np.sqrt(errs.size)),
            "r2": float(r2s.mean()),
            "r2_2se": float(2.0 * r2s.std(ddof=1) / np.sqrt(r2s.size)),
        })
    return rows
