"""Training strategies: variance-reduced constrained training plus baselines.

The main strategy keeps a SAGA-style table of the latest per-client weighted
gradients. Each round the sampled clients refresh their blocks, the estimator
corrects the stale table, and the server takes an inexact projected gradient
step onto the pairwise-constrained feasible set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .clients import Client
from .geometry import FeasibleSet, dykstra_project, gradient_mapping
from .seeding import substream

__all__ = [
    "VRState",
    "AlgoConfig",
    "RoundLog",
    "stack_objective",
    "full_gradient",
    "karula_init",
    "sample_participants",
    "vr_update",
    "karula_round",
    "fedavg_round",
    "ifca_round",
    "local_train",
    "run_strategy",
]


@dataclass
class VRState:
    """Anchors phi, stored weighted-gradient table g (rows alpha_i grad_i / n), estimator nu."""

    phi: np.ndarray
    g: np.ndarray
    nu: np.ndarray | None = None


@dataclass
class AlgoConfig:
    eta: float
    s: int
    rounds: int
    t: float = 0.0
    proj_tol: float = 1e-6
    max_sweeps: int = 500
    batch_size: int = 0  # 0 = full gradients
    seed: int = 0
    diag_every: int = 0  # 0 = no gradient-mapping diagnostics
    nu_scaling: str = "lemma"  # "lemma" (unbiased n/s) or "verbatim" (1/s)
    local_steps: int = 5  # fedavg
    clusters: int = 3  # ifca
    log_objective: bool = True  # skipped by inner cross-validation loops

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")
        if self.s < 1:
            raise ValueError("participation size must be at least 1")
        if self.nu_scaling not in ("lemma", "verbatim"):
            raise ValueError("nu_scaling must be 'lemma' or 'verbatim'")


@dataclass
class RoundLog:
    round: int
    participants: tuple
    objective: float
    grad_mapping_sq: float | None = None
    proj_sweeps: int = 0
    delta_hat: float = 0.0
    wall_time: float = 0.0
    proj_converged: bool = True


def stack_objective(clients: list[Client], theta) -> float:
    """f(theta) = (1/n) sum_i alpha_i * empirical loss_i(theta_i)."""
    return float(
        np.mean([c.objective.alpha * c.loss(theta[i]) for i, c in enumerate(clients)])
    )


def full_gradient(clients: list[Client], theta) -> np.ndarray:
    """Deterministic stacked gradient of f: row i is alpha_i grad_i(theta_i) / n."""
    n = len(clients)
    return np.stack([c.gradient(theta[i]).gradient for i, c in enumerate(clients)]) / n


def _batch_for(client: Client, cfg: AlgoConfig, round_key) -> tuple:
    if cfg.batch_size <= 0 or cfg.batch_size >= client.n_samples:
        return None, None
    rng = substream(cfg.seed, "batch", client.client_id, round_key)
    return cfg.batch_size, rng


def karula_init(clients: list[Client], cfg: AlgoConfig, theta0=None):
    """Initial stack and gradient table; zero rows (feasible everywhere) by default.

    An explicit theta0 must already be feasible for the set it will train on.
    """
    n = len(clients)
    p = clients[0].data.x.shape[1]
    theta0 = np.zeros((n, p)) if theta0 is None else np.array(theta0, dtype=float)
    g = np.empty((n, p))
    for i, c in enumerate(clients):
        size, rng = _batch_for(c, cfg, "init")
        g[i] = c.gradient(theta0[i], batch=size, rng=rng).gradient / n
    return theta0, VRState(phi=theta0.copy(), g=g)


def sample_participants(n: int, s: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of s distinct clients, returned in ascending order."""
    if not 1 <= s <= n:
        raise ValueError(f"participation size {s} outside [1, {n}]")
    return np.sort(rng.choice(n, size=s, replace=False))


def vr_update(state: VRState, theta, replies: dict, s: int, scaling: str = "lemma") -> np.ndarray:
    """Refresh sampled blocks of the gradient table and form the round estimator.

    With the "lemma" scaling nu = g + (n/s)(g_new - g_old) the estimator is
    unbiased for the stacked gradient given the stored table; "verbatim" uses
    1/s instead. Anchors and table rows of non-participants are untouched.
    """
    n = state.g.shape[0]
    if len(replies) != s:
        raise ValueError(f"expected {s} replies, got {len(replies)}")
    diff = np.zeros_like(state.g)
    for i in sorted(replies):
        if not 0 <= i < n:
            raise ValueError(f"reply from unknown client {i}")
        new_block = np.asarray(replies[i], dtype=float) / n
        diff[i] = new_block - state.g[i]
        state.g[i] = new_block
        state.phi[i] = np.asarray(theta[i], dtype=float).copy()
    factor = n / s if scaling == "lemma" else 1.0 / s
    nu = (state.g - diff) + factor * diff
    state.nu = nu
    return nu


def karula_round(
    theta,
    state: VRState,
    k: FeasibleSet,
    cfg: AlgoConfig,
    clients: list[Client],
    rng: np.random.Generator,
    round_index: int = 0,
):
    """One communication round: sample, refresh, estimate, project."""
    t0 = time.perf_counter()
    part = sample_participants(len(clients), cfg.s, rng)
    replies = {}
    for i in part:
        i = int(i)
        size, brng = _batch_for(clients[i], cfg, round_index)
        replies[i] = clients[i].gradient(theta[i], batch=size, rng=brng).gradient
    nu = vr_update(state, theta, replies, cfg.s, cfg.nu_scaling)
    proj = dykstra_project(theta - cfg.eta * nu, k, cfg.eta, cfg.proj_tol, cfg.max_sweeps)
    log = RoundLog(
        round=round_index,
        participants=tuple(int(i) for i in part),
        objective=stack_objective(clients, theta) if cfg.log_objective else np.nan,
        proj_sweeps=proj.sweeps,
        delta_hat=proj.delta_hat,
        wall_time=time.perf_counter() - t0,
        proj_converged=proj.converged,
    )
    return proj.point, log


def fedavg_round(
    global_theta,
    clients: list[Client],
    eta: float,
    participants,
    local_steps: int = 5,
    batch_size: int = 0,
    seed: int = 0,
    round_index: int = 0,
) -> np.ndarray:
    """Participants take local gradient steps; server returns their weighted average."""
    participants = list(participants)
    if len(participants) == 0:
        raise ValueError("participant set must not be empty")
    if local_steps < 1:
        raise ValueError("local_steps must be at least 1")
    acc = np.zeros_like(np.asarray(global_theta, dtype=float))
    weight = 0.0
    for i in participants:
        c = clients[int(i)]
        th = np.array(global_theta, dtype=float)
        for step in range(local_steps):
            if 0 < batch_size < c.n_samples:
                rng = substream(seed, "batch", c.client_id, round_index, step)
                th -= eta * c.local_gradient(th, batch=batch_size, rng=rng)
            else:
                th -= eta * c.local_gradient(th)
        acc += c.objective.alpha * th
        weight += c.objective.alpha
    return acc / weight


def ifca_round(cluster_models, clients: list[Client], eta: float, participants):
    """Participants join the lowest-loss cluster and push one weighted gradient step.

    Ties go to the lowest cluster index; clusters without members are left
    unchanged. Returns (updated models, participant assignments).
    """
    models = np.array(cluster_models, dtype=float)
    if models.ndim != 2 or models.shape[0] < 1:
        raise ValueError("need at least one cluster model")
    n_clusters = models.shape[0]
    assignments = {}
    grad_acc = np.zeros_like(models)
    weight = np.zeros(n_clusters)
    for i in participants:
        c = clients[int(i)]
        losses = [c.loss(models[j]) for j in range(n_clusters)]
        j = int(np.argmin(losses))
        assignments[int(i)] = j
        grad_acc[j] += c.objective.alpha * c.local_gradient(models[j])
        weight[j] += c.objective.alpha
    for j in range(n_clusters):
        if weight[j] > 0:
            models[j] -= eta * grad_acc[j] / weight[j]
    return models, assignments


def local_train(
    clients: list[Client],
    eta: float | None = None,
    steps: int = 100,
    use_exact: bool = False,
) -> np.ndarray:
    """Independent training per client: gradient descent, or the exact ridge solve.

    eta=None picks the safe per-client step 1/L_i from the local smoothness.
    """
    p = clients[0].data.x.shape[1]
    theta = np.zeros((len(clients), p))
    for i, c in enumerate(clients):
        if use_exact:
            theta[i] = c.exact_solve()
            continue
        if eta is None:
            from .clients import _power_sigma_max

            li = _power_sigma_max(c.data.x) / c.n_samples + c.objective.lam
            step = 1.0 / li if li > 0 else 1.0
        else:
            step = eta
        th = np.zeros(p)
        for _ in range(steps):
            th -= step * c.local_gradient(th)
        theta[i] = th
    return theta


def _ifca_assign_all(models, clients):
    rows = np.empty((len(clients), models.shape[1]))
    for i, c in enumerate(clients):
        losses = [c.loss(models[j]) for j in range(models.shape[0])]
        rows[i] = models[int(np.argmin(losses))]
    return rows


def run_strategy(
    strategy: str,
    clients: list[Client],
    cfg: AlgoConfig,
    k: FeasibleSet | None = None,
):
    """Drive K rounds of one strategy; deterministic given cfg.seed.

    Logs the objective every round and the squared gradient-mapping norm
    (full deterministic gradients, tightened projection) every diag_every
    rounds. Returns (final model stack, round logs).
    """
    n = len(clients)
    p = clients[0].data.x.shape[1]
    part_rng = substream(cfg.seed, "participation")
    logs: list[RoundLog] = []

    if strategy == "karula":
        if k is None:
            raise ValueError("karula needs a feasible set")
        theta, state = karula_init(clients, cfg)
        for r in range(cfg.rounds):
            diag = None
            if cfg.diag_every > 0 and r % cfg.diag_every == 0:
                gm = gradient_mapping(
                    theta, full_gradient(clients, theta), cfg.eta, k, cfg.proj_tol
                )
                diag = gm.sq_norm
            theta, log = karula_round(theta, state, k, cfg, clients, part_rng, r)
            log.grad_mapping_sq = diag
            logs.append(log)
        return theta, logs

    if strategy == "fedavg":
        g = np.zeros(p)
        for r in range(cfg.rounds):
            t0 = time.perf_counter()
            part = sample_participants(n, cfg.s, part_rng)
            stack = np.tile(g, (n, 1))
            obj = stack_objective(clients, stack)
            g = fedavg_round(
                g, clients, cfg.eta, part,
                local_steps=cfg.local_steps, batch_size=cfg.batch_size,
                seed=cfg.seed, round_index=r,
            )
            logs.append(RoundLog(r, tuple(int(i) for i in part), obj,
                                 wall_time=time.perf_counter() - t0))
        return np.tile(g, (n, 1)), logs

    if strategy == "ifca":
        # near-tie initialization: cluster separation must be discovered from
        # the data, which bifurcates far more reliably than wide random starts
        init_rng = substream(cfg.seed, "ifca-init")
        models = 0.01 * init_rng.standard_normal((cfg.clusters, p))
        for r in range(cfg.rounds):
            t0 = time.perf_counter()
            part = sample_participants(n, cfg.s, part_rng)
            obj = stack_objective(clients, _ifca_assign_all(models, clients))
            models, _ = ifca_round(models, clients, cfg.eta, part)
            logs.append(RoundLog(r, tuple(int(i) for i in part), obj,
                                 wall_time=time.perf_counter() - t0))
        return _ifca_assign_all(models, clients), logs

    if strategy == "local":
        theta = np.zeros((n, p))
        steps = np.empty(n)
        for i, c in enumerate(clients):
            from .clients import _power_sigma_max

            li = _power_sigma_max(c.data.x) / c.n_samples + c.objective.lam
            steps[i] = 1.0 / li if li > 0 else 1.0
        for r in range(cfg.rounds):
            t0 = time.perf_counter()
            obj = stack_objective(clients, theta)
            for i, c in enumerate(clients):
                theta[i] -= steps[i] * c.local_gradient(theta[i])
            logs.append(RoundLog(r, tuple(range(n)), obj,
                                 wall_time=time.perf_counter() - t0))
        return theta, logs

    raise ValueError(f"unknown strategy {strategy!r}")
