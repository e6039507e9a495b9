"""Exact 1-Wasserstein distances, linear transport embeddings, and client dissimilarities.

Datasets are uniform empirical distributions (one row per sample). Each client
is embedded against a shared reference dataset through the barycentric
projection of its optimal transport plan; pairwise L1 distances between
embeddings give the dissimilarity matrix that drives the constrained training
problem.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

__all__ = [
    "Dataset",
    "TransportPlan",
    "Embedding",
    "joint_encode",
    "ground_cost",
    "solve_ot_exact",
    "solve_ot_sinkhorn",
    "round_to_marginals",
    "wasserstein1",
    "wasserstein1_1d_oracle",
    "barycentric_map",
    "embed",
    "dissimilarity_matrix",
    "pooled_standardizer",
    "client_embeddings",
    "client_dissimilarity",
]


@dataclass
class Dataset:
    """Uniformly weighted empirical distribution; row order carries no meaning."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("dataset must be a 2-d array with at least one row")
        if not np.all(np.isfinite(rows)):
            raise ValueError("dataset entries must be finite")
        self.rows = rows

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass
class TransportPlan:
    """Coupling between two uniform empirical distributions."""

    entries: np.ndarray
    objective: float


@dataclass
class Embedding:
    """Linearized transport representation of one dataset against the reference."""

    phi: np.ndarray


def joint_encode(features, labels, label_weight: float = 1.0) -> Dataset:
    """Concatenate features and scaled labels into joint-space sample rows."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if label_weight <= 0:
        raise ValueError("label_weight must be positive")
    if features.ndim != 2:
        raise ValueError("features must be a 2-d array")
    if labels.shape != (features.shape[0],):
        raise ValueError(
            f"got {features.shape[0]} feature rows but {labels.shape} labels"
        )
    return Dataset(np.column_stack([features, label_weight * labels]))


def ground_cost(a: Dataset, b: Dataset) -> np.ndarray:
    """Euclidean distances between all sample pairs of two datasets."""
    if a.dim != b.dim:
        raise ValueError(f"joint dimensions differ: {a.dim} vs {b.dim}")
    return cdist(a.rows, b.rows)


def _validate_cost(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a non-empty 2-d array")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    if np.any(cost < 0):
        raise ValueError("cost entries must be nonnegative")
    return cost


def solve_ot_exact(cost) -> TransportPlan:
    """Optimal coupling for uniform marginals via the transportation LP.

    Solved with the HiGHS dual simplex, so the returned plan is an optimal
    basic feasible solution (a vertex of the transportation polytope).
    """
    cost = _validate_cost(cost)
    n0, n1 = cost.shape
    row_sums = sparse.kron(sparse.eye(n0), np.ones((1, n1)))
    col_sums = sparse.kron(np.ones((1, n0)), sparse.eye(n1))
    a_eq = sparse.vstack([row_sums, col_sums], format="csc")
    b_eq = np.concatenate([np.full(n0, 1.0 / n0), np.full(n1, 1.0 / n1)])
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if not res.success:
        raise RuntimeError(f"transportation LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(n0, n1), 0.0)
    return TransportPlan(entries=plan, objective=float(np.vdot(plan, cost)))


def round_to_marginals(plan, row_marginal, col_marginal) -> np.ndarray:
    """Project an approximate coupling onto the transportation polytope.

    Scales rows then columns down to their targets and tops up the residual
    mass with a rank-one correction; the result has the exact marginals.
    """
    plan = np.asarray(plan, dtype=float)
    r = np.asarray(row_marginal, dtype=float)
    c = np.asarray(col_marginal, dtype=float)
    row = plan.sum(axis=1)
    x = np.where(row > 0, np.minimum(1.0, r / np.where(row > 0, row, 1.0)), 0.0)
    plan = plan * x[:, None]
    col = plan.sum(axis=0)
    y = np.where(col > 0, np.minimum(1.0, c / np.where(col > 0, col, 1.0)), 0.0)
    plan = plan * y[None, :]
    err_r = r - plan.sum(axis=1)
    err_c = c - plan.sum(axis=0)
    total = err_r.sum()
    if total > 0:
        plan = plan + np.outer(err_r, err_c) / total
    return plan


def solve_ot_sinkhorn(cost, reg: float, max_iter: int = 1000) -> TransportPlan:
    """Entropically regularized coupling, rounded back to exact uniform marginals.

    The rounded plan is feasible, so its objective upper-bounds the exact
    optimum. Non-convergence within max_iter is reported as a warning.
    """
    cost = _validate_cost(cost)
    if reg <= 0:
        raise ValueError("reg must be positive")
    n0, n1 = cost.shape
    a = np.full(n0, 1.0 / n0)
    b = np.full(n1, 1.0 / n1)
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(n0)
    g = np.zeros(n1)
    converged = False
    for _ in range(max_iter):
        f = reg * (log_a - logsumexp((g[None, :] - cost) / reg, axis=1))
        g = reg * (log_b - logsumexp((f[:, None] - cost) / reg, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / reg)
        err = max(
            np.abs(plan.sum(axis=1) - a).max(), np.abs(plan.sum(axis=0) - b).max()
        )
        if err < 1e-9:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"Sinkhorn did not converge in {max_iter} iterations "
            f"(marginal error {err:.2e}); rounding the last iterate",
            RuntimeWarning,
        )
    plan = round_to_marginals(plan, a, b)
    return TransportPlan(entries=plan, objective=float(np.vdot(plan, cost)))


def wasserstein1(a: Dataset, b: Dataset) -> float:
    """Exact 1-Wasserstein distance between two datasets."""
    return solve_ot_exact(ground_cost(a, b)).objective


def wasserstein1_1d_oracle(a, b) -> float:
    """Sorted-matching value of W1 for equal-size 1-d samples.

    Independent of the LP path: for equal-size uniform empirical measures on
    the line, the monotone matching of order statistics is optimal.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("inputs must have equal length")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def barycentric_map(plan: TransportPlan, client: Dataset) -> np.ndarray:
    """Barycentric projection of the coupling: row j is where reference point j lands."""
    n0, ni = plan.entries.shape
    if ni != client.n:
        raise ValueError(f"plan has {ni} columns but client has {client.n} rows")
    return n0 * (plan.entries @ client.rows)


def embed(m, reference: Dataset) -> Embedding:
    """Centered, scale-normalized transport map against the reference."""
    m = np.asarray(m, dtype=float)
    if m.shape != reference.rows.shape:
        raise ValueError(
            f"map shape {m.shape} does not match reference {reference.rows.shape}"
        )
    return Embedding(phi=(m - reference.rows) / np.sqrt(reference.n))


def dissimilarity_matrix(embeddings: list[Embedding]) -> np.ndarray:
    """Pairwise entrywise-L1 distances between embeddings.

    Symmetric with a zero diagonal, and satisfies the triangle inequality
    because it is a norm of differences.
    """
    shapes = {e.phi.shape for e in embeddings}
    if len(shapes) > 1:
        raise ValueError(f"embeddings have mismatched shapes: {shapes}")
    n = len(embeddings)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            val = float(np.abs(embeddings[i].phi - embeddings[j].phi).sum())
            d[i, j] = val
            d[j, i] = val
    return d


def pooled_standardizer(features_list, labels_list):
    """Per-coordinate mean/std over the pooled rows of all clients.

    Constant coordinates keep scale 1 so standardization stays finite.
    """
    x = np.vstack([np.asarray(f, dtype=float) for f in features_list])
    y = np.concatenate([np.asarray(l, dtype=float) for l in labels_list])
    sx = x.std(axis=0)
    sy = y.std()
    return (
        x.mean(axis=0),
        np.where(sx > 1e-12, sx, 1.0),
        y.mean(),
        sy if sy > 1e-12 else 1.0,
    )


def client_embeddings(
    features_list,
    labels_list,
    rng: np.random.Generator,
    n_reference: int = 50,
    label_weight: float = 1.0,
    solver: str = "exact",
    sinkhorn_reg: float = 0.05,
    threads: int = 1,
):
    """Embed every client against one shared standard-normal reference.

    Client rows are standardized with pooled per-coordinate statistics, then
    joint-encoded; the reference is drawn from the standard normal in the same
    standardized joint space. Returns (embeddings, reference) with embeddings
    in client-index order regardless of thread schedule.
    """
    mx, sx, my, sy = pooled_standardizer(features_list, labels_list)
    encoded = [
        joint_encode((np.asarray(f, dtype=float) - mx) / sx,
                     (np.asarray(l, dtype=float) - my) / sy,
                     label_weight)
        for f, l in zip(features_list, labels_list)
    ]
    dim = encoded[0].dim - 1
    reference = joint_encode(
        rng.standard_normal((n_reference, dim)),
        rng.standard_normal(n_reference),
        label_weight,
    )

    def one(ds: Dataset) -> Embedding:
        cost = ground_cost(reference, ds)
        if solver == "sinkhorn":
            plan = solve_ot_sinkhorn(cost, sinkhorn_reg)
        else:
            plan = solve_ot_exact(cost)
        return embed(barycentric_map(plan, ds), reference)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            embeddings = list(pool.map(one, encoded))
    else:
        embeddings = [one(ds) for ds in encoded]
    return embeddings, reference


def client_dissimilarity(features_list, labels_list, rng, **kwargs):
    """Full dissimilarity pipeline: returns (matrix, embeddings, reference)."""
    embeddings, reference = client_embeddings(features_list, labels_list, rng, **kwargs)
    return dissimilarity_matrix(embeddings), embeddings, reference
