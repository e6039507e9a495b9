"""Pairwise-constrained feasible sets, inexact Dykstra projections, gradient mapping.

The feasible set couples the stacked per-client models through
``||theta_i - theta_j||^2 <= t * d_ij``. Clients connected by zero
dissimilarity must share one model, so their rows are merged before
projecting; the merged problem carries group-size weights to keep the
projection geometry exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "FeasibleSet",
    "ProjectionResult",
    "GradientMappingValue",
    "merge_zero_groups",
    "pair_project",
    "is_feasible",
    "feasibility_restore",
    "dykstra_project",
    "gradient_mapping",
]

# relative contraction slack so restored points stay strictly inside float noise
_RESTORE_MARGIN = 1e-13


@dataclass
class ProjectionResult:
    point: np.ndarray
    sweeps: int
    max_violation_before_restore: float
    delta_hat: float
    converged: bool = True


@dataclass
class GradientMappingValue:
    g_map: np.ndarray
    sq_norm: float


def merge_zero_groups(d, tol: float = 1e-12) -> list[list[int]]:
    """Connected components of the zero-dissimilarity graph.

    Zero edges force equal models and the relation is transitive across the
    component, so each component shares a single model row.
    """
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    seen = np.zeros(n, dtype=bool)
    groups = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in np.flatnonzero(d[i] <= tol):
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        groups.append(sorted(comp))
    return groups


def _validate_dissimilarity(d: np.ndarray):
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("dissimilarity matrix must be square")
    if not np.all(np.isfinite(d)):
        raise ValueError("dissimilarity entries must be finite")
    if np.any(d < 0):
        raise ValueError("dissimilarity entries must be nonnegative")
    if np.any(np.diag(d) != 0):
        raise ValueError("dissimilarity diagonal must be zero")
    if not np.array_equal(d, d.T):
        raise ValueError("dissimilarity matrix must be symmetric")


class FeasibleSet:
    """K = {theta : ||theta_i - theta_j||^2 <= t * d_ij} for a coupling level t."""

    def __init__(self, t: float, d):
        d = np.array(d, dtype=float)
        _validate_dissimilarity(d)
        if t < 0:
            raise ValueError("t must be nonnegative")
        self.t = float(t)
        self.d = d
        self.n = d.shape[0]
        self.radii = np.sqrt(self.t * d)
        self.zero_groups = merge_zero_groups(d)
        # t = 0 collapses every pair, not just zero-dissimilarity ones
        groups = [list(range(self.n))] if self.t == 0 else self.zero_groups
        self._groups = [np.asarray(g, dtype=int) for g in groups]
        self._m = len(groups)
        self._member_of = np.empty(self.n, dtype=int)
        for gi, g in enumerate(self._groups):
            self._member_of[g] = gi
        self._w = np.array([len(g) for g in self._groups], dtype=float)
        m = self._m
        red = np.zeros((m, m))
        for gi in range(m):
            for gj in range(gi + 1, m):
                block = self.d[np.ix_(self._groups[gi], self._groups[gj])]
                red[gi, gj] = red[gj, gi] = np.sqrt(self.t * block.min())
        self._reduced_radii = red
        # fixed lexicographic sweep order over merged pairwise constraints
        iu = np.triu_indices(m, 1)
        self._pairs_i = iu[0].astype(np.int64)
        self._pairs_j = iu[1].astype(np.int64)
        self._pairs_r = red[iu]


def pair_project(a, b, r: float):
    """Closest pair to (a, b) with ||a' - b'|| <= r; identity when feasible."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if r < 0:
        raise ValueError("r must be nonnegative")
    diff = a - b
    dist = float(np.linalg.norm(diff))
    if dist <= r:
        return a.copy(), b.copy()
    mid = 0.5 * (a + b)
    u = diff / dist
    return mid + 0.5 * r * u, mid - 0.5 * r * u


def is_feasible(theta, k: FeasibleSet, tol: float = 0.0):
    """Whether theta satisfies every pairwise constraint; also the worst slack.

    The returned value is max over pairs of ||theta_i - theta_j||^2 - t*d_ij
    (so it is <= 0 strictly inside the set); 0.0 when there are no pairs.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != k.n:
        raise ValueError(f"stack has {theta.shape[0]} rows, feasible set has {k.n}")
    if k.n == 1:
        return True, 0.0
    sq = cdist(theta, theta, "sqeuclidean")
    viol = sq - k.t * k.d
    iu = np.triu_indices(k.n, 1)
    worst = float(viol[iu].max())
    return worst <= tol, worst


def feasibility_restore(theta, k: FeasibleSet) -> np.ndarray:
    """Contract toward the row centroid until every pairwise constraint holds.

    Expects rows of zero-dissimilarity groups to have been averaged already;
    rows at distance zero impose nothing, all others bound the contraction.
    """
    theta = np.asarray(theta, dtype=float)
    if k.n == 1:
        return theta.copy()
    c = theta.mean(axis=0)
    iu = np.triu_indices(k.n, 1)
    dist = np.sqrt(cdist(theta, theta, "sqeuclidean")[iu])
    radii = k.radii[iu]
    active = dist > 0
    if not np.any(active):
        return theta.copy()
    lam = float(np.min(radii[active] / dist[active]))
    if lam >= 1.0:
        return theta.copy()
    lam *= 1.0 - _RESTORE_MARGIN
    return c + lam * (theta - c)


def _reduced_restore(x, k: FeasibleSet):
    # same contraction as feasibility_restore but in merged coordinates,
    # with the weighted centroid (= centroid of the full stack)
    c = (k._w[:, None] * x).sum(axis=0) / k._w.sum()
    diff = x[k._pairs_i] - x[k._pairs_j]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    active = dist > 0
    if not np.any(active):
        return x.copy()
    lam = float(np.min(k._pairs_r[active] / dist[active]))
    if lam >= 1.0:
        return x.copy()
    lam *= 1.0 - _RESTORE_MARGIN
    return c + lam * (x - c)


@numba.njit(cache=True)
def _dykstra_sweeps(x, w, pi, pj, r, tol, max_sweeps):
    """Cyclic weighted pair projections with one correction vector per constraint.

    Mutates x in place; returns (sweeps, converged). Convergence requires both
    the iterate and the corrections to settle over a full sweep, since the
    iterate alone can stall for a sweep while corrections rebalance.
    """
    n_pairs = pi.shape[0]
    m, p = x.shape
    q = np.zeros((n_pairs, 2, p))
    x_prev = np.empty((m, p))
    sweeps = 0
    for sweep in range(1, max_sweeps + 1):
        sweeps = sweep
        x_prev[:] = x
        q_move = 0.0
        for c in range(n_pairs):
            i = pi[c]
            j = pj[c]
            wi = w[i]
            wj = w[j]
            dist2 = 0.0
            for kk in range(p):
                diff = (x[i, kk] + q[c, 0, kk]) - (x[j, kk] + q[c, 1, kk])
                dist2 += diff * diff
            dist = np.sqrt(dist2)
            if dist > r[c]:
                shift = (dist - r[c]) / dist
                ci = wj / (wi + wj)
                cj = wi / (wi + wj)
                for kk in range(p):
                    a = x[i, kk] + q[c, 0, kk]
                    b = x[j, kk] + q[c, 1, kk]
                    step = shift * (a - b)
                    a2 = a - ci * step
                    b2 = b + cj * step
                    nq0 = a - a2
                    nq1 = b - b2
                    dq0 = nq0 - q[c, 0, kk]
                    dq1 = nq1 - q[c, 1, kk]
                    q_move += wi * dq0 * dq0 + wj * dq1 * dq1
                    x[i, kk] = a2
                    x[j, kk] = b2
                    q[c, 0, kk] = nq0
                    q[c, 1, kk] = nq1
            else:
                for kk in range(p):
                    q_move += wi * q[c, 0, kk] ** 2 + wj * q[c, 1, kk] ** 2
                    x[i, kk] += q[c, 0, kk]
                    x[j, kk] += q[c, 1, kk]
                    q[c, 0, kk] = 0.0
                    q[c, 1, kk] = 0.0
        x_move = 0.0
        for g in range(m):
            for kk in range(p):
                dxg = x[g, kk] - x_prev[g, kk]
                x_move += w[g] * dxg * dxg
        if np.sqrt(x_move + q_move) <= tol:
            return sweeps, True
    return sweeps, False


def dykstra_project(
    v,
    k: FeasibleSet,
    eta: float,
    tol: float = 1e-6,
    max_sweeps: int = 500,
) -> ProjectionResult:
    """Approximate Euclidean projection of the stack v onto the feasible set.

    Dykstra's scheme cycles over the pairwise constraints in lexicographic
    order with one correction vector each; merged groups are projected in
    reduced coordinates with group-size weights, which reproduces the exact
    projection geometry of the full stack. After the sweeps converge,
    feasibility is restored by contraction toward the centroid. delta_hat
    estimates the suboptimality of the restored point in the (1/2 eta)-scaled
    projection objective, using the last Dykstra iterate as the reference; it
    is an empirical estimate, not a certified bound.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[0] != k.n:
        raise ValueError(f"stack must be 2-d with {k.n} rows")
    if eta <= 0:
        raise ValueError("eta must be positive")
    feasible, worst = is_feasible(v, k, tol=1e-12)
    if feasible:
        return ProjectionResult(v.copy(), 1, max(worst, 0.0), 0.0, True)

    w = k._w[:, None]
    vbar = np.array([v[g].mean(axis=0) for g in k._groups])
    if k._m == 1:
        point = np.tile(vbar[0], (k.n, 1))
        return ProjectionResult(point, 1, max(worst, 0.0), 0.0, True)

    x = vbar.copy()
    sweeps, converged = _dykstra_sweeps(
        x, k._w, k._pairs_i, k._pairs_j, k._pairs_r, tol, max_sweeps
    )
    diff = x[k._pairs_i] - x[k._pairs_j]
    sq = np.einsum("ij,ij->i", diff, diff)
    viol_before = max(0.0, float(np.max(sq - k._pairs_r**2)))
    x_rest = _reduced_restore(x, k)
    dyk_obj = float(np.sum(w * (x - vbar) ** 2))
    rest_obj = float(np.sum(w * (x_rest - vbar) ** 2))
    delta_hat = max(0.0, (rest_obj - dyk_obj) / (2.0 * eta))
    return ProjectionResult(x_rest[k._member_of], sweeps, viol_before, delta_hat, converged)


def gradient_mapping(
    theta,
    grad,
    eta: float,
    k: FeasibleSet,
    tol: float = 1e-6,
    max_sweeps: int = 5000,
) -> GradientMappingValue:
    """Stationarity measure (theta - P_K(theta - eta*grad)) / eta.

    The projection runs at tol/100 since this is a diagnostic, not a
    training step.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    res = dykstra_project(theta - eta * grad, k, eta, tol=tol / 100.0, max_sweeps=max_sweeps)
    g_map = (theta - res.point) / eta
    return GradientMappingValue(g_map=g_map, sq_norm=float(np.sum(g_map * g_map)))
