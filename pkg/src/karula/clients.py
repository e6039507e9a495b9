"""Ridge-regression clients: losses, stochastic oracles, synthetic data, smoothness.

The empirical loss is (1/(2N)) * sum (y - x'theta)^2 + (lam/2) ||theta||^2; the
oracle reply carries the client weight alpha already applied, while the 1/n
averaging happens server-side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ClientData",
    "RidgeObjective",
    "OracleReply",
    "SyntheticConfig",
    "Client",
    "ridge_loss",
    "ridge_gradient",
    "ridge_exact_solve",
    "smoothness_constant",
    "generate_synthetic",
    "kfold_split",
    "make_clients",
]


@dataclass
class ClientData:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("x must be a 2-d array with at least one row")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{x.shape[0]} rows of x but y has shape {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("client data must be finite")
        self.x = x
        self.y = y

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]


@dataclass
class RidgeObjective:
    lam: float = 1e-6
    alpha: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass
class OracleReply:
    client_id: int
    gradient: np.ndarray
    is_stochastic: bool
    batch_size: int  # 0 means full batch


@dataclass
class SyntheticConfig:
    n_clients: int = 30
    d: int = 50
    group_means: tuple = (1.0, 1.5, 2.0)
    n_range: tuple = (10, 100)
    noise_std: float = 3.0
    theta_spread: float = 0.5
    feature_mean_spread: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_clients % len(self.group_means) != 0:
            raise ValueError("n_clients must be divisible by the number of groups")
        if self.n_range[0] < 1 or self.n_range[1] < self.n_range[0]:
            raise ValueError("invalid sample-size range")
        if self.noise_std < 0 or self.theta_spread < 0 or self.feature_mean_spread < 0:
            raise ValueError("spreads must be nonnegative")


def ridge_loss(theta, data: ClientData, obj: RidgeObjective) -> float:
    """Average squared-residual loss with ridge penalty (unweighted by alpha)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.x.shape[1],):
        raise ValueError(f"theta has shape {theta.shape}, expected ({data.x.shape[1]},)")
    res = data.y - data.x @ theta
    return float(0.5 * np.mean(res**2) + 0.5 * obj.lam * np.dot(theta, theta))


def ridge_gradient(
    theta,
    data: ClientData,
    obj: RidgeObjective,
    batch=None,
    rng: np.random.Generator | None = None,
    client_id: int = 0,
) -> OracleReply:
    """Alpha-weighted (mini-batch) gradient of the empirical ridge loss.

    batch may be an explicit index set, or an int batch size to be sampled
    uniformly without replacement from rng. Minibatch replies are unbiased
    for the full gradient under uniform resampling.
    """
    theta = np.asarray(theta, dtype=float)
    n = data.n_samples
    if batch is None:
        idx = None
    elif np.isscalar(batch):
        size = int(batch)
        if size <= 0:
            raise ValueError("batch size must be positive")
        if size >= n:
            idx = None
        else:
            if rng is None:
                raise ValueError("rng required to sample a batch")
            idx = rng.choice(n, size=size, replace=False)
    else:
        idx = np.asarray(batch, dtype=int)
        if idx.size == 0:
            raise ValueError("batch must not be empty")
        if idx.min() < 0 or idx.max() >= n:
            raise ValueError("batch indices out of range")
    if idx is None:
        x, y = data.x, data.y
    else:
        x, y = data.x[idx], data.y[idx]
    grad = x.T @ (x @ theta - y) / x.shape[0] + obj.lam * theta
    return OracleReply(
        client_id=client_id,
        gradient=obj.alpha * grad,
        is_stochastic=idx is not None,
        batch_size=0 if idx is None else int(idx.size),
    )


def ridge_exact_solve(data: ClientData, obj: RidgeObjective) -> np.ndarray:
    """Normal-equations solution of (X'X/N + lam I) theta = X'y/N."""
    n, d = data.x.shape
    h = data.x.T @ data.x / n + obj.lam * np.eye(d)
    rhs = data.x.T @ data.y / n
    try:
        return np.linalg.solve(h, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular ridge system (lam={obj.lam}): {exc}"
        ) from exc


def _power_sigma_max(x: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of x'x by power iteration with Rayleigh-quotient stopping."""
    d = x.shape[1]
    # deterministic probes; the first non-degenerate one seeds the iteration
    probes = [np.ones(d) / np.sqrt(d)] + [np.eye(d)[i] for i in range(d)]
    v = None
    for probe in probes:
        if np.linalg.norm(x.T @ (x @ probe)) > 0:
            v = probe
            break
    if v is None:
        return 0.0
    lam = 0.0
    for _ in range(max_iter):
        av = x.T @ (x @ v)
        lam_new = float(v @ av)
        nrm = np.linalg.norm(av)
        if nrm == 0:
            return 0.0
        v = av / nrm
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return float(v @ (x.T @ (x @ v)))


def smoothness_constant(datasets, objectives) -> float:
    """Largest weighted per-client smoothness: max_i alpha_i (sigma_max(X'X)/N + lam)."""
    if len(datasets) == 0:
        raise ValueError("need at least one client")
    best = 0.0
    for data, obj in zip(datasets, objectives):
        li = _power_sigma_max(data.x) / data.n_samples + obj.lam
        best = max(best, obj.alpha * li)
    return best


def generate_synthetic(cfg: SyntheticConfig, rng: np.random.Generator):
    """Heterogeneous ridge clients in groups with distinct ground-truth means.

    Per client: theta* ~ N(mean_g * 1, theta_spread^2 I), feature mean
    m ~ N(0, feature_mean_spread^2 I), rows of X ~ N(m, I), N uniform over
    n_range, y = X theta* + N(0, noise_std^2); an equal-size test set is drawn
    from the same law. Returns (train, theta_star, group_labels, test).
    """
    n_groups = len(cfg.group_means)
    per_group = cfg.n_clients // n_groups
    lo, hi = cfg.n_range
    train, test = [], []
    theta_star = np.empty((cfg.n_clients, cfg.d))
    labels = np.empty(cfg.n_clients, dtype=int)
    for i in range(cfg.n_clients):
        g = i // per_group
        labels[i] = g
        theta_star[i] = cfg.group_means[g] + cfg.theta_spread * rng.standard_normal(cfg.d)
        mean = cfg.feature_mean_spread * rng.standard_normal(cfg.d)
        n_i = int(rng.integers(lo, hi + 1))
        for bucket in (train, test):
            x = mean + rng.standard_normal((n_i, cfg.d))
            y = x @ theta_star[i] + cfg.noise_std * rng.standard_normal(n_i)
            bucket.append(ClientData(x=x, y=y))
    return train, theta_star, labels, test


def kfold_split(data: ClientData, k: int, rng: np.random.Generator):
    """Disjoint covering folds with sizes differing by at most one."""
    n = data.n_samples
    if k < 1 or n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    perm = rng.permutation(n)
    folds = np.array_split(perm, k)
    pairs = []
    for f in range(k):
        val = np.sort(folds[f])
        tr = np.sort(np.concatenate([folds[g] for g in range(k) if g != f]))
        pairs.append(
            (ClientData(data.x[tr], data.y[tr]), ClientData(data.x[val], data.y[val]))
        )
    return pairs


@dataclass
class Client:
    """One simulated client: data plus objective, acting as a first-order oracle."""

    client_id: int
    data: ClientData
    objective: RidgeObjective
    test: ClientData | None = None

    def loss(self, theta) -> float:
        return ridge_loss(theta, self.data, self.objective)

    def gradient(self, theta, batch=None, rng=None) -> OracleReply:
        return ridge_gradient(
            theta, self.data, self.objective, batch=batch, rng=rng,
            client_id=self.client_id,
        )

    def local_gradient(self, theta, batch=None, rng=None) -> np.ndarray:
        """Unweighted empirical gradient, for strategies that average models."""
        return self.gradient(theta, batch=batch, rng=rng).gradient / self.objective.alpha

    def exact_solve(self) -> np.ndarray:
        return ridge_exact_solve(self.data, self.objective)

    @property
    def n_samples(self) -> int:
        return self.data.n_samples


def make_clients(datasets, lam: float, test_sets=None) -> list[Client]:
    """Bundle datasets into clients with sample-size weights normalized to mean one."""
    sizes = np.array([d.n_samples for d in datasets], dtype=float)
    alphas = sizes / sizes.mean()
    return [
        Client(
            client_id=i,
            data=data,
            objective=RidgeObjective(lam=lam, alpha=float(alphas[i])),
            test=None if test_sets is None else test_sets[i],
        )
        for i, data in enumerate(datasets)
    ]
