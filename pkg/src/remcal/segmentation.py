"""Gaussian mixture segmentation of the latent space, fit by EM.

The covariance floor is enforced by clamping eigenvalues of each component's
weighted scatter matrix from below.  Within the set of covariances whose
eigenvalues are at least the floor, the clamped matrix is the exact maximizer
of the EM surrogate, so every iteration still cannot lower the likelihood.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 200
    tolerance: float = 1e-6
    covariance_floor: float = 1e-6
    seed: int = 0
    restarts: int = 3

    def __post_init__(self):
        if min(self.max_iterations, self.restarts) < 1:
            raise ValueError("max_iterations and restarts must be >= 1")
        if not (self.tolerance > 0 and self.covariance_floor > 0):
            raise ValueError("tolerance and covariance_floor must be positive")


@dataclass(frozen=True, eq=False)
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    # per-iteration total log-likelihood of the winning restart
    trace: tuple[float, ...] = field(default=(), repr=False)
    resets: int = 0

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Gmm:
        return cls(
            np.asarray(d["weights"], dtype=float),
            np.asarray(d["means"], dtype=float),
            np.asarray(d["covariances"], dtype=float),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Gmm:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _component_log_density(points: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """n x k matrix of log N(x_i | mu_j, Sigma_j)."""
    n, d = points.shape
    chol = np.linalg.cholesky(covs)
    inv_chol = np.linalg.inv(chol)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    # whitened coordinates L^-1 (x - mu), assembled one output dimension at a time
    maha = np.zeros((n, len(means)))
    for i in range(d):
        row = inv_chol[:, i, :]
        w = points @ row.T - np.sum(row * means, axis=1)[None, :]
        maha += w * w
    return -0.5 * (d * np.log(2 * np.pi) + logdet[None, :] + maha)


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    top = np.max(a, axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.log(np.sum(np.exp(a - top), axis=1)) + top[:, 0]


def _weighted_log_density(gmm: Gmm, points: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(gmm.weights)
    return _component_log_density(points, gmm.means, gmm.covariances) + logw[None, :]


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be an n x d matrix")
    return points


def log_likelihood(gmm: Gmm, points) -> float:
    """Sum over points of the log mixture density."""
    points = _as_points(points)
    return float(np.sum(_logsumexp_rows(_weighted_log_density(gmm, points))))


def responsibilities(gmm: Gmm, points) -> np.ndarray:
    points = _as_points(points)
    wld = _weighted_log_density(gmm, points)
    return np.exp(wld - _logsumexp_rows(wld)[:, None])


def assign(gmm: Gmm, points) -> np.ndarray:
    """Index of the highest-responsibility component; ties go to the lowest id."""
    points = _as_points(points)
    return np.argmax(_weighted_log_density(gmm, points), axis=1)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers)


def _clamp_eigenvalues(covs: np.ndarray, floor: float) -> np.ndarray:
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    vals, vecs = np.linalg.eigh(covs)
    if np.all(vals >= floor):
        return covs
    vals = np.maximum(vals, floor)
    return np.einsum("kij,kj,klj->kil", vecs, vals, vecs)


def _m_step(points, resp, floor):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    safe = np.where(nk > 0, nk, 1.0)
    # second moments about the data centroid keep the subtraction well conditioned
    center = points.mean(axis=0)
    x = points - center
    means = (resp.T @ x) / safe[:, None]
    d = points.shape[1]
    covs = np.empty((len(nk), d, d))
    for i in range(d):
        for j in range(i, d):
            covs[:, i, j] = (resp.T @ (x[:, i] * x[:, j])) / safe - means[:, i] * means[:, j]
            covs[:, j, i] = covs[:, i, j]
    means += center
    return weights, means, _clamp_eigenvalues(covs, floor), nk


def _em_run(points, k, config: EmConfig, rng) -> Gmm:
    n, d = points.shape
    floor = config.covariance_floor
    global_cov = np.atleast_2d(np.cov(points.T, bias=True)) + floor * np.eye(d)

    centers = _kmeans_pp(points, k, rng)
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    weights, means, covs, nk = _m_step(points, resp, floor)
    # components that won no points at seeding start at their seed with the data covariance
    empty = nk == 0
    means[empty] = centers[empty]
    covs[empty] = global_cov / k
    weights = np.maximum(weights, 1.0 / n)
    weights /= weights.sum()

    gmm = Gmm(weights, means, covs)
    trace: list[float] = []
    resets = 0
    min_mass = 1e-8 * n
    for _ in range(config.max_iterations + 1):
        wld = _weighted_log_density(gmm, points)
        point_ll = _logsumexp_rows(wld)
        ll = float(np.sum(point_ll))
        prev = trace[-1] if trace else None
        trace.append(ll)
        if prev is not None and abs(ll - prev) <= config.tolerance * abs(prev):
            break
        if len(trace) > config.max_iterations:
            break
        resp = np.exp(wld - point_ll[:, None])
        weights, means, covs, nk = _m_step(points, resp, floor)
        empty = nk < min_mass
        if empty.any():
            # re-seed at the least-explained points; restarts the monotone trace
            resets += 1
            worst = np.argsort(point_ll, kind="stable")[: int(empty.sum())]
            means[empty] = points[worst]
            covs[empty] = global_cov / k
            weights[empty] = 1.0 / k
            weights /= weights.sum()
            trace = []
        gmm = Gmm(weights, means, covs)
    return Gmm(gmm.weights, gmm.means, gmm.covariances, tuple(trace), resets)


def fit_gmm(points, k: int, config: EmConfig | None = None) -> Gmm:
    """Fit a k-component mixture by EM, keeping the best of several restarts.

    Each restart seeds means with k-means++ and begins from the hard
    nearest-seed partition.  The restart with the highest final
    log-likelihood wins; its per-iteration log-likelihoods are kept in
    ``Gmm.trace``.
    """
    config = config or EmConfig()
    points = _as_points(points)
    if not np.all(np.isfinite(points)):
        raise ValueError("points must be finite")
    n = len(points)
    if k < 1 or n < k:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if np.all(points == points[0]):
        raise DegenerateDataError("all points are identical")
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    best = None
    for seq in seeds:
        run = _em_run(points, k, config, np.random.default_rng(seq))
        if best is None or run.trace[-1] > best.trace[-1]:
            best = run
    return best


def em_iteration(gmm: Gmm, points, covariance_floor: float = 1e-6) -> Gmm:
    """A single E-step + M-step from an existing mixture."""
    points = _as_points(points)
    weights, means, covs, _ = _m_step(points, responsibilities(gmm, points), covariance_floor)
    return Gmm(weights, means, covs)


def silhouette(
    points,
    labels,
    subsample: int | None = 5000,
    seed: int = 0,
    chunk: int = 512,
) -> float:
    """Mean silhouette with Euclidean distances; singleton members score 0.

    When there are more than ``subsample`` points a seeded uniform subsample
    is scored instead of the full set.
    """
    points = _as_points(points)
    labels = np.asarray(labels)
    if subsample is not None and len(points) > subsample:
        idx = np.sort(np.random.default_rng(seed).choice(len(points), subsample, replace=False))
        points, labels = points[idx], labels[idx]
    ids, codes = np.unique(labels, return_inverse=True)
    if len(ids) < 2:
        raise ValueError("silhouette needs at least two non-empty clusters")
    onehot = np.zeros((len(points), len(ids)))
    onehot[np.arange(len(points)), codes] = 1.0
    sizes = onehot.sum(axis=0)

    scores = np.empty(len(points))
    sq = np.sum(points**2, axis=1)
    for start in range(0, len(points), chunk):
        block = slice(start, start + chunk)
        d2 = sq[block, None] + sq[None, :] - 2.0 * points[block] @ points.T
        dist = np.sqrt(np.maximum(d2, 0.0))
        sums = dist @ onehot
        own = codes[block]
        rows = np.arange(len(own))
        own_size = sizes[own]
        a = np.where(own_size > 1, sums[rows, own] / np.maximum(own_size - 1, 1), 0.0)
        mean_other = sums / sizes[None, :]
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        scores[block] = np.where(own_size > 1, s, 0.0)
    return float(scores.mean())
