"""Classical clusterers: k-means (Lloyd with k-means++ seeding) and a full-
covariance Gaussian mixture fitted by expectation-maximization.

Both are deterministic given (points, k, seed).  The mixture is initialized
from the k-means solution and its E-step works in the log domain so that
well-separated components do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, NumericalError, ParameterError

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class KmeansModel:
    centers: np.ndarray      # (k, d)
    inertia: float           # total within-cluster squared distance
    iterations: int


@dataclass
class GmmModel:
    weights: np.ndarray       # (k,) simplex vector
    means: np.ndarray         # (k, d)
    covariances: np.ndarray   # (k, d, d) symmetric positive-definite
    log_likelihood_trace: list[float] = field(default_factory=list)


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    sq = ((points * points).sum(axis=1)[:, None]
          + (centers * centers).sum(axis=1)[None, :]
          - 2.0 * points @ centers.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def _kpp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: subsequent centers drawn with probability ~ D^2."""
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_distances(points, centers[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining mass on already-chosen points: spread uniformly
            centers[j] = points[rng.integers(n)]
            continue
        centers[j] = points[rng.choice(n, p=closest / total)]
        np.minimum(closest, _sq_distances(points, centers[j:j + 1]).ravel(), out=closest)
    return centers


def kmeans(points, k: int, seed=0, tol: float = 1e-6,
           max_iter: int = 300) -> tuple[KmeansModel, np.ndarray]:
    """Lloyd's algorithm; stops when the largest center shift drops below tol.

    Empty clusters are repaired by moving their center onto the point
    currently farthest from its assigned center, which keeps every cluster
    non-empty in the returned model.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ParameterError(f"points must be an (n, d) matrix, got shape {points.shape}")
    if k < 1:
        raise ParameterError(f"cluster count must be positive, got {k}")
    if len(points) < k:
        raise InsufficientDataError(f"{len(points)} points cannot fill {k} clusters")

    rng = _as_rng(seed)
    centers = _kpp_seed(points, k, rng)
    labels = np.zeros(len(points), dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        sq = _sq_distances(points, centers)
        labels = sq.argmin(axis=1)
        closest = sq[np.arange(len(points)), labels]
        for j in range(k):
            if not np.any(labels == j):
                runaway = int(np.argmax(closest))
                centers[j] = points[runaway]
                labels[runaway] = j
                closest[runaway] = 0.0
        new_centers = np.stack([points[labels == j].mean(axis=0) for j in range(k)])
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    sq = _sq_distances(points, centers)
    labels = sq.argmin(axis=1)
    inertia = float(sq[np.arange(len(points)), labels].sum())
    return KmeansModel(centers=centers, inertia=inertia, iterations=iterations), labels


def _log_gaussians(points: np.ndarray, means: np.ndarray,
                   covariances: np.ndarray) -> np.ndarray:
    """Per-component log densities, (n, k), via Cholesky factors."""
    n, d = points.shape
    out = np.empty((n, len(means)))
    for j, (mu, cov) in enumerate(zip(means, covariances)):
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"covariance of component {j} is singular despite ridge") from exc
        diff = points - mu
        z = np.linalg.solve(chol, diff.T)
        maha = (z * z).sum(axis=0)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        out[:, j] = -0.5 * (d * _LOG_2PI + logdet + maha)
    return out


def gmm_em(points, k: int, seed=0, ridge: float = 1e-6, tol: float = 1e-6,
           max_iter: int = 200) -> tuple[GmmModel, np.ndarray]:
    """Full-covariance Gaussian mixture via EM, initialized from k-means.

    A ridge is added to every covariance diagonal in each M-step to keep the
    factors positive-definite.  Iteration stops once the log-likelihood
    improves by less than tol.  Labels are the argmax responsibilities.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ParameterError(f"points must be an (n, d) matrix, got shape {points.shape}")
    if k < 1:
        raise ParameterError(f"component count must be positive, got {k}")
    n, d = points.shape
    if n < k:
        raise InsufficientDataError(f"{n} points cannot support {k} components")

    km, hard = kmeans(points, k, seed=seed)
    means = km.centers.copy()
    weights = np.bincount(hard, minlength=k).astype(np.float64) / n
    global_cov = np.cov(points.T, bias=True).reshape(d, d)
    covariances = np.empty((k, d, d))
    for j in range(k):
        member = points[hard == j]
        if len(member) > 1:
            covariances[j] = np.cov(member.T, bias=True).reshape(d, d)
        else:
            covariances[j] = global_cov
        covariances[j][np.diag_indices(d)] += ridge

    trace: list[float] = []
    resp = np.zeros((n, k))
    for _ in range(max_iter):
        # E-step in the log domain
        log_prob = _log_gaussians(points, means, covariances)
        log_prob += np.log(np.maximum(weights, 1e-300))
        top = log_prob.max(axis=1, keepdims=True)
        norm = top + np.log(np.exp(log_prob - top).sum(axis=1, keepdims=True))
        resp = np.exp(log_prob - norm)
        ll = float(norm.sum())
        trace.append(ll)
        if len(trace) > 1 and ll - trace[-2] < tol:
            break
        # M-step
        mass = resp.sum(axis=0)
        mass = np.maximum(mass, 1e-300)
        weights = mass / n
        means = (resp.T @ points) / mass[:, None]
        for j in range(k):
            diff = points - means[j]
            covariances[j] = (resp[:, j][:, None] * diff).T @ diff / mass[j]
            covariances[j][np.diag_indices(d)] += ridge

    labels = resp.argmax(axis=1)
    model = GmmModel(weights=weights, means=means, covariances=covariances,
                     log_likelihood_trace=trace)
    return model, labels
