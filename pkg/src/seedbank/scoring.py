"""Box-constrained Fisher scoring for Poisson regression with identity link.

The mean is ``X @ beta`` (no link function), so the score is
``X.T @ (y / mu - 1)`` and the expected information is ``X.T @ diag(1/mu) @ X``.
Bounds are handled by an active set (coordinates pinned at a bound whose score
points outward) plus projection, and every accepted step is checked for a
non-decreasing log-likelihood by step halving.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CollinearityError


@dataclass
class ScoringOptions:
    max_iter: int = 200
    rtol: float = 1e-10
    step_tol: float = 1e-8
    max_halvings: int = 60


@dataclass
class ScoringResult:
    beta: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    loglik_path: list = field(default_factory=list)


def poisson_loglik(mu, y):
    """``sum(y log mu - mu)``; the ``-log y!`` term is dropped."""
    if np.any(mu <= 0):
        bad = (mu <= 0) & (y > 0)
        if np.any(bad):
            return -np.inf
        mu = np.where(mu <= 0, np.finfo(float).tiny, mu)
    return float(np.sum(y * np.log(mu) - mu))


def check_rank(X, names):
    """Raise :class:`CollinearityError` naming the coefficients in the null space of ``X``."""
    rank = np.linalg.matrix_rank(X)
    if rank == X.shape[1]:
        return
    _, sv, vt = np.linalg.svd(X, full_matrices=True)
    null = vt[rank:]
    involved = [nm for j, nm in enumerate(names) if np.any(np.abs(null[:, j]) > 1e-8)]
    raise CollinearityError(
        f"design has rank {rank} < {X.shape[1]}; not separately identifiable: {', '.join(involved)}",
        involved,
    )


def _initial(X, y, lower, upper):
    beta, *_ = np.linalg.lstsq(X, y.astype(float), rcond=None)
    beta = np.clip(beta, lower, upper)
    if np.any(X @ beta <= 0):
        beta = np.clip(np.full(X.shape[1], max(y.mean(), 1.0) / max(X.sum(1).mean(), 1e-12)), lower, upper)
    return beta


def fit_identity_poisson(X, y, lower, upper, init=None, options=None) -> ScoringResult:
    opts = options or ScoringOptions()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    beta = _initial(X, y, lower, upper) if init is None else np.clip(np.asarray(init, float), lower, upper)
    mu = X @ beta
    ll = poisson_loglik(mu, y)
    path = [ll]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        score = X.T @ (y / mu - 1.0)
        info = X.T @ (X / mu[:, None])
        at_lo = (beta <= lower) & (score <= 0)
        at_hi = (beta >= upper) & (score >= 0)
        free = ~(at_lo | at_hi)
        direction = np.zeros_like(beta)
        if free.any():
            sub = info[np.ix_(free, free)]
            try:
                direction[free] = np.linalg.solve(sub, score[free])
            except np.linalg.LinAlgError:
                direction[free] = np.linalg.lstsq(sub, score[free], rcond=None)[0]
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings):
            cand = np.clip(beta + t * direction, lower, upper)
            mu_c = X @ cand
            ll_c = poisson_loglik(mu_c, y)
            if np.isfinite(ll_c) and ll_c >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True  # no ascent direction left at working precision
            break
        step = cand - beta
        change = abs(ll_c - ll)
        beta, mu, ll = cand, mu_c, ll_c
        path.append(ll)
        if change <= opts.rtol * max(abs(ll), 1.0) or np.linalg.norm(step) <= opts.step_tol * (1.0 + np.linalg.norm(beta)):
            converged = True
            break
    return ScoringResult(beta=beta, loglik=ll, iterations=it, converged=converged, loglik_path=path)
