"""Estimators for fully observed trajectories.

``c`` and ``d`` have explicit binomial MLEs.  The seed fates ``(a, a')``,
``(b, b')`` and the reproduction means ``(m, u)`` are conditional least squares
fits, each a 2x2 linear system, with sandwich covariances.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .dynamics import CompleteDataset, DemographicParams
from .errors import CollinearityError, DomainError, InestimableError

MAX_CONVOLUTION_COUNT = 1000
_COND_LIMIT = 1e12


class OutOfUnitIntervalWarning(UserWarning):
    """A probability estimate fell outside (0, 1); it is reported unclamped."""


@dataclass
class CompleteEstimates:
    c_hat: float
    d_hat: float
    a_hat: float
    a_prime_hat: float
    b_hat: float
    b_prime_hat: float
    m_hat: float
    u_hat: float
    sigma_hat: float
    tau_hat: float
    var_c: float
    var_d: float
    cov_aa: np.ndarray
    cov_bb: np.ndarray
    cov_mu: np.ndarray
    var_sigma: float
    var_tau: float
    K: int
    n: int
    warnings: list = field(default_factory=list)

    def rows(self):
        """``(parameter, estimate, std_error)`` triples in a fixed order."""
        return [
            ("c", self.c_hat, math.sqrt(self.var_c)),
            ("d", self.d_hat, math.sqrt(self.var_d)),
            ("a", self.a_hat, math.sqrt(self.cov_aa[0, 0])),
            ("a_prime", self.a_prime_hat, math.sqrt(self.cov_aa[1, 1])),
            ("b", self.b_hat, math.sqrt(self.cov_bb[0, 0])),
            ("b_prime", self.b_prime_hat, math.sqrt(self.cov_bb[1, 1])),
            ("m", self.m_hat, math.sqrt(self.cov_mu[0, 0])),
            ("u", self.u_hat, math.sqrt(self.cov_mu[1, 1])),
            ("sigma", self.sigma_hat, math.sqrt(self.var_sigma)),
            ("tau", self.tau_hat, math.sqrt(self.var_tau)),
        ]


def _ratio(num, den, stage):
    if den <= 0:
        raise InestimableError(f"no {stage} observed in any population/cycle; ratio undefined")
    return num / den


def estimate_cd(data: CompleteDataset):
    """Binomial MLEs ``c = sum V / sum R``, ``d = sum F / sum V`` with plug-in variances.

    Returns ``(c_hat, d_hat, var_c, var_d)``.
    """
    sum_r = float(data.R.sum())
    sum_v = float(data.V.sum())
    sum_f = float(data.F.sum())
    c_hat = _ratio(sum_v, sum_r, "rosettes (R)")
    d_hat = _ratio(sum_f, sum_v, "vernalized rosettes (V)")
    # c(1-c) / E[sum_i R_i] / K with the empirical mean of sum_i R_i
    var_c = c_hat * (1 - c_hat) / sum_r
    var_d = d_hat * (1 - d_hat) / sum_v
    return c_hat, d_hat, var_c, var_d


def _solve_2x2(A, rhs, names):
    (p, q), (r, s) = A
    det = p * s - q * r
    scale = max(abs(p * s), abs(q * r), 1e-300)
    if det == 0 or abs(det) / scale < 1.0 / _COND_LIMIT:
        unidentified = [nm for nm, diag in zip(names, (p, s)) if diag == 0] or list(names)
        raise CollinearityError(
            f"singular Gram matrix; unidentified: {', '.join(unidentified)}", unidentified
        )
    inv = np.array([[s, -q], [-r, p]]) / det
    return inv @ rhs, inv


def _sandwich(A_inv, X, weights):
    meat = X.T @ (weights[:, None] * X)
    cov = A_inv @ meat @ A_inv
    return 0.5 * (cov + cov.T)


def _two_regressor_cls(X, y, names):
    A = X.T @ X
    beta, A_inv = _solve_2x2(A, X.T @ y, names)
    return beta, A_inv


def _seed_design(data):
    S, T = data.seeds_through_terminal()
    Z = np.column_stack([S[:, :-1].ravel(), T[:, :-1].ravel()]).astype(float)
    return Z, S, T


def _flag(name, value, out):
    if not 0.0 < value < 1.0:
        msg = f"{name} estimate {value:.6g} lies outside (0, 1)"
        out.append(msg)
        warnings.warn(msg, OutOfUnitIntervalWarning, stacklevel=3)


def cls_survival(data: CompleteDataset, _flags=None):
    """CLS fit of ``S[i+1] ~ a S[i] + a' T[i]``; returns ``(a_hat, a_prime_hat, cov)``."""
    Z, S, _ = _seed_design(data)
    y = S[:, 1:].ravel().astype(float)
    (a, ap), A_inv = _two_regressor_cls(Z, y, ("a", "a_prime"))
    w = a * (1 - a) * Z[:, 0] + ap * (1 - ap) * Z[:, 1]
    cov = _sandwich(A_inv, Z, w)
    flags = [] if _flags is None else _flags
    _flag("a", a, flags)
    _flag("a_prime", ap, flags)
    return a, ap, cov


def cls_germination(data: CompleteDataset, _flags=None):
    """CLS fit of ``R[i] ~ b S[i] + b' T[i]``; returns ``(b_hat, b_prime_hat, cov)``."""
    Z, _, _ = _seed_design(data)
    y = data.R.ravel().astype(float)
    (b, bp), A_inv = _two_regressor_cls(Z, y, ("b", "b_prime"))
    w = b * (1 - b) * Z[:, 0] + bp * (1 - bp) * Z[:, 1]
    cov = _sandwich(A_inv, Z, w)
    flags = [] if _flags is None else _flags
    _flag("b", b, flags)
    _flag("b_prime", bp, flags)
    return b, bp, cov


def residual_variance_fit(f, resid_sq):
    """Least-squares fit of squared residuals on ``(f, 1)``, clamped at zero.

    Gives plug-in values ``(delta2, rho2)`` for Var(T[i+1] | F[i]) = delta2 F[i] + rho2.
    Falls back to the pooled mean when ``f`` is constant.
    """
    X = np.column_stack([f, np.ones_like(f)])
    try:
        (delta2, rho2), _ = _two_regressor_cls(X, resid_sq, ("delta2", "rho2"))
    except CollinearityError:
        delta2, rho2 = 0.0, float(resid_sq.mean())
    return max(delta2, 0.0), max(rho2, 0.0)


def cls_reproduction(data: CompleteDataset):
    """CLS fit of ``T[i+1] ~ m F[i] + u``; returns ``(m_hat, u_hat, cov)``."""
    _, _, T = _seed_design(data)
    f = data.F.ravel().astype(float)
    y = T[:, 1:].ravel().astype(float)
    X = np.column_stack([f, np.ones_like(f)])
    try:
        (m, u), A_inv = _two_regressor_cls(X, y, ("m", "u"))
    except CollinearityError as exc:
        raise CollinearityError(
            "mature plant counts F are constant across all observations; m and u are confounded",
            ("m", "u"),
        ) from exc
    resid = y - m * f - u
    delta2, rho2 = residual_variance_fit(f, resid**2)
    cov = _sandwich(A_inv, X, delta2 * f + rho2)
    return m, u, cov


def estimate_initial(data: CompleteDataset):
    """Poisson MLEs of the initial seed means: ``(sigma_hat, tau_hat)``."""
    return float(data.S[:, 0].mean()), float(data.T[:, 0].mean())


def estimate_complete(data: CompleteDataset) -> CompleteEstimates:
    flags = []
    c, d, var_c, var_d = estimate_cd(data)
    a, ap, cov_aa = cls_survival(data, flags)
    b, bp, cov_bb = cls_germination(data, flags)
    m, u, cov_mu = cls_reproduction(data)
    sigma, tau = estimate_initial(data)
    for name, value in (("c", c), ("d", d)):
        if not 0.0 < value < 1.0:
            flags.append(f"{name} estimate {value:.6g} lies on the boundary of (0, 1)")
    return CompleteEstimates(
        c_hat=c, d_hat=d, a_hat=a, a_prime_hat=ap, b_hat=b, b_prime_hat=bp,
        m_hat=m, u_hat=u, sigma_hat=sigma, tau_hat=tau,
        var_c=var_c, var_d=var_d, cov_aa=cov_aa, cov_bb=cov_bb, cov_mu=cov_mu,
        var_sigma=sigma / data.K, var_tau=tau / data.K,
        K=data.K, n=data.n, warnings=flags,
    )


# --- exact complete-data likelihood (Poisson offspring and immigration) -----

def _log_poisson(k, lam):
    k = np.asarray(k, dtype=float)
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(lam > 0, k * np.log(np.where(lam > 0, lam, 1.0)) - lam, np.where(k == 0, 0.0, -np.inf))
    return out - gammaln(k + 1)


def _log_multinomial3(N, p1, p2, n1, n2):
    """log M(N; p1, p2)(n1, n2) on broadcast integer grids; -inf outside the simplex."""
    n3 = N - n1 - n2
    ok = (n1 >= 0) & (n2 >= 0) & (n3 >= 0)
    p3 = 1.0 - p1 - p2
    n1c, n2c, n3c = (np.where(ok, x, 0) for x in (n1, n2, n3))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (
            gammaln(N + 1) - gammaln(n1c + 1) - gammaln(n2c + 1) - gammaln(n3c + 1)
            + _xlogy(n1c, p1) + _xlogy(n2c, p2) + _xlogy(n3c, p3)
        )
    return np.where(ok, val, -np.inf)


def _xlogy(x, p):
    if p > 0:
        return x * math.log(p)
    return np.where(x == 0, 0.0, -np.inf)


def seed_transition_logpmf(s, t, s_next, r, a, b, a_prime, b_prime):
    """log of (M(s; a, b) * M(t; a', b'))(s_next, r) by direct finite convolution."""
    if max(s, t) > MAX_CONVOLUTION_COUNT:
        raise DomainError(
            f"seed counts ({s}, {t}) exceed {MAX_CONVOLUTION_COUNT}; convolution evaluation refused"
        )
    # j = old-seed survivors, l = old-seed rosettes
    j = np.arange(0, min(s, s_next) + 1)[:, None]
    l = np.arange(0, min(s, r) + 1)[None, :]
    old = _log_multinomial3(s, a, b, j, l)
    new = _log_multinomial3(t, a_prime, b_prime, s_next - j, r - l)
    total = old + new
    if np.all(np.isneginf(total)):
        return -np.inf
    return float(logsumexp(total))


def complete_loglik_terms(data: CompleteDataset, params: DemographicParams):
    """The separable pieces of the complete-data log-likelihood, keyed ``l0, l2, l3, l4, l6``."""
    if not (params.offspring.is_poisson and params.immigration.is_poisson):
        raise DomainError("exact complete likelihood requires Poisson offspring and immigration")
    S, T = data.seeds_through_terminal()
    R, V, F = data.R, data.V, data.F
    l0 = float(_log_poisson(S[:, 0], params.sigma).sum() + _log_poisson(T[:, 0], params.tau).sum())
    l2 = float(stats.binom.logpmf(V, R, params.c).sum())
    l3 = float(stats.binom.logpmf(F, V, params.d).sum())
    l4 = float(_log_poisson(T[:, 1:], params.m * F + params.u).sum())
    l6 = 0.0
    for k in range(data.K):
        for i in range(data.n + 1):
            l6 += seed_transition_logpmf(
                int(S[k, i]), int(T[k, i]), int(S[k, i + 1]), int(R[k, i]),
                params.a, params.b, params.a_prime, params.b_prime,
            )
    return {"l0": l0, "l2": l2, "l3": l3, "l4": l4, "l6": l6}


def complete_loglik_poisson(data: CompleteDataset, params: DemographicParams) -> float:
    return float(sum(complete_loglik_terms(data, params).values()))
