"""Inference when only rosettes, vernalized rosettes and mature plants are counted.

With Poisson offspring, immigration and initial seed laws, the rosette count
``R[i]`` is Poisson given the observed past, with intensity ``Lambda[i]``
driven by the mature-plant history ``F[0..i-1]``.  The intensity depends on
the full parameter vector only through

    phi = (a, g, bm, bu, bs, bt) = (a, a'b/b', b'm, b'u, b sigma, b' tau).

Internally the recursion carries the scaled seed intensities
``b * Gamma[i]`` (bank) and ``b' * Gamma'[i]`` (new seeds), which are
functions of ``phi`` alone:

    bank[0] = bs,   new[0] = bt
    bank[i] = a * bank[i-1] + g * new[i-1]
    new[i]  = bm * F[i-1] + bu
    Lambda[i] = bank[i] + new[i]
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .dynamics import DemographicParams, ObservedDataset
from .errors import CollinearityError, DomainError, SeedbankError
from .scoring import ScoringOptions, check_rank, fit_identity_poisson, poisson_loglik
from .stochastic import RngHandle, sample_binomial, sample_poisson

PHI_NAMES = ("a", "g", "bm", "bu", "bs", "bt")
LINEAR_NAMES = PHI_NAMES[2:]
PHI_LABELS = {
    "a": "a",
    "g": "a'*b/b'",
    "bm": "b'*m",
    "bu": "b'*u",
    "bs": "b*sigma",
    "bt": "b'*tau",
}


class IdentifiabilityWarning(UserWarning):
    """The fitted point is close to the a == a'b/b' degeneracy."""


@dataclass(frozen=True)
class IdentifiableParams:
    a: float
    g: float
    bm: float
    bu: float
    bs: float
    bt: float

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise DomainError(f"a must lie in (0, 1), got {self.a}")
        for name in PHI_NAMES[1:]:
            value = getattr(self, name)
            if not value >= 0 or not np.isfinite(value):
                raise DomainError(f"{name} must be finite and >= 0, got {value}")

    @classmethod
    def from_demographic(cls, params: DemographicParams):
        return cls(
            a=params.a,
            g=params.a_prime * params.b / params.b_prime,
            bm=params.b_prime * params.m,
            bu=params.b_prime * params.u,
            bs=params.b * params.sigma,
            bt=params.b_prime * params.tau,
        )

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))

    def to_array(self):
        return np.array([getattr(self, nm) for nm in PHI_NAMES], dtype=float)

    @property
    def full_identifiability(self):
        return self.a != self.g


@dataclass(frozen=True)
class Box:
    """Compact search region: ``[amp_lo, amp_hi]`` for the five amplitudes, ``[a_lo, a_hi]`` for ``a``."""

    amp_lo: float = 1e-6
    amp_hi: float = 1e6
    a_lo: float = 1e-3
    a_hi: float = 1.0 - 1e-3

    def __post_init__(self):
        if not (0 < self.amp_lo < self.amp_hi < np.inf and 0 < self.a_lo < self.a_hi < 1):
            raise DomainError(f"invalid box {self}")

    @property
    def lower(self):
        return np.array([self.a_lo] + [self.amp_lo] * 5)

    @property
    def upper(self):
        return np.array([self.a_hi] + [self.amp_hi] * 5)

    def contains(self, phi: IdentifiableParams):
        x = phi.to_array()
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def check(self, phi: IdentifiableParams):
        if not self.contains(phi):
            x = phi.to_array()
            bad = [nm for nm, v, lo, hi in zip(PHI_NAMES, x, self.lower, self.upper) if not lo <= v <= hi]
            raise DomainError(f"phi outside the admissible box in {', '.join(bad)}: {phi}")


DEFAULT_BOX = Box()


@dataclass
class IntensityPath:
    """Per-cycle intensities.  ``bank`` is b*Gamma, ``new`` is b'*Gamma', ``lam`` their sum."""

    bank: np.ndarray
    new: np.ndarray
    lam: np.ndarray


def _as_history(f_history):
    f = np.asarray(f_history, dtype=float)
    if f.ndim == 1:
        return f[None, :], True
    if f.ndim != 2:
        raise DomainError("F history must be 1-D (one population) or 2-D (K, n)")
    return f, False


def lambda_sequence(phi: IdentifiableParams, f_history) -> IntensityPath:
    """Intensities ``Lambda[0..n]`` from ``F[0..n-1]`` in O(n).

    ``f_history`` is 1-D for one population or ``(K, n)`` for many.
    """
    f, single = _as_history(f_history)
    K, n = f.shape[0], f.shape[1]
    bank = np.empty((K, n + 1))
    new = np.empty((K, n + 1))
    bank[:, 0] = phi.bs
    new[:, 0] = phi.bt
    for i in range(1, n + 1):
        bank[:, i] = phi.a * bank[:, i - 1] + phi.g * new[:, i - 1]
        new[:, i] = phi.bm * f[:, i - 1] + phi.bu
    lam = bank + new
    if single:
        return IntensityPath(bank[0], new[0], lam[0])
    return IntensityPath(bank, new, lam)


def _geometric(a, k):
    """``1 + a + ... + a**(k-1)`` and its derivative in ``a``; zero for ``k <= 0``."""
    if k <= 0:
        return 0.0, 0.0
    powers = np.arange(k)
    value = float(np.sum(a**powers))
    deriv = float(np.sum(powers[1:] * a ** (powers[1:] - 1))) if k > 1 else 0.0
    return value, deriv


def lambda_gradient(phi: IdentifiableParams, f_history):
    """``dLambda[i]/dphi`` as an array of shape ``(n+1, 6)`` (or ``(K, n+1, 6)``).

    Column order is ``PHI_NAMES``.  For ``i >= 1``, with the lagged history
    ``H[i] = F[i-2] + a F[i-3] + ... + a**(i-2) F[0]``:

        d/da  = g bm H'[i] + i a**(i-1) bs + g bu d/da[(1-a**(i-1))/(1-a)] + (i-1) g a**(i-2) bt
        d/dg  = bm H[i] + a**(i-1) bt + bu (1-a**(i-1))/(1-a)
        d/dbm = F[i-1] + g H[i]
        d/dbu = 1 + g (1-a**(i-1))/(1-a)
        d/dbs = a**i
        d/dbt = g a**(i-1)

    and ``(0, 0, 0, 0, 1, 1)`` at ``i = 0``.
    """
    f, single = _as_history(f_history)
    K, n = f.shape
    a, g = phi.a, phi.g
    out = np.zeros((K, n + 1, 6))
    out[:, 0, 4] = 1.0
    out[:, 0, 5] = 1.0
    for i in range(1, n + 1):
        lags = i - 1  # F[0..i-2] enter H[i]
        if lags > 0:
            expo = np.arange(lags - 1, -1, -1)  # weight a**(i-2-j) for F[j]
            H = f[:, :lags] @ (a**expo)
            dexpo = np.where(expo > 0, expo * a ** np.maximum(expo - 1, 0), 0.0)
            dH = f[:, :lags] @ dexpo
        else:
            H = np.zeros(K)
            dH = np.zeros(K)
        geo, dgeo = _geometric(a, i - 1)
        d_bt_coef = g * a ** (i - 1)
        out[:, i, 0] = (
            g * phi.bm * dH
            + i * a ** (i - 1) * phi.bs
            + g * phi.bu * dgeo
            + (i - 1) * g * (a ** (i - 2) if i >= 2 else 0.0) * phi.bt
        )
        out[:, i, 1] = phi.bm * H + a ** (i - 1) * phi.bt + phi.bu * geo
        out[:, i, 2] = f[:, i - 1] + g * H
        out[:, i, 3] = 1.0 + g * geo
        out[:, i, 4] = a**i
        out[:, i, 5] = d_bt_coef
    return out[0] if single else out


def f_history(data: ObservedDataset):
    """``F[0..n-1]`` for every population, shape ``(K, n)``."""
    return data.F[:, :-1]


def incomplete_loglik(phi: IdentifiableParams, data: ObservedDataset, box: Box = DEFAULT_BOX) -> float:
    """Poisson log-likelihood of the rosette counts, without the ``-log r!`` constant."""
    box.check(phi)
    lam = lambda_sequence(phi, f_history(data)).lam
    return poisson_loglik(lam.ravel(), data.R.ravel().astype(float))


def incomplete_score(phi: IdentifiableParams, data: ObservedDataset):
    """Gradient of :func:`incomplete_loglik` in ``phi``."""
    f = f_history(data)
    lam = lambda_sequence(phi, f).lam
    grad = lambda_gradient(phi, f)
    w = data.R / lam - 1.0
    return np.einsum("ki,kip->p", w, grad)


def fisher_matrix(phi: IdentifiableParams, data: ObservedDataset):
    """Empirical information ``(1/K) sum_k sum_i dLambda dLambda^T / Lambda`` (6 x 6)."""
    f = f_history(data)
    lam = lambda_sequence(phi, f).lam
    grad = lambda_gradient(phi, f)
    info = np.einsum("kip,kiq->pq", grad / lam[:, :, None], grad) / data.K
    return 0.5 * (info + info.T)


def invert_information(info, K, cond_limit=1e12):
    """``(covariance, condition_number)``; covariance is ``None`` above ``cond_limit``."""
    w, v = np.linalg.eigh(info)
    top = float(np.max(np.abs(w))) if w.size else 0.0
    low = float(np.min(w)) if w.size else 0.0
    cond = math.inf if low <= 0 else top / low
    if not np.isfinite(cond) or cond > cond_limit:
        return None, cond
    cov = (v / w) @ v.T / K
    return 0.5 * (cov + cov.T), cond


# --- identifiability -------------------------------------------------------

FUNCTIONAL_FORMULAS = {
    "c0": "b*sigma + b'*tau",
    "c1": "a*b*sigma + a'*b*tau + b'*u",
    "c2": "a^2*b*sigma + a*a'*b*tau + a'*b*u + b'*u",
    "a": "a",
    "g": "a'*b/b'",
    "bm": "b'*m",
    "bu": "b'*u",
    "bs": "b*sigma",
    "bt": "b'*tau",
}


@dataclass(frozen=True)
class IdentifiableSet:
    n: int
    functionals: tuple
    degenerate_functionals: Optional[tuple] = None
    degeneracy_condition: Optional[str] = None

    def describe(self, keys=None):
        keys = self.functionals if keys is None else keys
        return [f"{k} = {FUNCTIONAL_FORMULAS[k]}" if FUNCTIONAL_FORMULAS[k] != k else k for k in keys]

    def lines(self):
        out = [f"horizon n = {self.n}"]
        out += [f"identifiable: {d}" for d in self.describe()]
        if self.degenerate_functionals is not None:
            deg = ", ".join(
                "a (= a'*b/b')" if k == "a" else ("c0 = b*sigma + b'*tau" if k == "c0" else FUNCTIONAL_FORMULAS[k])
                for k in self.degenerate_functionals
            )
            out.append(f"if {self.degeneracy_condition}: only {deg}")
        return out


def identifiable_set(n: int) -> IdentifiableSet:
    """Functionals of the parameters recoverable from rosette counts over cycles ``0..n``."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    if n == 0:
        return IdentifiableSet(0, ("c0",))
    if n == 1:
        return IdentifiableSet(1, ("bm", "c0", "c1"))
    if n == 2:
        return IdentifiableSet(2, ("g", "bm", "c0", "c1", "c2"))
    return IdentifiableSet(
        n, PHI_NAMES, degenerate_functionals=("a", "bm", "bu", "c0"), degeneracy_condition="a = a'*b/b'"
    )


# --- estimation --------------------------------------------------------------

@dataclass
class FitOptions:
    max_iter: int = 200
    rtol: float = 1e-10
    step_tol: float = 1e-8
    box: Box = DEFAULT_BOX
    n_starts: int = 8
    seed: int = 0
    cond_limit: float = 1e12
    a_grid: tuple = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))
    g_grid: tuple = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0)
    degeneracy_rtol: float = 1e-3

    def scoring(self):
        return ScoringOptions(max_iter=self.max_iter, rtol=self.rtol, step_tol=self.step_tol)


@dataclass
class PhiEstimateReport:
    phi_hat: Optional[IdentifiableParams]
    loglik: float
    fisher: np.ndarray
    covariance: Optional[np.ndarray]
    condition_number: float
    iterations: int
    converged: bool
    active_bounds: dict
    free: tuple
    K: int
    n: int
    method: str
    identifiable: IdentifiableSet
    warnings: list = field(default_factory=list)
    loglik_path: list = field(default_factory=list)
    partial: Optional[dict] = None
    degenerate: Optional[dict] = None

    def std_errors(self):
        """Standard errors of the free components (``nan`` where unavailable)."""
        se = {nm: math.nan for nm in PHI_NAMES}
        if self.covariance is not None:
            for j, nm in enumerate(PHI_NAMES):
                if nm in self.free:
                    se[nm] = math.sqrt(max(self.covariance[j, j], 0.0))
        return se

    def rows(self):
        """``(parameter, estimate, std_error)`` rows for the CSV report."""
        if self.phi_hat is None:
            return [(k, est, se) for k, (est, se) in (self.partial or {}).items()]
        se = self.std_errors()
        return [(nm, getattr(self.phi_hat, nm), se[nm]) for nm in PHI_NAMES]


def linear_design(a, g, data: ObservedDataset):
    """Coefficients of ``(bm, bu, bs, bt)`` in every ``Lambda[k, i]``, shape ``(K*(n+1), 4)``."""
    probe = IdentifiableParams(a, g, 1.0, 1.0, 1.0, 1.0)
    grad = lambda_gradient(probe, f_history(data))
    return grad[:, :, 2:].reshape(-1, 4)


def _active_bounds(x, box, names=PHI_NAMES):
    lo, hi = box.lower, box.upper
    out = {}
    for j, nm in enumerate(names):
        if x[j] <= lo[j]:
            out[nm] = "lower"
        elif x[j] >= hi[j]:
            out[nm] = "upper"
    return out


def _require_data(data):
    if data.K < 1:
        raise DomainError("empty dataset")


def fit_phi_reduced(data: ObservedDataset, a_known, g_known, init=None, options: FitOptions | None = None):
    """Fit ``(bm, bu, bs, bt)`` with ``a`` and ``g = a'b/b'`` held at known values.

    The intensity is linear in the four amplitudes, so this is an identity-link
    Poisson regression solved by Fisher scoring inside the box.
    """
    opts = options or FitOptions()
    _require_data(data)
    if not 0 < a_known < 1:
        raise DomainError(f"a_known must lie in (0, 1), got {a_known}")
    if not g_known > 0:
        raise DomainError(f"g_known must be > 0, got {g_known}")
    X = linear_design(a_known, g_known, data)
    check_rank(X, LINEAR_NAMES)
    y = data.R.ravel().astype(float)
    box = opts.box
    lo, hi = box.lower[2:], box.upper[2:]
    start = None
    if init is not None:
        start = init.to_array()[2:] if isinstance(init, IdentifiableParams) else np.asarray(init, float)
    res = fit_identity_poisson(X, y, lo, hi, init=start, options=opts.scoring())
    phi = IdentifiableParams(a_known, g_known, *res.beta)
    info = fisher_matrix(phi, data)
    cov4, cond = invert_information(info[2:, 2:], data.K, opts.cond_limit)
    cov = None
    notes = []
    if cov4 is not None:
        cov = np.zeros((6, 6))
        cov[2:, 2:] = cov4
    else:
        notes.append(f"information matrix near-singular (condition {cond:.3g}); covariance withheld")
    if not res.converged:
        notes.append(f"no convergence after {res.iterations} iterations")
    active = _active_bounds(phi.to_array(), box)
    active = {k: v for k, v in active.items() if k in LINEAR_NAMES}
    return PhiEstimateReport(
        phi_hat=phi, loglik=res.loglik, fisher=info, covariance=cov, condition_number=cond,
        iterations=res.iterations, converged=res.converged, active_bounds=active,
        free=LINEAR_NAMES, K=data.K, n=data.n, method="reduced",
        identifiable=identifiable_set(data.n), warnings=notes, loglik_path=res.loglik_path,
    )


def _reduced_loglik_or_none(data, a, g, opts):
    try:
        rep = fit_phi_reduced(data, a, g, options=opts)
    except (SeedbankError, np.linalg.LinAlgError):
        return None
    return rep


def seed_from_grid(data: ObservedDataset, options: FitOptions | None = None):
    """Best reduced fit over the ``(a, g)`` grid; returns its ``phi``."""
    opts = options or FitOptions()
    coarse = FitOptions(**{**opts.__dict__, "max_iter": 50, "rtol": 1e-8})
    best = None
    for a in opts.a_grid:
        if not opts.box.a_lo <= a <= opts.box.a_hi:
            continue
        for g in opts.g_grid:
            if not opts.box.amp_lo <= g <= opts.box.amp_hi:
                continue
            rep = _reduced_loglik_or_none(data, float(a), float(g), coarse)
            if rep is not None and (best is None or rep.loglik > best.loglik):
                best = rep
    if best is None:
        raise SeedbankError("no grid point produced a valid reduced fit")
    return best.phi_hat


def _perturbed_starts(seed_phi, count, box, rng_seed):
    if count <= 0:
        return []
    sampler = qmc.LatinHypercube(d=6, seed=rng_seed)
    u = sampler.random(count) * 2.0 - 1.0
    base = seed_phi.to_array()
    starts = []
    for row in u:
        x = base.copy()
        logit = math.log(x[0] / (1 - x[0])) + 1.5 * row[0]
        x[0] = 1.0 / (1.0 + math.exp(-logit))
        x[1:] = x[1:] * np.exp(math.log(3.0) * row[1:])
        starts.append(np.clip(x, box.lower, box.upper))
    return starts


def _neg_ll_and_grad(x, data, f, r, K):
    phi = IdentifiableParams.from_array(x)
    lam = lambda_sequence(phi, f).lam
    if np.any(lam <= 0):
        return np.inf, np.zeros(6)
    grad = lambda_gradient(phi, f)
    ll = float(np.sum(r * np.log(lam) - lam))
    score = np.einsum("ki,kip->p", r / lam - 1.0, grad)
    return -ll / K, -score / K


def _fisher_polish(x, data, box, opts):
    """Projected Fisher scoring on all six components from ``x``; monotone in loglik."""
    f = f_history(data)
    r = data.R.astype(float)
    lo, hi = box.lower, box.upper
    phi = IdentifiableParams.from_array(x)
    ll = incomplete_loglik(phi, data, box)
    path = [ll]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        lam = lambda_sequence(phi, f).lam
        grad = lambda_gradient(phi, f)
        score = np.einsum("ki,kip->p", r / lam - 1.0, grad)
        info = np.einsum("kip,kiq->pq", grad / lam[:, :, None], grad)
        xv = phi.to_array()
        free = ~(((xv <= lo) & (score <= 0)) | ((xv >= hi) & (score >= 0)))
        direction = np.zeros(6)
        if free.any():
            sub = info[np.ix_(free, free)]
            direction[free] = np.linalg.lstsq(sub, score[free], rcond=None)[0]
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = np.clip(xv + t * direction, lo, hi)
            cphi = IdentifiableParams.from_array(cand)
            cll = incomplete_loglik(cphi, data, box)
            if np.isfinite(cll) and cll >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        change = abs(cll - ll)
        step = np.linalg.norm(cand - xv)
        phi, ll = cphi, cll
        path.append(ll)
        if change <= opts.rtol * max(abs(ll), 1.0) or step <= opts.step_tol * (1 + np.linalg.norm(cand)):
            converged = True
            break
    return phi, ll, it, converged, path


def fit_phi_full(data: ObservedDataset, init_strategy="grid", options: FitOptions | None = None):
    """Maximize the incomplete likelihood over all six components of ``phi`` in the box.

    Multi-start L-BFGS-B with the analytic gradient, seeded by a reduced-fit
    grid search over ``(a, g)`` (``init_strategy="grid"``) or by a supplied
    :class:`IdentifiableParams`, and polished by projected Fisher scoring.
    Horizons ``n < 3`` get a fit of the identifiable functionals instead.
    """
    opts = options or FitOptions()
    _require_data(data)
    if data.n < 3:
        return fit_partial(data, opts)
    box = opts.box
    if isinstance(init_strategy, IdentifiableParams):
        seed_phi = init_strategy
    elif init_strategy == "grid":
        seed_phi = seed_from_grid(data, opts)
    else:
        raise DomainError(f"unknown init_strategy {init_strategy!r}")
    starts = [np.clip(seed_phi.to_array(), box.lower, box.upper)]
    starts += _perturbed_starts(seed_phi, opts.n_starts - 1, box, opts.seed)

    f = f_history(data)
    r = data.R.astype(float)
    scale = np.maximum(np.abs(starts[0]), 1e-3)
    bounds = list(zip(box.lower / scale, box.upper / scale))
    best = None
    failures = 0
    for x0 in starts:
        try:
            res = optimize.minimize(
                lambda z: _scaled(z, scale, data, f, r),
                x0 / scale,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": opts.max_iter * 5, "ftol": 1e-14, "gtol": 1e-10},
            )
        except (SeedbankError, FloatingPointError, ValueError):
            failures += 1
            continue
        if not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun):
            failures += 1
            continue
        if best is None or res.fun < best.fun:
            best = res
    notes = []
    if best is None:
        info = np.full((6, 6), np.nan)
        return PhiEstimateReport(
            phi_hat=None, loglik=-math.inf, fisher=info, covariance=None, condition_number=math.inf,
            iterations=0, converged=False, active_bounds={}, free=PHI_NAMES, K=data.K, n=data.n,
            method="full", identifiable=identifiable_set(data.n),
            warnings=[f"optimization failed from all {len(starts)} starts"],
        )
    x = np.clip(best.x * scale, box.lower, box.upper)
    phi, ll, iters, converged, path = _fisher_polish(x, data, box, opts)
    if failures:
        notes.append(f"{failures} of {len(starts)} starts failed")
    info = fisher_matrix(phi, data)
    cov, cond = invert_information(info, data.K, opts.cond_limit)
    if cov is None:
        notes.append(f"information matrix near-singular (condition {cond:.3g}); covariance withheld")
    degenerate = None
    if abs(phi.a - phi.g) < opts.degeneracy_rtol * phi.a:
        msg = "a is close to a'b/b'; only (a, b'm, b'u, b*sigma + b'*tau) are identifiable"
        notes.append(msg)
        warnings.warn(msg, IdentifiabilityWarning, stacklevel=2)
        degenerate = {"a": phi.a, "bm": phi.bm, "bu": phi.bu, "c0": phi.bs + phi.bt}
    return PhiEstimateReport(
        phi_hat=phi, loglik=ll, fisher=info, covariance=cov, condition_number=cond,
        iterations=int(best.nit) + iters, converged=bool(converged), active_bounds=_active_bounds(phi.to_array(), box),
        free=PHI_NAMES, K=data.K, n=data.n, method="full", identifiable=identifiable_set(data.n),
        warnings=notes, loglik_path=path, degenerate=degenerate,
    )


def _scaled(z, scale, data, f, r):
    val, grad = _neg_ll_and_grad(z * scale, data, f, r, data.K)
    return val, grad * scale


# --- short horizons ----------------------------------------------------------

def _partial_design(data: ObservedDataset, g=None):
    """Design for ``(bm, c0, ..., cn)`` at horizon ``n <= 2`` (``g`` needed when ``n == 2``)."""
    n, K = data.n, data.K
    F = data.F.astype(float)
    cols = 2 + n  # bm, c0..cn
    X = np.zeros((K, n + 1, cols))
    for i in range(n + 1):
        X[:, i, 1 + i] = 1.0
        if i == 1:
            X[:, i, 0] = F[:, 0]
        elif i == 2:
            X[:, i, 0] = F[:, 1] + g * F[:, 0]
    return X.reshape(-1, cols)


def fit_partial(data: ObservedDataset, options: FitOptions | None = None) -> PhiEstimateReport:
    """Fit only the functionals identifiable at horizon ``n < 3``."""
    opts = options or FitOptions()
    n = data.n
    if n >= 3:
        raise DomainError("fit_partial is for horizons n < 3")
    y = data.R.ravel().astype(float)
    box = opts.box
    lin_names = ["bm"] + [f"c{i}" for i in range(n + 1)]
    if n == 0:
        lin_names = ["c0"]

    def solve(g=None):
        X = _partial_design(data, g)
        if n == 0:
            X = X[:, 1:]
        check_rank(X, lin_names)
        k = X.shape[1]
        return X, fit_identity_poisson(X, y, np.full(k, box.amp_lo), np.full(k, box.amp_hi), options=opts.scoring())

    g_hat = None
    if n == 2:
        def neg_profile(log_g):
            try:
                return -solve(math.exp(log_g))[1].loglik
            except CollinearityError:
                return math.inf
        grid = np.log(np.array(opts.g_grid))
        vals = [neg_profile(v) for v in grid]
        j = int(np.argmin(vals))
        lo_b = grid[max(j - 1, 0)]
        hi_b = grid[min(j + 1, len(grid) - 1)]
        lo_b = max(lo_b - 1.0 if j == 0 else lo_b, math.log(box.amp_lo))
        hi_b = min(hi_b + 1.0 if j == len(grid) - 1 else hi_b, math.log(box.amp_hi))
        res_g = optimize.minimize_scalar(neg_profile, bounds=(lo_b, hi_b), method="bounded", options={"xatol": 1e-10})
        g_hat = math.exp(res_g.x)
    X, res = solve(g_hat)

    # information for (g?, linear params)
    mu = X @ res.beta
    if n == 2:
        bm = res.beta[0]
        dg = np.zeros((data.K, 3))
        dg[:, 2] = bm * data.F[:, 0]
        G = np.column_stack([dg.ravel(), X])
        names = ["g"] + lin_names
        est = [g_hat] + list(res.beta)
    else:
        G = X
        names = lin_names
        est = list(res.beta)
    info = G.T @ (G / mu[:, None]) / data.K
    cov, cond = invert_information(info, data.K, opts.cond_limit)
    se = np.sqrt(np.maximum(np.diag(cov), 0)) if cov is not None else np.full(len(names), math.nan)
    partial = {nm: (float(e), float(s)) for nm, e, s in zip(names, est, se)}
    ident = identifiable_set(n)
    notes = [f"horizon n={n} < 3: only {', '.join(ident.functionals)} are identifiable; phi not estimated"]
    return PhiEstimateReport(
        phi_hat=None, loglik=res.loglik, fisher=info, covariance=cov, condition_number=cond,
        iterations=res.iterations, converged=res.converged, active_bounds={}, free=tuple(names),
        K=data.K, n=n, method="partial", identifiable=ident, warnings=notes,
        loglik_path=res.loglik_path, partial=partial,
    )


# --- simulation through the intensity ------------------------------------------

def simulate_via_intensity(phi: IdentifiableParams, n, K, master_seed, c, d) -> ObservedDataset:
    """Observed counts drawn directly from the conditional laws:
    ``R[i] ~ Poisson(Lambda[i])``, ``V[i] ~ Bin(R[i], c)``, ``F[i] ~ Bin(V[i], d)``."""
    if n < 0 or K < 1:
        raise DomainError(f"need n >= 0 and K >= 1, got n={n}, K={K}")
    for name, p in (("c", c), ("d", d)):
        if not 0 <= p <= 1:
            raise DomainError(f"{name} must lie in [0, 1], got {p}")
    counts = np.empty((K, n + 1, 3), dtype=np.int64)
    for k in range(K):
        rng = RngHandle(master_seed, k)
        bank, new = phi.bs, phi.bt
        for i in range(n + 1):
            r = sample_poisson(bank + new, rng)
            v = sample_binomial(r, c, rng)
            f = sample_binomial(v, d, rng)
            counts[k, i] = (r, v, f)
            bank, new = phi.a * bank + phi.g * new, phi.bm * f + phi.bu
    return ObservedDataset(counts)
