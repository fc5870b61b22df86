"""Five-stage annual-plant branching process with seed immigration.

Stage order inside a cycle ``i`` is ``(S, T, R, V, F)``: old seeds in the
bank, new seeds, autumn rosettes, vernalized rosettes, mature plants.  Old and
new seeds split multinomially into (survive to next year's bank, germinate
into this year's rosettes, die).  Rosettes are thinned twice, and mature plants
shed new seeds that join the immigrants to form next year's ``T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import DomainError
from .stochastic import (
    DistributionSpec,
    RngHandle,
    RngLike,
    as_generator,
    sample_binomial,
    sample_count,
    sample_multinomial,
    sample_offspring_total,
    sample_poisson,
)

STAGES = ("S", "T", "R", "V", "F")
OBSERVED_STAGES = ("R", "V", "F")


@dataclass(frozen=True)
class DemographicParams:
    """Full parameter vector of one life cycle.

    ``a``/``b``: old seed survives in the bank / germinates.  ``a_prime``/``b_prime``:
    same for new seeds.  ``c``: rosette vernalizes.  ``d``: vernalized rosette
    matures.  ``sigma``/``tau``: Poisson means of the initial old/new seed counts.
    """

    a: float
    b: float
    a_prime: float
    b_prime: float
    c: float
    d: float
    offspring: DistributionSpec
    immigration: DistributionSpec
    sigma: float
    tau: float

    def __post_init__(self):
        for name in ("a", "b", "a_prime", "b_prime", "c", "d"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {value}")
        if self.a + self.b > 1.0:
            raise DomainError(f"a + b must be <= 1, got {self.a + self.b}")
        if self.a_prime + self.b_prime > 1.0:
            raise DomainError(f"a' + b' must be <= 1, got {self.a_prime + self.b_prime}")
        for name in ("sigma", "tau"):
            value = getattr(self, name)
            if not value >= 0 or not np.isfinite(value):
                raise DomainError(f"{name} must be finite and >= 0, got {value}")

    @classmethod
    def reference(cls, *, a=0.15, offspring=None, immigration=None, **overrides):
        """Parameters of the published robustness study (Poisson laws unless overridden)."""
        values = dict(
            a=a, b=0.5, a_prime=0.006, b_prime=0.5, c=0.21, d=0.01, sigma=50.0, tau=50.0
        )
        m = overrides.pop("m", 13.0)
        u = overrides.pop("u", 80.0)
        values.update(overrides)
        return cls(
            offspring=offspring or DistributionSpec.poisson(m),
            immigration=immigration or DistributionSpec.poisson(u),
            **values,
        )

    @property
    def m(self):
        return self.offspring.mean

    @property
    def u(self):
        return self.immigration.mean

    def replace(self, **changes):
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return DemographicParams(**values)


@dataclass(frozen=True)
class PopulationState:
    """Counts ``(S, T, R, V, F)`` of one population in one cycle.

    ``next_S`` holds the bank survivors already realized by the same
    multinomial split that produced ``R``; it is ``None`` for hand-built states.
    """

    S: int
    T: int
    R: int
    V: int
    F: int
    next_S: Optional[int] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name in STAGES:
            if getattr(self, name) < 0:
                raise DomainError(f"stage count {name} must be >= 0")

    def as_tuple(self):
        return (self.S, self.T, self.R, self.V, self.F)


def split_seeds(params: DemographicParams, s, t, rng: RngLike):
    """Joint fate of this year's seeds: returns ``(R, next_S)``.

    Old and new seeds each go through one multinomial draw, so the rosette
    count and the surviving bank share the dependence of the model.
    """
    to_bank_old, to_rosette_old = sample_multinomial(s, (params.a, params.b), rng)
    to_bank_new, to_rosette_new = sample_multinomial(t, (params.a_prime, params.b_prime), rng)
    return to_rosette_old + to_rosette_new, to_bank_old + to_bank_new


def sample_bank_given_rosettes(params: DemographicParams, s, t, r, rng: RngLike):
    """Draw next year's bank from its conditional law given ``(s, t, r)``.

    ``r`` splits into old/new origin with weights Bin(s, b)(j) Bin(t, b')(r - j);
    the non-germinated seeds then survive with probability a/(1-b), a'/(1-b').
    """
    lo, hi = max(0, r - t), min(s, r)
    if lo > hi:
        raise DomainError(f"rosette count {r} exceeds available seeds {s} + {t}")
    j = np.arange(lo, hi + 1)
    logw = stats.binom.logpmf(j, s, params.b) + stats.binom.logpmf(r - j, t, params.b_prime)
    w = np.exp(logw - logsumexp(logw))
    gen = as_generator(rng)
    j_old = int(gen.choice(j, p=w / w.sum()))
    old = sample_binomial(s - j_old, params.a / (1.0 - params.b), rng)
    new = sample_binomial(t - (r - j_old), params.a_prime / (1.0 - params.b_prime), rng)
    return old + new


def _complete_cycle(params, s, t, rng):
    r, s_next = split_seeds(params, s, t, rng)
    v = sample_binomial(r, params.c, rng)
    f = sample_binomial(v, params.d, rng)
    return PopulationState(s, t, r, v, f, next_S=s_next)


def init_population(params: DemographicParams, rng: RngLike) -> PopulationState:
    s0 = sample_poisson(params.sigma, rng)
    t0 = sample_poisson(params.tau, rng)
    return _complete_cycle(params, s0, t0, rng)


def next_seeds(params: DemographicParams, x: PopulationState, rng: RngLike):
    """``(S, T)`` of the following cycle."""
    if x.next_S is not None:
        s_next = x.next_S
    else:
        s_next = sample_bank_given_rosettes(params, x.S, x.T, x.R, rng)
    t_next = sample_offspring_total(x.F, params.offspring, rng) + sample_count(params.immigration, rng)
    return s_next, t_next


def step(params: DemographicParams, x: PopulationState, rng: RngLike) -> PopulationState:
    """One full life cycle from ``x``."""
    s_next, t_next = next_seeds(params, x, rng)
    return _complete_cycle(params, s_next, t_next, rng)


@dataclass
class CompleteDataset:
    """``states[k, i]`` is ``(S, T, R, V, F)`` of population ``k`` at cycle ``i``;
    ``terminal[k]`` is ``(S, T)`` at cycle ``n + 1``."""

    states: np.ndarray
    terminal: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.terminal = np.asarray(self.terminal, dtype=np.int64)
        if self.states.ndim != 3 or self.states.shape[2] != 5:
            raise DomainError(f"states must have shape (K, n+1, 5), got {self.states.shape}")
        if self.terminal.shape != (self.states.shape[0], 2):
            raise DomainError(f"terminal must have shape (K, 2), got {self.terminal.shape}")
        if self.states.shape[0] < 1 or self.states.shape[1] < 1:
            raise DomainError("dataset needs at least one population and one cycle")
        if (self.states < 0).any() or (self.terminal < 0).any():
            raise DomainError("counts must be nonnegative")

    @property
    def K(self):
        return self.states.shape[0]

    @property
    def n(self):
        return self.states.shape[1] - 1

    S = property(lambda self: self.states[:, :, 0])
    T = property(lambda self: self.states[:, :, 1])
    R = property(lambda self: self.states[:, :, 2])
    V = property(lambda self: self.states[:, :, 3])
    F = property(lambda self: self.states[:, :, 4])

    def seeds_through_terminal(self):
        """``(S, T)`` arrays of shape ``(K, n + 2)`` including cycle ``n + 1``."""
        S = np.concatenate([self.S, self.terminal[:, :1]], axis=1)
        T = np.concatenate([self.T, self.terminal[:, 1:]], axis=1)
        return S, T


@dataclass
class ObservedDataset:
    """``counts[k, i]`` is ``(R, V, F)`` of population ``k`` at cycle ``i``."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 3 or self.counts.shape[2] != 3:
            raise DomainError(f"counts must have shape (K, n+1, 3), got {self.counts.shape}")
        if self.counts.shape[0] < 1 or self.counts.shape[1] < 1:
            raise DomainError("dataset needs at least one population and one cycle")
        if (self.counts < 0).any():
            raise DomainError("counts must be nonnegative")

    @property
    def K(self):
        return self.counts.shape[0]

    @property
    def n(self):
        return self.counts.shape[1] - 1

    R = property(lambda self: self.counts[:, :, 0])
    V = property(lambda self: self.counts[:, :, 1])
    F = property(lambda self: self.counts[:, :, 2])


def simulate_population(params: DemographicParams, n, rng: RngLike):
    """One trajectory: ``(states (n+1, 5), terminal (2,))``."""
    states = np.empty((n + 1, 5), dtype=np.int64)
    x = init_population(params, rng)
    states[0] = x.as_tuple()
    for i in range(1, n + 1):
        x = step(params, x, rng)
        states[i] = x.as_tuple()
    terminal = np.array(next_seeds(params, x, rng), dtype=np.int64)
    return states, terminal


def simulate(params: DemographicParams, n, K, master_seed) -> CompleteDataset:
    """``K`` independent trajectories over cycles ``0..n``; population ``k`` uses stream ``k``."""
    if n < 0 or K < 1:
        raise DomainError(f"need n >= 0 and K >= 1, got n={n}, K={K}")
    states = np.empty((K, n + 1, 5), dtype=np.int64)
    terminal = np.empty((K, 2), dtype=np.int64)
    for k in range(K):
        states[k], terminal[k] = simulate_population(params, n, RngHandle(master_seed, k))
    return CompleteDataset(states, terminal)


def observe(data: CompleteDataset) -> ObservedDataset:
    return ObservedDataset(data.states[:, :, 2:5].copy())
