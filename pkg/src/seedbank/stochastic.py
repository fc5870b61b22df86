"""Seedable samplers for the count distributions used by the life-cycle model.

Every population owns one :class:`RngHandle`.  A handle is a Philox
counter-based generator keyed by ``(master_seed, stream_index)``, so the draw
sequence of a stream does not depend on which other streams exist or on the
order in which they are consumed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DomainError

_MASK64 = (1 << 64) - 1
PROB_TOL = 1e-12

POISSON = "poisson"
NEGBIN = "negbin"
_KIND_ALIASES = {
    "poisson": POISSON,
    "negbin": NEGBIN,
    "negativebinomial": NEGBIN,
    "negative_binomial": NEGBIN,
    "nb": NEGBIN,
}


@dataclass(frozen=True)
class DistributionSpec:
    """Count law given by its first two moments.

    ``kind`` is ``"poisson"`` or ``"negbin"``.  For a Poisson law the variance
    is forced to the mean.  A negative binomial must be strictly overdispersed.
    """

    kind: str
    mean: float
    variance: float | None = None

    def __post_init__(self):
        kind = _KIND_ALIASES.get(str(self.kind).lower().replace(" ", ""))
        if kind is None:
            raise DomainError(f"unknown distribution kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        mean = float(self.mean)
        if not np.isfinite(mean) or mean < 0:
            raise DomainError(f"distribution mean must be >= 0, got {self.mean}")
        object.__setattr__(self, "mean", mean)
        if kind == POISSON:
            object.__setattr__(self, "variance", mean)
            return
        if self.variance is None:
            raise DomainError("negative binomial requires a variance")
        var = float(self.variance)
        if not var > mean or mean <= 0:
            raise DomainError(
                f"negative binomial needs variance > mean > 0, got mean={mean}, variance={var}"
            )
        object.__setattr__(self, "variance", var)

    @classmethod
    def poisson(cls, mean):
        return cls(POISSON, mean)

    @classmethod
    def negbin(cls, mean, variance):
        return cls(NEGBIN, mean, variance)

    @classmethod
    def from_ratio(cls, mean, ratio):
        """Poisson when ``ratio == 1``, otherwise negative binomial with variance ``ratio * mean``."""
        if ratio == 1:
            return cls.poisson(mean)
        return cls.negbin(mean, ratio * mean)

    @property
    def is_poisson(self):
        return self.kind == POISSON

    def negbin_shape(self):
        """Moment-matched ``(r, p)``: shape ``mean**2/(var-mean)`` and success probability ``mean/var``."""
        if self.kind != NEGBIN:
            raise DomainError("negbin_shape is only defined for negative binomial specs")
        r = self.mean**2 / (self.variance - self.mean)
        p = self.mean / self.variance
        return r, p


@dataclass
class RngHandle:
    """Independent random stream number ``stream_index`` under ``master_seed``."""

    master_seed: int
    stream_index: int = 0
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_index < 0:
            raise DomainError("master_seed and stream_index must be nonnegative")
        self.master_seed = int(self.master_seed) & _MASK64
        self.stream_index = int(self.stream_index) & _MASK64
        key = self.master_seed | (self.stream_index << 64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream_index):
        """A fresh handle on another stream of the same master seed."""
        return RngHandle(self.master_seed, stream_index)


RngLike = Union[RngHandle, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngHandle):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngHandle or numpy Generator, got {type(rng).__name__}")


def _check_count(n, name="n"):
    if n < 0 or int(n) != n:
        raise DomainError(f"{name} must be a nonnegative integer, got {n}")
    return int(n)


def _check_prob(p, name="p"):
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {p}")
    return float(p)


def sample_binomial(n, p, rng: RngLike) -> int:
    n = _check_count(n)
    p = _check_prob(p)
    if n == 0 or p == 0.0:
        return 0
    if p == 1.0:
        return n
    return int(as_generator(rng).binomial(n, p))


def sample_multinomial(n, probs: Sequence[float], rng: RngLike) -> tuple[int, ...]:
    """Multinomial cell counts with an implicit last (death) cell of mass ``1 - sum(probs)``.

    Sampled by sequential conditional binomials.
    """
    n = _check_count(n)
    probs = [float(q) for q in probs]
    if any(q < 0 for q in probs):
        raise DomainError(f"multinomial probabilities must be >= 0, got {probs}")
    total = sum(probs)
    if total > 1.0 + PROB_TOL:
        raise DomainError(f"multinomial probabilities sum to {total} > 1")
    out = []
    remaining = n
    mass = 1.0
    for q in probs:
        if remaining == 0 or q == 0.0:
            out.append(0)
            continue
        cond = min(1.0, q / mass) if mass > 0 else 1.0
        x = sample_binomial(remaining, cond, rng)
        out.append(x)
        remaining -= x
        mass -= q
    return tuple(out)


def sample_poisson(lam, rng: RngLike) -> int:
    lam = float(lam)
    if not lam >= 0 or not np.isfinite(lam):
        raise DomainError(f"Poisson mean must be finite and >= 0, got {lam}")
    if lam == 0.0:
        return 0
    return int(as_generator(rng).poisson(lam))


def _gamma_poisson(shape, scale, gen):
    # negative binomial as a gamma mixture of Poissons; shape may be non-integer
    return int(gen.poisson(gen.gamma(shape, scale)))


def sample_negative_binomial(spec: DistributionSpec, rng: RngLike) -> int:
    if spec.kind != NEGBIN:
        raise DomainError("sample_negative_binomial needs a negative binomial spec; use sample_poisson")
    r, p = spec.negbin_shape()
    return _gamma_poisson(r, (1.0 - p) / p, as_generator(rng))


def sample_count(spec: DistributionSpec, rng: RngLike) -> int:
    """One draw from ``spec``."""
    if spec.is_poisson:
        return sample_poisson(spec.mean, rng)
    return sample_negative_binomial(spec, rng)


def sample_offspring_total(f, spec: DistributionSpec, rng: RngLike) -> int:
    """Sum of ``f`` independent draws from ``spec``.

    Uses closure under convolution: Poisson(m)^{*f} = Poisson(f m) and
    NB(r, p)^{*f} = NB(f r, p).
    """
    f = _check_count(f, "f")
    if f == 0:
        return 0
    if spec.is_poisson:
        return sample_poisson(f * spec.mean, rng)
    r, p = spec.negbin_shape()
    return _gamma_poisson(f * r, (1.0 - p) / p, as_generator(rng))
