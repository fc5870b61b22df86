"""Monte Carlo robustness study: Poisson-based estimation on overdispersed data.

For each variance/mean ratio, ``M`` datasets of ``K`` populations are simulated
with the full five-stage model, the seed stages are hidden, and the amplitudes
``(b'm, b'u, b sigma, b' tau)`` are re-estimated from the rosette counts.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dynamics import DemographicParams, observe, simulate
from .errors import DomainError, ParseError, SeedbankError
from .incomplete import FitOptions, IdentifiableParams, fit_phi_full, fit_phi_reduced
from .io import fmt, read_kv_file
from .stochastic import DistributionSpec

TARGETS = ("bm", "bu", "bs", "bt")
CSV_HEADER = ["ratio", "bm_est", "bm_sd", "bu_est", "bu_sd", "bs_est", "bs_sd", "bt_est", "bt_sd", "failures"]
DEFAULT_RATIOS = (2.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0)
FAILURE_FLAG_FRACTION = 0.10


@dataclass
class ExperimentConfig:
    a: float = 0.15
    a_prime: float = 0.006
    b: float = 0.5
    b_prime: float = 0.5
    c: float = 0.21
    d: float = 0.01
    m: float = 13.0
    u: float = 80.0
    sigma: float = 50.0
    tau: float = 50.0
    deviation: str = "offspring"
    ratios: tuple = DEFAULT_RATIOS
    M: int = 100
    K: int = 300
    n: int = 4
    master_seed: int = 20080101
    fit_mode: str = "reduced"
    workers: int = 1

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if self.deviation not in ("offspring", "immigration", "none"):
            raise DomainError(f"deviation must be offspring, immigration or none, got {self.deviation!r}")
        if self.fit_mode not in ("reduced", "full"):
            raise DomainError(f"fit_mode must be reduced or full, got {self.fit_mode!r}")
        if self.deviation != "none" and (not self.ratios or any(r <= 1 for r in self.ratios)):
            raise DomainError("every variance/mean ratio must exceed 1 (strict overdispersion)")
        for name in ("M", "K", "workers"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.n < 0:
            raise DomainError("n must be >= 0")
        self.params(1.0 if self.deviation == "none" else self.ratios[0])

    def params(self, ratio) -> DemographicParams:
        offspring = DistributionSpec.poisson(self.m)
        immigration = DistributionSpec.poisson(self.u)
        if self.deviation == "offspring":
            offspring = DistributionSpec.from_ratio(self.m, ratio)
        elif self.deviation == "immigration":
            immigration = DistributionSpec.from_ratio(self.u, ratio)
        return DemographicParams(
            a=self.a, b=self.b, a_prime=self.a_prime, b_prime=self.b_prime, c=self.c, d=self.d,
            offspring=offspring, immigration=immigration, sigma=self.sigma, tau=self.tau,
        )

    def truth(self) -> IdentifiableParams:
        return IdentifiableParams.from_demographic(self.params(1.0 if self.deviation == "none" else self.ratios[0]))

    def row_ratios(self):
        return (1.0,) if self.deviation == "none" else self.ratios

    @classmethod
    def from_file(cls, path):
        values, lines = read_kv_file(path)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ParseError(f"unknown config key {key!r}", lines.get(key), path)
            kwargs[key] = _coerce(key, value, known[key], lines.get(key), path)
        try:
            return cls(**kwargs)
        except DomainError as exc:
            raise ParseError(str(exc), None, path) from None


def _coerce(key, value, fld, line, path):
    try:
        if key == "ratios":
            if isinstance(value, (int, float)):
                value = [value]
            return tuple(float(v) for v in value)
        if key in ("deviation", "fit_mode"):
            return str(value)
        if fld.type in ("int",) or key in ("M", "K", "n", "master_seed", "workers"):
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        raise ParseError(f"bad value for {key}: {value!r}", line, path) from None


@dataclass
class ExperimentRow:
    ratio: float
    means: dict
    sds: dict
    completed: int
    failures: int
    flagged: bool = False
    estimates: np.ndarray = field(default=None, repr=False)

    def csv_row(self):
        out = [fmt(self.ratio)]
        for t in TARGETS:
            out += [fmt(self.means[t]), fmt(self.sds[t])]
        out.append(str(self.failures))
        return out


def replicate_seed(master_seed, replicate):
    """64-bit master seed of one replicate, derived from the experiment seed."""
    state = np.random.SeedSequence([int(master_seed), int(replicate)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def run_replicate(config: ExperimentConfig, ratio, replicate):
    """Estimates ``(bm, bu, bs, bt)`` of one replicate, or ``None`` when the fit fails."""
    params = config.params(ratio)
    truth = IdentifiableParams.from_demographic(params)
    data = observe(simulate(params, config.n, config.K, replicate_seed(config.master_seed, replicate)))
    try:
        if config.fit_mode == "reduced":
            rep = fit_phi_reduced(data, truth.a, truth.g)
        else:
            rep = fit_phi_full(data, options=FitOptions(seed=replicate))
    except (SeedbankError, np.linalg.LinAlgError):
        return None
    if not rep.converged or rep.phi_hat is None:
        return None
    return np.array([getattr(rep.phi_hat, t) for t in TARGETS])


def _run_ratio(args):
    config, ratio, replicate = args
    return run_replicate(config, ratio, replicate)


def run_table_experiment(config: ExperimentConfig, out_path=None):
    """One :class:`ExperimentRow` per ratio; optionally writes the table CSV."""
    rows = []
    for ratio in config.row_ratios():
        jobs = [(config, ratio, r) for r in range(config.M)]
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(_run_ratio, jobs))
        else:
            results = [_run_ratio(j) for j in jobs]
        good = [r for r in results if r is not None]
        failures = len(results) - len(good)
        est = np.array(good) if good else np.empty((0, 4))
        means = {t: float(est[:, j].mean()) if len(good) else math.nan for j, t in enumerate(TARGETS)}
        sds = {t: float(est[:, j].std(ddof=1)) if len(good) > 1 else math.nan for j, t in enumerate(TARGETS)}
        rows.append(
            ExperimentRow(
                ratio=ratio, means=means, sds=sds, completed=len(good), failures=failures,
                flagged=failures > FAILURE_FLAG_FRACTION * config.M, estimates=est,
            )
        )
    if out_path is not None:
        write_experiment_csv(rows, out_path)
    return rows


def write_experiment_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow(row.csv_row())


def config_dict(config: ExperimentConfig):
    d = asdict(config)
    d["ratios"] = list(config.ratios)
    return d
