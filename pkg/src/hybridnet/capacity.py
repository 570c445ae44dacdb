"""Network capacity: the critical generation rate rho_c, estimated from the
largest station betweenness or located by bisection on simulated growth of
the in-network packet count."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .topology import Backbone, InvalidParameterError
from .traffic import SimConfig, backbone_for, run_sim


class DegenerateTopologyError(ValueError):
    pass


class NoFreeFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnalyticEstimate:
    """Mean-field capacity of a backbone serving ``n`` users."""

    rho_c: float
    n: int
    n_stations: int
    max_betweenness: float

    @property
    def inserted_at_critical(self) -> float:
        """Packets entering per step at the critical point (users x rate)."""
        return self.n * self.rho_c

    @property
    def station_rate(self) -> float:
        """Equivalent per-station generation rate at the critical point."""
        return self.inserted_at_critical / self.n_stations


def analytic_estimate(backbone: Backbone, C: int, n: int) -> AnalyticEstimate:
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    N = backbone.n_stations
    b_max = float(np.max(backbone.betweenness))
    if b_max <= 0.0:
        raise DegenerateTopologyError("largest betweenness is zero")
    return AnalyticEstimate(N * (N - 1) * C / (n * b_max), n, N, b_max)


def estimate_rho_c(backbone: Backbone, C: int, n: int) -> float:
    return analytic_estimate(backbone, C, n).rho_c


@dataclass
class Probe:
    rho: float
    slope_mean: float
    slope_median: float
    congested: bool
    slopes: list = field(default_factory=list, repr=False)


@dataclass
class CapacityResult:
    rho_c: float
    method: str
    iterations: int = 0
    bracket: tuple = (float("nan"), float("nan"))
    saturated: bool = False
    probes: list = field(default_factory=list, repr=False)

    def write_probe_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho", "slope_mean", "slope_median", "congested"])
            for p in self.probes:
                w.writerow([repr(p.rho), repr(p.slope_mean), repr(p.slope_median), int(p.congested)])


def probe_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _slope(args) -> float:
    cfg, backbone = args
    return run_sim(cfg, backbone).slope


def find_rho_c(template: SimConfig, runs_per_probe: int = 10, threshold: float = 1.0,
               tol: float = 0.002, initial: float = 0.1, rho_max: float = 1.0,
               aggregate: str = "median", backbone: Optional[Backbone] = None,
               jobs: int = 1, min_rho: float = 1e-4, rel_tol: float = 0.0) -> CapacityResult:
    """Bisect on ``congested(rho)``: aggregated W(t) slope >= ``threshold``.

    The backbone is fixed by ``template.seed``; probe ``k`` runs dynamics
    seed ``probe_seed(template.seed, k)`` at every rho, so successive probes
    share random numbers. The upper bracket doubles from ``initial`` (capped
    at ``rho_max``); if never congested there, ``rho_max`` is returned with
    ``saturated`` set. Bisection stops once the bracket is narrower than
    ``tol`` or than ``rel_tol * hi``.
    """
    if threshold <= 0 or tol <= 0:
        raise InvalidParameterError("threshold and tol must be positive")
    if rel_tol < 0:
        raise InvalidParameterError("rel_tol must be >= 0")
    if runs_per_probe < 1:
        raise InvalidParameterError("runs_per_probe must be >= 1")
    if aggregate not in ("median", "mean"):
        raise InvalidParameterError(f"unknown aggregate {aggregate!r}")
    if backbone is None:
        backbone = backbone_for(template)
    seeds = [probe_seed(template.seed, k) for k in range(runs_per_probe)]
    probes = []
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None

    def congested(rho: float) -> bool:
        cfgs = [(template.with_(rho=rho, seed=s), backbone) for s in seeds]
        slopes = list(pool.map(_slope, cfgs)) if pool else [_slope(a) for a in cfgs]
        mean, median = float(np.mean(slopes)), float(np.median(slopes))
        hit = (median if aggregate == "median" else mean) >= threshold
        probes.append(Probe(rho, mean, median, hit, slopes))
        return hit

    try:
        hi = min(initial, rho_max)
        if congested(hi):
            while True:
                lo = hi / 2.0
                if lo < min_rho:
                    raise NoFreeFlowError(f"congested even at rho={hi:g}")
                if not congested(lo):
                    break
                hi = lo
        else:
            lo = hi
            while True:
                if hi >= rho_max:
                    return CapacityResult(rho_max, "bisection", 0, (lo, rho_max), True, probes)
                hi = min(2.0 * hi, rho_max)
                if congested(hi):
                    break
                lo = hi
        iterations = 0
        while hi - lo > tol and hi - lo > rel_tol * hi:
            mid = 0.5 * (lo + hi)
            if congested(mid):
                hi = mid
            else:
                lo = mid
            iterations += 1
    finally:
        if pool:
            pool.shutdown()
    return CapacityResult(0.5 * (lo + hi), "bisection", iterations, (lo, hi), False, probes)


def rho_c_upper_bound(template: SimConfig) -> float:
    """No backbone can absorb more than N*C packets per step."""
    return template.edge_len ** 2 * template.C / template.n
