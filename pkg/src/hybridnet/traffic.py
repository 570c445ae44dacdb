"""Packet generation, FIFO queueing and shortest-path forwarding on the
backbone, plus the run-level metrics (order parameter, arrival time, load
spread).

Each time step runs, in order: move users and refresh gateways, generate
packets at source gateways, let every station forward or deliver up to ``C``
packets from the head of its queue. A packet is only eligible if it was
queued when the step began, so one hop costs one step.

Two engines implement the step: the readable functions below
(``engine="reference"``) and the compiled loop in ``_kernel``
(``engine="fast"``). Fed the same seed they produce identical trajectories.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernel
from .mobility import BOUNDARY_MODES, init_users, max_speed, move_all
from .topology import Backbone, InvalidParameterError, make_backbone

STRATEGIES = ("random", "min_load", "max_load")


@dataclass(frozen=True)
class SimConfig:
    edge_len: int = 32
    n: int = 1000
    v: float = 0.3
    rho: float = 0.1
    C: int = 10
    P: float = 0.0
    strategy: str = "random"
    seed: int = 0
    warmup_steps: int = 1000
    measure_steps: int = 5000
    boundary: str = "resample"
    load_snapshot: bool = False
    delivery_uses_capacity: bool = True

    def __post_init__(self):
        if self.edge_len < 2:
            raise InvalidParameterError("edge_len must be >= 2")
        if self.n < 2:
            raise InvalidParameterError("need at least 2 users")
        if not 0.0 <= self.v <= max_speed(self.edge_len):
            raise InvalidParameterError(f"speed {self.v} out of range")
        # rho > 1 means floor(rho) packets per user per step plus one more w.p. frac(rho)
        if not (self.rho >= 0.0 and math.isfinite(self.rho)):
            raise InvalidParameterError(f"rho must be >= 0, got {self.rho}")
        if self.C < 1:
            raise InvalidParameterError("C must be >= 1")
        if not 0.0 <= self.P <= 1.0:
            raise InvalidParameterError("P must lie in [0, 1]")
        if self.strategy not in STRATEGIES:
            raise InvalidParameterError(f"unknown strategy {self.strategy!r}")
        if self.boundary not in BOUNDARY_MODES:
            raise InvalidParameterError(f"unknown boundary mode {self.boundary!r}")
        if self.warmup_steps < 0 or self.measure_steps < 2:
            raise InvalidParameterError("need warmup_steps >= 0 and measure_steps >= 2")

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


@dataclass
class Packet:
    src_user: int
    dst_user: int
    created_at: int
    path: Optional[list] = None

    def __post_init__(self):
        if self.src_user == self.dst_user:
            raise InvalidParameterError("packet source and destination coincide")


@dataclass
class TrafficState:
    n_stations: int
    queues: list = field(default=None)
    W: int = 0
    t: int = 0
    delivered_log: list = field(default_factory=list)
    eligible: Optional[list] = None
    created_last: int = 0
    delivered_last: int = 0
    max_handled: int = 0
    track_paths: bool = False

    def __post_init__(self):
        if self.queues is None:
            self.queues = [deque() for _ in range(self.n_stations)]

    def loads(self) -> list:
        return [len(q) for q in self.queues]

    def snapshot(self) -> None:
        """Freeze which packets may move this step (those queued right now)."""
        self.eligible = self.loads()


class RoutingInvariantError(RuntimeError):
    pass


def generate_packets(state: TrafficState, users: list, rho: float, rng) -> TrafficState:
    n = len(users)
    if n < 2:
        raise InvalidParameterError("need at least 2 users")
    base = int(math.floor(rho))
    frac = rho - base
    made = 0
    for u in users:
        cnt = base + (1 if rng.random() < frac else 0)
        for _ in range(cnt):
            dst = int(rng.random() * (n - 1))
            if dst >= u.id:
                dst += 1
            pkt = Packet(u.id, dst, state.t, [] if state.track_paths else None)
            state.queues[u.gateway].append(pkt)
            made += 1
    state.W += made
    state.created_last = made
    return state


def next_hop(s: int, pkt: Packet, target: int, strategy: str, backbone: Backbone,
             state: TrafficState, rng, loads=None) -> int:
    """Pick a neighbor of ``s`` one hop closer to ``target``.

    ``min_load`` / ``max_load`` compare queue lengths (``loads`` if given,
    else the live queues); ties and the ``random`` strategy draw uniformly.
    """
    dist = backbone.dist
    d_next = dist[target, s] - 1
    cands = [q for q in backbone.adjacency[s] if dist[target, q] == d_next]
    if not cands:
        raise RoutingInvariantError(f"no shortest-path neighbor from {s} to {target}")
    if strategy != "random":
        if loads is None:
            loads = [len(q) for q in state.queues]
        ls = [loads[q] for q in cands]
        best = min(ls) if strategy == "min_load" else max(ls)
        cands = [q for q, lq in zip(cands, ls) if lq == best]
    if len(cands) == 1:
        return cands[0]
    return cands[int(rng.random() * len(cands))]


def deliver_step(state: TrafficState, users: list, backbone: Backbone, C: int,
                 strategy: str, rng, load_snapshot: bool = False,
                 delivery_uses_capacity: bool = True) -> TrafficState:
    eligible = state.eligible if state.eligible is not None else state.loads()
    loads = eligible if load_snapshot else None
    gone = 0
    for s in range(state.n_stations):
        queue = state.queues[s]
        remaining = eligible[s]
        budget = C
        while remaining > 0 and budget > 0:
            pkt = queue.popleft()
            remaining -= 1
            target = users[pkt.dst_user].gateway
            if pkt.path is not None:
                pkt.path.append((s, target))
            if target == s:
                if delivery_uses_capacity:
                    budget -= 1
                state.delivered_log.append((pkt.created_at, state.t))
                gone += 1
                continue
            budget -= 1
            q = next_hop(s, pkt, target, strategy, backbone, state, rng, loads)
            state.queues[q].append(pkt)
        state.max_handled = max(state.max_handled, C - budget)
    state.W -= gone
    state.delivered_last = gone
    state.eligible = None
    return state


def step(state: TrafficState, users: list, backbone: Backbone, cfg: SimConfig, rng) -> list:
    """Advance one time step; returns the moved users."""
    users = move_all(users, cfg.edge_len, rng, cfg.boundary)
    state.snapshot()
    generate_packets(state, users, cfg.rho, rng)
    deliver_step(state, users, backbone, cfg.C, cfg.strategy, rng,
                 cfg.load_snapshot, cfg.delivery_uses_capacity)
    state.t += 1
    return users


def load_variance(mean_loads) -> float:
    loads = np.asarray(mean_loads, dtype=float)
    if loads.size == 0:
        raise InvalidParameterError("need at least one station")
    return float(np.sqrt(np.mean((loads - loads.mean()) ** 2)))


def growth_slope(W) -> float:
    """Least-squares slope of W(t) against t."""
    W = np.asarray(W, dtype=float)
    t = np.arange(W.size, dtype=float)
    tc = t - t.mean()
    return float(np.dot(tc, W - W.mean()) / np.dot(tc, tc))


def order_parameter(slope: float, C: int, n: int, rho: float) -> float:
    if rho == 0.0:
        return 0.0
    return max(0.0, C / (n * rho) * slope)


@dataclass
class MetricsRecord:
    eta: float
    T: float
    sigma_L: float
    slope: float
    W: np.ndarray
    created: np.ndarray
    delivered: np.ndarray
    mean_loads: np.ndarray
    deliveries: int
    max_handled: int
    eta_undefined: bool = False
    W_full: Optional[np.ndarray] = None
    created_full: Optional[np.ndarray] = None
    delivered_full: Optional[np.ndarray] = None

    def csv_row(self, cfg: SimConfig) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(asdict(cfg).values()) + [
            repr(self.eta), repr(self.T), repr(self.sigma_L), repr(self.slope), self.deliveries])
        return buf.getvalue()

    @staticmethod
    def csv_header() -> str:
        cols = [f.name for f in SimConfig.__dataclass_fields__.values()]
        return ",".join(cols + ["eta", "T", "sigma_L", "slope", "deliveries"]) + "\n"


def dump_w_series(path, record: MetricsRecord, start: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "W"])
        for k, val in enumerate(record.W):
            w.writerow([start + k, int(val)])


def derive_seeds(seed: int) -> tuple:
    """(topology seed, dynamics seed) for one run."""
    a, b = np.random.SeedSequence(seed).generate_state(2)
    return int(a), int(b)


def backbone_for(cfg: SimConfig) -> Backbone:
    topo_seed, _ = derive_seeds(cfg.seed)
    return make_backbone(cfg.edge_len, cfg.P, topo_seed if cfg.P > 0 else None)


def _finish(cfg, W, created, delivered, load_sum, delay_sum, delay_count, max_handled):
    w0 = cfg.warmup_steps
    Wm = W[w0:]
    slope = growth_slope(Wm)
    mean_loads = load_sum / cfg.measure_steps
    return MetricsRecord(
        eta=order_parameter(slope, cfg.C, cfg.n, cfg.rho),
        T=delay_sum / delay_count if delay_count else float("nan"),
        sigma_L=load_variance(mean_loads),
        slope=slope,
        W=Wm,
        created=created[w0:],
        delivered=delivered[w0:],
        mean_loads=mean_loads,
        deliveries=int(delay_count),
        max_handled=int(max_handled),
        eta_undefined=cfg.rho == 0.0,
        W_full=W,
        created_full=created,
        delivered_full=delivered,
    )


def run_sim(cfg: SimConfig, backbone: Optional[Backbone] = None, engine: str = "fast") -> MetricsRecord:
    if backbone is None:
        backbone = backbone_for(cfg)
    if backbone.edge_len != cfg.edge_len or backbone.dist is None:
        raise InvalidParameterError("backbone does not match config or lacks distances")
    _, dyn_seed = derive_seeds(cfg.seed)
    if engine == "fast":
        indptr, indices = backbone.csr()
        out = _kernel.simulate(
            indptr, indices, backbone.dist, cfg.edge_len, cfg.n, float(cfg.v), float(cfg.rho),
            cfg.C, _kernel.STRATEGY_CODES[cfg.strategy], _kernel.BOUNDARY_CODES[cfg.boundary],
            cfg.load_snapshot, cfg.delivery_uses_capacity, dyn_seed,
            cfg.warmup_steps, cfg.measure_steps)
        W, created, delivered, load_sum, delay_sum, delay_count, max_handled, faults = out
        if faults:
            raise RoutingInvariantError(f"{faults} forwarding decisions found no next hop")
        return _finish(cfg, W, created, delivered, load_sum, delay_sum, delay_count, max_handled)
    if engine != "reference":
        raise InvalidParameterError(f"unknown engine {engine!r}")
    return _run_reference(cfg, backbone, dyn_seed)


def _run_reference(cfg: SimConfig, backbone: Backbone, dyn_seed: int) -> MetricsRecord:
    rng = np.random.RandomState(dyn_seed)
    users = init_users(cfg.n, cfg.edge_len, cfg.v, rng)
    state = TrafficState(backbone.n_stations)
    total = cfg.warmup_steps + cfg.measure_steps
    W = np.zeros(total, dtype=np.int64)
    created = np.zeros(total, dtype=np.int64)
    delivered = np.zeros(total, dtype=np.int64)
    load_sum = np.zeros(backbone.n_stations)
    delay_sum, delay_count = 0.0, 0
    for t in range(total):
        users = step(state, users, backbone, cfg, rng)
        W[t], created[t], delivered[t] = state.W, state.created_last, state.delivered_last
        if t >= cfg.warmup_steps:
            load_sum += state.loads()
            for c, d in state.delivered_log:
                delay_sum += d - c
                delay_count += 1
        state.delivered_log.clear()
    return _finish(cfg, W, created, delivered, load_sum, delay_sum, delay_count, state.max_handled)
