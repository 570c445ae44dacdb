"""Mobile users moving in straight lines inside the lattice square.

Random draws go through ``rng.random()`` only, in a fixed order (per user:
x, y, heading at init; heading resamples on boundary hits), so a
``numpy.random.RandomState`` seeded here reproduces the compiled engine's
stream exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

from .topology import InvalidParameterError

TWO_PI = 2.0 * math.pi
BOUNDARY_MODES = ("resample", "reflect")


class InvalidPositionError(ValueError):
    pass


@dataclass
class UserState:
    id: int
    x: float
    y: float
    heading: float
    speed: float
    gateway: int

    @property
    def pos(self) -> tuple:
        return (self.x, self.y)


def max_speed(edge_len: int) -> float:
    # from the square's center, the farthest reachable point is a corner
    return (edge_len - 1) / math.sqrt(2.0)


def _round_half_down(c: float) -> int:
    return int(math.ceil(c - 0.5))


def nearest_station(pos, edge_len: int) -> int:
    """Station closest to ``pos``; exact .5 ties go to the smaller index."""
    x, y = pos
    hi = edge_len - 1
    if not (0.0 <= x <= hi and 0.0 <= y <= hi):
        raise InvalidPositionError(f"position {pos} outside [0, {hi}]^2")
    return _round_half_down(x) * edge_len + _round_half_down(y)


def _inside(x: float, y: float, hi: float) -> bool:
    return 0.0 <= x <= hi and 0.0 <= y <= hi


def init_users(n: int, edge_len: int, v: float, rng) -> list:
    if n < 2:
        raise InvalidParameterError(f"need at least 2 users, got {n}")
    if v < 0 or v > max_speed(edge_len):
        raise InvalidParameterError(f"speed {v} outside [0, {max_speed(edge_len):.3f}]")
    hi = edge_len - 1
    users = []
    for i in range(n):
        x = rng.random() * hi
        y = rng.random() * hi
        h = rng.random() * TWO_PI
        users.append(UserState(i, x, y, h, v, nearest_station((x, y), edge_len)))
    return users


def move_user(u: UserState, edge_len: int, rng, boundary: str = "resample") -> UserState:
    """Advance one step of length ``u.speed``.

    A step that would leave the square is not split: the heading is redrawn
    (or mirrored, with ``boundary="reflect"``) and the full step taken from
    the current position.
    """
    v = u.speed
    if v == 0.0:
        return u
    hi = float(edge_len - 1)
    h = u.heading
    nx = u.x + v * math.cos(h)
    ny = u.y + v * math.sin(h)
    if not _inside(nx, ny, hi):
        if boundary == "reflect":
            if not 0.0 <= nx <= hi:
                h = math.pi - h
            if not 0.0 <= ny <= hi:
                h = -h
            h = h % TWO_PI
            nx = u.x + v * math.cos(h)
            ny = u.y + v * math.sin(h)
        while not _inside(nx, ny, hi):
            h = rng.random() * TWO_PI
            nx = u.x + v * math.cos(h)
            ny = u.y + v * math.sin(h)
    return UserState(u.id, nx, ny, h, v, nearest_station((nx, ny), edge_len))


def move_all(users: list, edge_len: int, rng, boundary: str = "resample") -> list:
    return [move_user(u, edge_len, rng, boundary) for u in users]


def write_trace(path, frames: Iterable) -> None:
    """Write ``t,user_id,x,y,gateway`` rows; ``frames`` yields ``(t, users)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "user_id", "x", "y", "gateway"])
        for t, users in frames:
            for u in users:
                w.writerow([t, u.id, repr(u.x), repr(u.y), u.gateway])
