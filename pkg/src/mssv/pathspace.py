"""Discretized path space and numerical functional calculus.

Paths live on a uniform time grid and are cadlag at the right endpoint: the
last value may sit away from its left neighbour (a "bump"). On top of the
path operations (flat extension, bump, continuous concatenation, metric) this
module provides the numerical functional derivatives: a forward time
derivative built from flat extensions, central space derivatives of orders
1 to 3 built from terminal bumps, and their commutator (the Lie bracket),
which measures how strongly a functional couples time evolution to the
terminal value.

Conventions chosen so the discrete identities are exact rather than O(dt):
the running integral uses left-endpoint Riemann sums (so its time derivative
is exactly the current value and its space derivatives vanish), and the
quadratic variation is the plain sum of squared increments (so its second
space derivative is exactly 2).

All operations are pure and all types are immutable after construction, so
they are safe to share across Monte Carlo worker threads.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Path",
    "Functional",
    "DerivativeConfig",
    "GridMismatchError",
    "flat_extension",
    "bump",
    "concat",
    "d_lambda",
    "delta_t",
    "delta_x",
    "lie_bracket",
    "running_integral",
    "quadratic_variation",
    "terminal_value",
    "path_to_csv",
    "path_from_csv",
]

# Relative tolerance used when deciding whether two grids are the same.
_GRID_RTOL = 1e-9


class GridMismatchError(ValueError):
    """Raised when two paths do not share a compatible discretization."""


@dataclass(frozen=True, eq=False)
class Path:
    """A real-valued path sampled on a uniform grid.

    Attributes:
        t0: time of the first node (years).
        dt: grid spacing (years), strictly positive.
        values: one level per node; index i holds the value at t0 + i*dt.
            The final value is allowed to differ arbitrarily from its
            neighbour (cadlag right endpoint).
    """

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("path needs a 1-D array with at least one value")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    @property
    def t(self) -> float:
        """Current time of the path (time of the last node)."""
        return self.t0 + (self.values.size - 1) * self.dt

    @property
    def last(self) -> float:
        return float(self.values[-1])

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)


@dataclass(frozen=True, eq=False)
class Functional:
    """A deterministic map from paths to reals, with a descriptive name."""

    fn: Callable[[Path], float]
    name: str = "functional"

    def __call__(self, x: Path) -> float:
        return float(self.fn(x))


@dataclass(frozen=True)
class DerivativeConfig:
    """Step sizes for the numerical functional derivatives.

    Attributes:
        h: bump size in level units. None selects the adaptive default
            1e-4 * max(1, |x_t|), which balances truncation against roundoff
            for stock-level paths.
        delta_t_steps: number of grid steps in the flat-extension horizon of
            the time derivative.
    """

    h: float | None = None
    delta_t_steps: int = 1

    def __post_init__(self):
        if self.h is not None and not self.h > 0:
            raise ValueError(f"bump size must be positive, got {self.h}")
        if self.delta_t_steps < 1:
            raise ValueError("delta_t_steps must be at least 1")

    def bump_size(self, x: Path) -> float:
        if self.h is not None:
            return self.h
        return 1e-4 * max(1.0, abs(x.last))


def flat_extension(x: Path, n: int) -> Path:
    """Extend the path by n grid steps holding the last value constant."""
    if n < 0:
        raise ValueError("extension length must be nonnegative")
    if n == 0:
        return x
    vals = np.concatenate([x.values, np.full(n, x.values[-1])])
    return Path(x.t0, x.dt, vals)


def bump(x: Path, h: float) -> Path:
    """Shift the terminal value by h, leaving the rest of the path alone."""
    vals = x.values.copy()
    vals[-1] += h
    return Path(x.t0, x.dt, vals)


def _same_dt(a: Path, b: Path) -> bool:
    return abs(a.dt - b.dt) <= _GRID_RTOL * max(a.dt, b.dt)


def concat(x: Path, y: Path) -> Path:
    """Continuous paste of y onto the end of x.

    The result follows x up to its current time t, then follows the
    increments of y: value y_r - y_t + x_t for r beyond t. y must start
    (in time) where x ends and share the grid spacing.
    """
    if not _same_dt(x, y):
        raise GridMismatchError(
            f"incompatible grid steps dt={x.dt} vs dt={y.dt}"
        )
    if abs(y.t0 - x.t) > _GRID_RTOL * max(1.0, abs(x.t)):
        raise GridMismatchError(
            f"paths are not adjacent in time: x ends at {x.t}, y starts at {y.t0}"
        )
    shifted = y.values[1:] - y.values[0] + x.values[-1]
    return Path(x.t0, x.dt, np.concatenate([x.values, shifted]))


def d_lambda(x: Path, y: Path) -> float:
    """Path-space metric: sup distance after flat extension plus time gap."""
    if not _same_dt(x, y):
        raise GridMismatchError(
            f"incompatible grid steps dt={x.dt} vs dt={y.dt}"
        )
    if abs(x.t0 - y.t0) > _GRID_RTOL * max(1.0, abs(x.t0), abs(y.t0)):
        raise GridMismatchError(
            f"paths start at different times: {x.t0} vs {y.t0}"
        )
    if len(x) > len(y):
        x, y = y, x
    gap = len(y) - len(x)
    ext = flat_extension(x, gap) if gap else x
    sup = float(np.max(np.abs(ext.values - y.values)))
    return sup + gap * x.dt


def delta_t(f: Functional, x: Path, cfg: DerivativeConfig) -> float:
    """Forward time derivative via flat extension."""
    n = cfg.delta_t_steps
    return (f(flat_extension(x, n)) - f(x)) / (n * x.dt)


def delta_x(f: Functional, x: Path, cfg: DerivativeConfig, order: int = 1) -> float:
    """Central space derivative of the given order in the terminal bump."""
    h = cfg.bump_size(x)
    if order == 1:
        return (f(bump(x, h)) - f(bump(x, -h))) / (2.0 * h)
    if order == 2:
        return (f(bump(x, h)) - 2.0 * f(x) + f(bump(x, -h))) / (h * h)
    if order == 3:
        # Symmetric 4-point stencil (-1/2, 1, -1, 1/2) at (-2h, -h, h, 2h).
        return (
            -0.5 * f(bump(x, -2.0 * h))
            + f(bump(x, -h))
            - f(bump(x, h))
            + 0.5 * f(bump(x, 2.0 * h))
        ) / (h * h * h)
    raise ValueError(f"order must be 1, 2 or 3, got {order}")


def lie_bracket(f: Functional, x: Path, cfg: DerivativeConfig) -> float:
    """Commutator delta_x(delta_t f) - delta_t(delta_x f).

    Zero (in the small-step limit) characterizes weakly path-dependent
    functionals, for which the terminal bump and the flat extension commute.
    """
    tf = Functional(lambda p: delta_t(f, p, cfg), name=f"delta_t({f.name})")
    xf = Functional(lambda p: delta_x(f, p, cfg, 1), name=f"delta_x({f.name})")
    return delta_x(tf, x, cfg, 1) - delta_t(xf, x, cfg)


def running_integral() -> Functional:
    """Left-endpoint Riemann sum of the path (the running time integral).

    The left-endpoint rule makes delta_t exactly the current value and
    delta_x exactly zero: the terminal node carries no quadrature weight.
    """

    def _eval(x: Path) -> float:
        return float(np.sum(x.values[:-1]) * x.dt)

    return Functional(_eval, name="running_integral")


def quadratic_variation() -> Functional:
    """Sum of squared increments of the path."""

    def _eval(x: Path) -> float:
        d = np.diff(x.values)
        return float(np.dot(d, d))

    return Functional(_eval, name="quadratic_variation")


def terminal_value() -> Functional:
    return Functional(lambda x: x.last, name="terminal_value")


def path_to_csv(x: Path, file) -> None:
    """Write the path as CSV with a time,value header.

    `file` is a path-like or a writable text file object.
    """
    buf = io.StringIO()
    buf.write("time,value\n")
    for t, v in zip(x.times(), x.values):
        buf.write(f"{float(t)!r},{float(v)!r}\n")
    data = buf.getvalue()
    if hasattr(file, "write"):
        file.write(data)
    else:
        with open(file, "w") as fh:
            fh.write(data)


def path_from_csv(file) -> Path:
    """Read a path written by path_to_csv. Requires the time,value header."""
    if hasattr(file, "read"):
        lines = file.read().splitlines()
    else:
        with open(file) as fh:
            lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "time,value":
        raise ValueError("path CSV must start with a time,value header row")
    rows = [ln.split(",") for ln in lines[1:] if ln.strip()]
    times = np.array([float(r[0]) for r in rows])
    vals = np.array([float(r[1]) for r in rows])
    if times.size < 1:
        raise ValueError("path CSV has no data rows")
    if times.size == 1:
        # A single node carries no spacing information; use a unit step.
        return Path(float(times[0]), 1.0, vals)
    steps = np.diff(times)
    dt = float(np.median(steps))
    if np.max(np.abs(steps - dt)) > 1e-8 * max(1.0, abs(dt)):
        raise ValueError("path CSV grid is not uniform")
    return Path(float(times[0]), dt, vals)
