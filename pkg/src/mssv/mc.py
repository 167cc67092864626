"""Seeded, worker-count-independent Monte Carlo simulation.

Randomness is organized in fixed-size path chunks. Chunk i of a run with
seed s draws from a counter-based Philox generator keyed by (s, i), so the
set of random numbers consumed by a run depends only on (seed, n_paths,
chunk_size) and never on how chunks are distributed over worker threads.
Results are merged in chunk order, which makes every estimate bit-identical
for a fixed seed regardless of the worker count.

Simulation kernels:
  simulate_ou    exact-transition Ornstein-Uhlenbeck sampling
  simulate_full  log-Euler asset step (exact conditional lognormal given the
                 volatility frozen at the left node) with exact
                 Ornstein-Uhlenbeck transitions for the fast/slow factors
  simulate_bs    exact lognormal Black-Scholes continuation of a history path
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from mssv import pathspace
from mssv.model import ModelSpec
from mssv.pathspace import Path

__all__ = [
    "GridSpec",
    "Estimate",
    "McConfig",
    "mc_estimate",
    "simulate_ou",
    "simulate_full",
    "simulate_bs",
    "resolve_workers",
]

DEFAULT_CHUNK = 4096
WORKERS_ENV = "MSSV_DEFAULT_WORKERS"


def _touched_empty(shape) -> np.ndarray:
    """np.empty plus a bulk page touch.

    Demand-zero page faults are expensive under the sandboxed kernels this
    code tends to run on; one upfront fill is far cheaper than faulting a
    few pages per simulation step.
    """
    out = np.empty(shape)
    out.fill(0.0)
    return out


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid on [t0, T] with `steps` intervals."""

    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError(f"need T > t0, got [{self.t0}, {self.T}]")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.steps

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate: mean, standard error, sample count, seed."""

    mean: float
    stderr: float
    n_paths: int
    seed: int

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr cannot be negative")

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class McConfig:
    """Settings bundle for Monte Carlo estimators.

    antithetic pairs each drawn path with its sign-flipped driver and
    averages the pair into one sample, so n_paths counts pairs when it is on.
    """

    n_paths: int = 100_000
    seed: int = 0
    workers: int | None = None
    antithetic: bool = False
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need at least 2 paths")
        if self.chunk_size < 2 or self.chunk_size % 2:
            raise ValueError("chunk_size must be even and at least 2")


def resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return 1


def chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    """Generator for one chunk; the (seed, chunk) key is the whole identity."""
    ss = np.random.SeedSequence((int(seed), int(chunk_index)))
    return np.random.Generator(np.random.Philox(ss))


def _chunk_layout(n_paths: int, chunk_size: int):
    out = []
    start = 0
    i = 0
    while start < n_paths:
        n = min(chunk_size, n_paths - start)
        out.append((i, start, n))
        start += n
        i += 1
    return out


def mc_estimate(sampler, n_paths: int, seed: int, workers: int | None = None,
                chunk_size: int = DEFAULT_CHUNK) -> Estimate:
    """Mean and standard error of n_paths samples from `sampler`.

    sampler(rng, n) must return n scalar samples as a 1-D array and must
    consume randomness only through the passed generator. The result is
    bit-identical for fixed (seed, n_paths, chunk_size) at any worker count.

    Raises ValueError (with the offending path index) on non-finite samples.
    """
    if n_paths < 2:
        raise ValueError("need at least 2 paths")
    layout = _chunk_layout(n_paths, chunk_size)
    nworkers = resolve_workers(workers)

    def run(job):
        i, start, n = job
        return np.asarray(sampler(chunk_rng(seed, i), n), dtype=float)

    if nworkers == 1 or len(layout) == 1:
        parts = [run(job) for job in layout]
    else:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            parts = list(pool.map(run, layout))

    samples = np.concatenate(parts)
    if samples.shape != (n_paths,):
        raise ValueError(
            f"sampler returned {samples.shape[0]} samples, expected {n_paths}"
        )
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise ValueError(f"non-finite Monte Carlo sample at path index {int(bad[0])}")
    if np.ptp(samples) == 0.0:
        # a constant sampler has zero variance; the summation roundoff that
        # np.std would report as ~1e-16 is spurious
        return Estimate(mean=float(samples[0]), stderr=0.0, n_paths=n_paths,
                        seed=seed)
    mean = float(np.mean(samples))
    sd = float(np.std(samples, ddof=1))
    return Estimate(mean=mean, stderr=sd / math.sqrt(n_paths), n_paths=n_paths, seed=seed)


def draw_normals(rng: np.random.Generator, n: int, shape: tuple, antithetic: bool = False) -> np.ndarray:
    """(n, *shape) standard normals; antithetic stacks eta over -eta."""
    if not antithetic:
        return rng.standard_normal((n, *shape))
    if n % 2:
        raise ValueError("antithetic drawing needs an even path count")
    eta = rng.standard_normal((n // 2, *shape))
    return np.concatenate([eta, -eta], axis=0)


# --- Ornstein-Uhlenbeck ----------------------------------------------------

def simulate_ou(kappa: float, m: float, nu: float, y0: float, grid: GridSpec, seed: int) -> Path:
    """Exact-transition OU path sampling.

    One step: y' = m + (y - m)*exp(-kappa*dt) + nu*sqrt(1 - exp(-2*kappa*dt))*xi
    with xi standard normal. kappa is the mean-reversion rate, m the long-run
    level and nu the stationary standard deviation. The transition is exact,
    so the marginal law at every node is correct for any dt.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    decay = math.exp(-kappa * grid.dt)
    scale = nu * math.sqrt(max(0.0, 1.0 - decay * decay))
    shocks = scale * rng.standard_normal(grid.steps)
    # AR(1) recursion dev_k = decay*dev_{k-1} + shock_k via a linear filter.
    dev, _ = lfilter([1.0], [1.0, -decay], shocks, zi=np.array([decay * (y0 - m)]))
    values = np.concatenate([[y0], m + dev])
    return Path(grid.t0, grid.dt, values)


def ou_exact_terminal(kappa: float, m: float, nu: float, y0: float, horizon: float,
                      rng: np.random.Generator, n: int) -> np.ndarray:
    """n exact samples of the OU value a fixed horizon ahead (one-step rule)."""
    decay = math.exp(-kappa * horizon)
    scale = nu * math.sqrt(max(0.0, 1.0 - decay * decay))
    return m + (y0 - m) * decay + scale * rng.standard_normal(n)


# --- full model -------------------------------------------------------------

def _correlation_root(spec: ModelSpec) -> np.ndarray:
    corr = spec.correlation_matrix()
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        # Positive semidefinite but singular: use the symmetric square root.
        w, v = np.linalg.eigh(corr)
        return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def check_stiffness(spec: ModelSpec, grid: GridSpec) -> None:
    if grid.dt > spec.eps / 10.0 + 1e-15:
        raise ValueError(
            f"grid step dt={grid.dt:.3e} exceeds eps/10={spec.eps / 10:.3e}; "
            "use a finer grid for the fast factor"
        )


class _StepCoeffs:
    """Scalar per-step coefficients of the factor and asset updates.

    Both factors are Ornstein-Uhlenbeck processes under the pricing measure
    (the risk-premium drift only shifts the long-run mean), so their one-step
    transitions are sampled exactly:

        y' = my + (y - my)*decay_y + scale_y*xi1

    with decay_y = exp(-dt/eps) and scale_y the conditional standard
    deviation. An Euler factor step would inflate the fast factor's
    stationary variance by about dt/(2*eps), which is visible at the
    accuracy-sweep scales; the exact transition has no such bias. The only
    step-size error left in the joint scheme is the freezing of the
    volatility (and of the driver correlation) across each step.
    """

    def __init__(self, spec: ModelSpec, dt: float):
        bfast = spec.nu_y * math.sqrt(2.0)
        gslow = spec.nu_z * math.sqrt(2.0)
        self.decay_y = math.exp(-dt / spec.eps)
        self.my = spec.m_y - math.sqrt(spec.eps) * bfast * spec.gamma1
        self.scale_y = spec.nu_y * math.sqrt(max(0.0, 1.0 - self.decay_y**2))
        self.decay_z = math.exp(-spec.delta * dt)
        self.mz = spec.m_z - gslow * spec.gamma2 / math.sqrt(spec.delta)
        self.scale_z = spec.nu_z * math.sqrt(max(0.0, 1.0 - self.decay_z**2))
        self.rdt = spec.r * dt
        self.sqdt = math.sqrt(dt)
        root = _correlation_root(spec)
        self.l10, self.l11 = root[1, 0], root[1, 1]
        self.l20, self.l21, self.l22 = root[2, 0], root[2, 1], root[2, 2]


def _step_normals(rng: np.random.Generator, n: int, antithetic: bool) -> np.ndarray:
    if not antithetic:
        return rng.standard_normal((3, n))
    if n % 2:
        raise ValueError("antithetic drawing needs an even path count")
    eta = rng.standard_normal((3, n // 2))
    return np.concatenate([eta, -eta], axis=1)


class ChunkWorkspace:
    """Reusable per-thread work arrays for the chunked path samplers.

    Fresh demand-zero pages cost hundreds of microseconds each under the
    sandboxed kernels this code targets, and one control-variate chunk
    touches around two hundred megabytes of them, so allocating new arrays
    per chunk dominates the whole Monte Carlo runtime. One workspace per
    (thread, chunk width) amortizes that cost across the chunk loop. Every
    buffer is fully overwritten by the pass that uses it, so reuse cannot
    leak state between chunks, and the arithmetic is untouched: results are
    bit-identical to the allocate-per-chunk path.
    """

    def __init__(self, steps: int, cols: int, with_control: bool):
        self.s = _touched_empty((steps + 1, cols))
        self.st = _touched_empty((cols, steps + 1))
        if with_control:
            self.xi = _touched_empty((steps, cols))
            self.work = _touched_empty((steps, cols))
            self.bs = _touched_empty((steps + 1, cols))
        else:
            self.xi = None
            self.work = None
            self.bs = None


def _take_buffer(buf, shape):
    if buf is None:
        return _touched_empty(shape)
    if buf.shape != shape:
        raise ValueError(f"workspace buffer has shape {buf.shape}, need {shape}")
    return buf


def full_paths_chunk(spec: ModelSpec, s0: float, y0: float, z0: float, grid: GridSpec,
                     rng: np.random.Generator, n: int, antithetic: bool = False):
    """Simulate n joint (s, y, z) paths; time-major arrays (steps + 1, n).

    Asset step is exact-lognormal given the volatility frozen at the left
    node; y and z use exact Ornstein-Uhlenbeck transitions. The three
    drivers are correlated through the Cholesky root of the correlation
    matrix.
    """
    steps = grid.steps
    c = _StepCoeffs(spec, grid.dt)
    dt = grid.dt

    s = _touched_empty((steps + 1, n))
    y = _touched_empty((steps + 1, n))
    z = _touched_empty((steps + 1, n))
    s[0] = s0
    y[0] = y0
    z[0] = z0
    for k in range(steps):
        e = _step_normals(rng, n, antithetic)
        x1 = c.l10 * e[0] + c.l11 * e[1]
        x2 = c.l20 * e[0] + c.l21 * e[1] + c.l22 * e[2]
        f = spec.vol(y[k], z[k])
        s[k + 1] = s[k] * np.exp(c.rdt - 0.5 * dt * f * f + f * c.sqdt * e[0])
        y[k + 1] = c.my + (y[k] - c.my) * c.decay_y + c.scale_y * x1
        z[k + 1] = c.mz + (z[k] - c.mz) * c.decay_z + c.scale_z * x2
    return s, y, z


def asset_paths_chunk(spec: ModelSpec, s0: float, y0: float, z0: float, grid: GridSpec,
                      rng: np.random.Generator, n: int, antithetic: bool = False,
                      return_asset_normals: bool = False,
                      out_s: np.ndarray | None = None,
                      out_xi: np.ndarray | None = None):
    """Like full_paths_chunk but stores only the asset paths (steps + 1, n).

    The factor states are evolved as running vectors, which keeps the memory
    footprint linear in n even on long grids. Optionally also returns the
    correlated asset-driver normals (steps, n), which lets a caller rebuild
    a control-variate path from the identical driver. `out_s` and `out_xi`
    take workspace buffers to write into instead of allocating; both are
    fully overwritten.
    """
    steps = grid.steps
    c = _StepCoeffs(spec, grid.dt)
    dt = grid.dt

    s = _take_buffer(out_s, (steps + 1, n))
    s[0] = s0
    y = np.full(n, float(y0))
    z = np.full(n, float(z0))
    xi0 = _take_buffer(out_xi, (steps, n)) if return_asset_normals else None
    for k in range(steps):
        e = _step_normals(rng, n, antithetic)
        x1 = c.l10 * e[0] + c.l11 * e[1]
        x2 = c.l20 * e[0] + c.l21 * e[1] + c.l22 * e[2]
        f = spec.vol(y, z)
        s[k + 1] = s[k] * np.exp(c.rdt - 0.5 * dt * f * f + f * c.sqdt * e[0])
        y = c.my + (y - c.my) * c.decay_y + c.scale_y * x1
        z = c.mz + (z - c.mz) * c.decay_z + c.scale_z * x2
        if return_asset_normals:
            xi0[k] = e[0]
    if return_asset_normals:
        return s, xi0
    return s


def simulate_full(spec: ModelSpec, s0: float, y0: float, z0: float, grid: GridSpec,
                  seed: int) -> tuple[Path, Path, Path]:
    """One joint path of the full model as three Path objects."""
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    check_stiffness(spec, grid)
    rng = chunk_rng(seed, 0)
    s, y, z = full_paths_chunk(spec, s0, y0, z0, grid, rng, 1)
    return (
        Path(grid.t0, grid.dt, s[:, 0]),
        Path(grid.t0, grid.dt, y[:, 0]),
        Path(grid.t0, grid.dt, z[:, 0]),
    )


# --- Black-Scholes continuation ---------------------------------------------

def bs_paths_chunk(sigma: float, r: float, x0: float, grid: GridSpec,
                   rng: np.random.Generator, n: int, antithetic: bool = False,
                   normals: np.ndarray | None = None,
                   out: np.ndarray | None = None,
                   work: np.ndarray | None = None) -> np.ndarray:
    """n exact-lognormal GBM paths from x0; time-major shape (steps + 1, n).

    `normals` (steps, n) reuses externally drawn shocks instead of consuming
    the generator; this is how control-variate paths share the asset driver.
    `out` (steps + 1, n) and `work` (steps, n) take workspace buffers; both
    are fully overwritten and `normals` is never modified.
    """
    dt = grid.dt
    if normals is None:
        if not antithetic:
            normals = rng.standard_normal((grid.steps, n))
        else:
            if n % 2:
                raise ValueError("antithetic drawing needs an even path count")
            eta = rng.standard_normal((grid.steps, n // 2))
            normals = np.concatenate([eta, -eta], axis=1)
    # In-place pipeline: same per-element operation order as the plain
    # expression drift + scale*normals -> cumsum -> exp -> x0*, so results
    # are bit-identical, but four full-matrix temporaries are avoided
    # (this sits on the control-variate hot path).
    if work is None:
        increments = normals * (sigma * math.sqrt(dt))
    else:
        increments = _take_buffer(work, (grid.steps, n))
        np.multiply(normals, sigma * math.sqrt(dt), out=increments)
    increments += (r - 0.5 * sigma * sigma) * dt
    np.cumsum(increments, axis=0, out=increments)
    np.exp(increments, out=increments)
    if out is None:
        # plain np.empty: every element is written by one vectorized pass
        # below, so the bulk page touch of _touched_empty would double-touch
        out = np.empty((grid.steps + 1, n))
    else:
        out = _take_buffer(out, (grid.steps + 1, n))
    out[0] = x0
    np.multiply(increments, x0, out=out[1:])
    return out


def simulate_bs(sigma: float, r: float, X: Path, grid: GridSpec, seed: int) -> Path:
    """Continue the history X by a Black-Scholes path on `grid`, concatenated.

    The continuation starts at the current value of X; the returned path is
    the continuous paste of history and continuation, which is how
    conditioned expectations of path functionals are realized.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = chunk_rng(seed, 0)
    cont = bs_paths_chunk(sigma, r, X.values[-1], grid, rng, 1)[:, 0]
    return pathspace.concat(X, Path(grid.t0, grid.dt, cont))
