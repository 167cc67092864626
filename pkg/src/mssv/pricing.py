"""First-order pricing machinery and the full-model Monte Carlo benchmark.

The approximation prices a payoff as its constant-volatility value plus two
small corrections, one per volatility time scale. Everything payoff-specific
lives in a ZeroOrderOracle: the constant-vol price, the scale-free level
derivatives D_k = x^k (d/dx)^k (functional derivatives for the path-dependent
payoffs: a level bump also moves the running functional), and the vol
derivatives (vega, x d(vega)/dx). On top of the oracles the module provides

  correction_closed         maturity-scaled closed corrections; only valid
                            for payoffs whose value commutes with flat time
                            extension (oracle.weakly_pd)
  correction_fk_eps/_delta  Monte Carlo corrections: run the constant-vol
                            flow, integrate an operator of the zero-order
                            price along each path
  correction_fk_reference   the exact expectation of those estimators on the
                            same time grid (Gaussian closed forms), which is
                            the deterministic route for payoffs without
                            closed corrections
  first_order_price         zero order plus corrections by either route
  full_model_price          benchmark under the full two-factor model, with
                            an optional same-driver control variate
  accuracy_sweep            |full - first order| across (eps, delta) scales
                            and the log-log slope

The slow-scale estimator carries an overall factor 2; it is pinned by
requiring the estimator to match the vanilla closed correction in
expectation, and the equivalence tests keep it honest.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from mssv.analytic import (
    OracleState,
    VanillaSpec,
    _geo_core,
    _npdf,
    _qv_afactors,
    _qv_core,
    _vanilla_core,
    bs_greeks,
    bs_price,
    bs_vega_pair,
    geo_asian_greeks,
    geo_asian_price,
    geo_asian_vega_pair,
    qv_linear_derivs,
    qv_linear_price,
    qv_linear_vega_pair,
)
from mssv.mc import (
    ChunkWorkspace,
    Estimate,
    GridSpec,
    McConfig,
    asset_paths_chunk,
    bs_paths_chunk,
    check_stiffness,
    mc_estimate,
)
from mssv.model import GroupParams, ModelSpec, QuadratureConfig, group_params
from mssv.pathspace import Functional, Path, quadratic_variation

__all__ = [
    "ZeroOrderOracle",
    "VanillaOracle",
    "GeoAsianOracle",
    "QvLinearOracle",
    "CorrectionReport",
    "ControlVariate",
    "SweepPoint",
    "SweepResult",
    "zero_order_price",
    "correction_closed",
    "correction_fk_eps",
    "correction_fk_delta",
    "correction_fk_reference",
    "first_order_price",
    "full_model_price",
    "accuracy_sweep",
]

# The level derivatives of some payoffs steepen without bound as the
# remaining time vanishes, so the correction time integrals stop this far
# (in years) before maturity. The dropped sliver is second order in the
# width; the deterministic reference uses the same cut, so the comparison
# between the two is exact.
FK_TRUNCATION = 1e-4


def _check_span(state_t: float, maturity: float, grid: GridSpec) -> None:
    tol = 1e-9 * max(1.0, abs(maturity))
    if abs(grid.t0 - state_t) > tol or abs(grid.T - maturity) > tol:
        raise ValueError(
            f"integration grid [{grid.t0}, {grid.T}] must span the state "
            f"time {state_t} to maturity {maturity}"
        )


def fk_time_nodes(state_t: float, maturity: float, grid: GridSpec) -> np.ndarray:
    """Left-endpoint evaluation times of the correction integrals."""
    _check_span(state_t, maturity, grid)
    u = grid.times()[:-1]
    return u[u <= maturity - FK_TRUNCATION + 1e-12]


# --- oracles -----------------------------------------------------------------


class ZeroOrderOracle:
    """Payoff-specific provider of the zero-order price and its derivatives.

    Scalar entry points take an OracleState; the *_arrays methods broadcast
    over numpy arrays at a common evaluation time and feed the correction
    estimators. weakly_pd marks payoffs whose value functional has commuting
    flat-extension and level-bump derivatives; those admit the
    maturity-scaled closed corrections.
    """

    weakly_pd = False
    maturity: float
    r: float

    # scalar interface
    def price(self, state: OracleState, sigma: float) -> float:
        raise NotImplementedError

    def d123(self, state: OracleState, sigma: float) -> tuple:
        """(D1, D2, D3) with D_k = x^k (d/dx)^k of the value."""
        raise NotImplementedError

    def vega_pair(self, state: OracleState, sigma: float) -> tuple:
        """(vega, x d(vega)/dx)."""
        raise NotImplementedError

    def terminal_payoff(self, state: OracleState) -> float:
        raise NotImplementedError

    def payoff_functional(self) -> Functional:
        raise NotImplementedError

    def state_from_path(self, x: Path) -> OracleState:
        raise NotImplementedError

    # vectorized interface for the correction estimators
    def aux_start(self, state: OracleState):
        """Running-functional value carried along simulated paths, if any."""
        return None

    def aux_along(self, s: np.ndarray, dt: float, aux0):
        """Running functional at every node of a path matrix, or None."""
        return None

    def d2_d3_arrays(self, x, aux, t: float, sigma: float) -> tuple:
        raise NotImplementedError

    def vega_arrays(self, x, aux, t: float, sigma: float) -> tuple:
        raise NotImplementedError

    # correction hooks
    def closed_correction(self, gp: GroupParams, state: OracleState,
                          reduced: bool) -> tuple:
        raise NotImplementedError

    def fk_reference(self, gp: GroupParams, state: OracleState, grid: GridSpec,
                     reduced: bool) -> tuple:
        raise NotImplementedError

    # control-variate support
    def discrete_control_mean(self, state: OracleState, grid: GridSpec,
                              sigma: float) -> float:
        raise NotImplementedError

    def payoff_on_matrix(self, s: np.ndarray, dt: float, state: OracleState,
                         work: np.ndarray | None = None) -> np.ndarray:
        """Payoff per column of the time-major path matrix s.

        `work` optionally takes a (steps, columns) workspace buffer that the
        implementation may overwrite instead of allocating a temporary.
        """
        raise NotImplementedError


def _reduced_vol(gp: GroupParams, reduced: bool) -> tuple:
    """(sigma, effective v2) for the chosen convention."""
    if reduced:
        return gp.sigma_star, 0.0
    return gp.sigma_bar, gp.v2


class VanillaOracle(ZeroOrderOracle):
    """Terminal call/put payoff."""

    weakly_pd = True

    def __init__(self, spec: VanillaSpec, r: float):
        self.spec = spec
        self.r = float(r)

    @property
    def maturity(self) -> float:
        return self.spec.maturity

    def price(self, state, sigma):
        return bs_price(state, self.spec, self.r, sigma)

    def d123(self, state, sigma):
        d1, d2, d3, _ = bs_greeks(state, self.spec, self.r, sigma)
        return d1, d2, d3

    def vega_pair(self, state, sigma):
        return bs_vega_pair(state, self.spec, self.r, sigma)

    def terminal_payoff(self, state):
        if self.spec.is_put:
            return max(self.spec.strike - state.x, 0.0)
        return max(state.x - self.spec.strike, 0.0)

    def payoff_functional(self):
        k = self.spec.strike
        if self.spec.is_put:
            return Functional(lambda p: max(k - p.last, 0.0), name="vanilla_put")
        return Functional(lambda p: max(p.last - k, 0.0), name="vanilla_call")

    def state_from_path(self, x: Path) -> OracleState:
        return OracleState(t=x.t, x=x.last)

    def d2_d3_arrays(self, x, aux, t, sigma):
        core = _vanilla_core(x, self.maturity - t, self.spec.strike, self.r,
                             sigma, self.spec.is_put)
        return core["d2v"], core["d3v"]

    def vega_arrays(self, x, aux, t, sigma):
        core = _vanilla_core(x, self.maturity - t, self.spec.strike, self.r,
                             sigma, self.spec.is_put)
        return core["vega"], core["d1vega"]

    def closed_correction(self, gp, state, reduced):
        sigma, v2eff = _reduced_vol(gp, reduced)
        tau = self.maturity - state.t
        if tau == 0.0:
            return 0.0, 0.0
        _, d2, d3 = self.d123(state, sigma)
        vega, d1vega = self.vega_pair(state, sigma)
        p10 = tau * (gp.v3 * (2.0 * d2 + d3) + v2eff * d2)
        p01 = tau * (gp.v0 * vega + gp.v1 * d1vega)
        return p10, p01

    def fk_reference(self, gp, state, grid, reduced):
        sigma, v2eff = _reduced_vol(gp, reduced)
        u = fk_time_nodes(state.t, self.maturity, grid)
        if u.size == 0:
            return 0.0, 0.0
        _, d2, d3 = self.d123(state, sigma)
        # the discounted greeks are martingales along the constant-vol flow,
        # so the expected integrands only depend on u through the vega's
        # remaining-time factor
        eps_node = gp.v3 * (2.0 * d2 + d3) + v2eff * d2
        rem = self.maturity - u
        delta_node = 2.0 * sigma * rem * (gp.v0 * d2 + gp.v1 * (2.0 * d2 + d3))
        return float(grid.dt * eps_node * u.size), float(grid.dt * np.sum(delta_node))

    def discrete_control_mean(self, state, grid, sigma):
        _check_span(state.t, self.maturity, grid)
        return bs_price(state, self.spec, self.r, sigma)

    def payoff_on_matrix(self, s, dt, state, work=None):
        if self.spec.is_put:
            return np.maximum(self.spec.strike - s[-1], 0.0)
        return np.maximum(s[-1] - self.spec.strike, 0.0)


class GeoAsianOracle(ZeroOrderOracle):
    """Call/put on the continuously monitored geometric average.

    The running average makes the value genuinely path dependent (flat
    extension moves the average), so closed corrections are unavailable and
    the deterministic route is fk_reference: the level and the running log
    average are jointly Gaussian along the constant-vol flow, and every
    greek of the value is a lognormal-forward expression in the single
    Gaussian variable mu (the conditional mean log of the terminal average),
    so the expected integrands collapse to the same closed forms with a
    fattened variance.
    """

    weakly_pd = False

    def __init__(self, spec: VanillaSpec, r: float):
        self.spec = spec
        self.r = float(r)

    @property
    def maturity(self) -> float:
        return self.spec.maturity

    def price(self, state, sigma):
        return geo_asian_price(state, self.spec, self.r, sigma)

    def d123(self, state, sigma):
        d1, d2, d3, _ = geo_asian_greeks(state, self.spec, self.r, sigma)
        return d1, d2, d3

    def vega_pair(self, state, sigma):
        return geo_asian_vega_pair(state, self.spec, self.r, sigma)

    def terminal_payoff(self, state):
        avg = math.exp(state.log_integral / self.maturity)
        if self.spec.is_put:
            return max(self.spec.strike - avg, 0.0)
        return max(avg - self.spec.strike, 0.0)

    def payoff_functional(self):
        k = self.spec.strike
        T = self.maturity
        put = self.spec.is_put

        def _eval(p: Path) -> float:
            ilog = float(np.sum(np.log(p.values[:-1]))) * p.dt
            g = math.exp(ilog / T)
            return max(k - g, 0.0) if put else max(g - k, 0.0)

        return Functional(_eval, name="geo_asian")

    def state_from_path(self, x: Path) -> OracleState:
        ilog = float(np.sum(np.log(x.values[:-1]))) * x.dt
        return OracleState(t=x.t, x=x.last, log_integral=ilog)

    def aux_start(self, state):
        return state.log_integral

    def aux_along(self, s, dt, aux0):
        out = np.empty_like(s)
        out[0] = aux0
        out[1:] = aux0 + dt * np.cumsum(np.log(s[:-1]), axis=0)
        return out

    def d2_d3_arrays(self, x, aux, t, sigma):
        core = _geo_core(x, aux, t, self.spec.strike, self.maturity, self.r,
                         sigma, self.spec.is_put)
        return core["d2v"], core["d3v"]

    def vega_arrays(self, x, aux, t, sigma):
        core = _geo_core(x, aux, t, self.spec.strike, self.maturity, self.r,
                         sigma, self.spec.is_put)
        return core["vega"], core["d1vega"]

    def expected_greeks(self, state: OracleState, sigma: float, grid: GridSpec):
        """Exact per-node expectations of (D2, D3, vega, D1-vega).

        Returns (u, d2, d3, vega, d1vega): the integration times and, for
        each, the expectation of the greek over the constant-vol flow
        started at `state`. The law used is that of the discrete scheme
        (left-endpoint running sums), so the values are the exact means of
        the Monte Carlo estimator's per-node integrand.
        """
        r, T = self.r, self.maturity
        strike, put = self.spec.strike, self.spec.is_put
        u = fk_time_nodes(state.t, T, grid)
        dt = grid.dt
        j = np.rint((u - state.t) / dt)
        m = r - 0.5 * sigma * sigma
        lx = math.log(state.x)

        e_lns = lx + m * dt * j
        v_lns = sigma**2 * dt * j
        e_i = state.log_integral + dt * (j * lx + m * dt * j * (j - 1.0) / 2.0)
        v_i = sigma**2 * dt**3 * (j - 1.0) * j * (2.0 * j - 1.0) / 6.0
        c_li = sigma**2 * dt**2 * j * (j - 1.0) / 2.0

        rem = T - u
        a = rem / T
        big_m = (e_i + rem * e_lns) / T + m * rem**2 / (2.0 * T)
        big_v = (v_i + rem**2 * v_lns + 2.0 * rem * c_li) / (T * T)
        s2 = sigma**2 * rem**3 / (3.0 * T * T)
        vt = big_v + s2
        sq = np.sqrt(vt)
        fwd = np.exp(big_m + 0.5 * vt)
        d1t = (big_m - math.log(strike)) / sq + sq
        n1 = ndtr(d1t)
        phi1 = _npdf(d1t)
        disc = np.exp(-r * rem)

        p_l = disc * a * fwd * n1
        p_ll = disc * a**2 * fwd * (n1 + phi1 / sq)
        p_lll = disc * a**3 * fwd * (n1 + 2.0 * phi1 / sq - phi1 * d1t / vt)
        mu_s = -sigma * rem**2 / (2.0 * T)
        ss = s2 / sigma  # s * d(s)/d(sigma)
        c1 = mu_s + ss
        vega = disc * fwd * (c1 * n1 + ss * phi1 / sq)
        d1vega = disc * a * fwd * (
            c1 * n1 + (ss + c1) * phi1 / sq - ss * phi1 * d1t / vt
        )
        if put:
            p_l = p_l - disc * a * fwd
            p_ll = p_ll - disc * a**2 * fwd
            p_lll = p_lll - disc * a**3 * fwd
            vega = vega - disc * fwd * c1
            d1vega = d1vega - disc * a * fwd * c1

        d2 = p_ll - p_l
        d3 = p_lll - 3.0 * p_ll + 2.0 * p_l
        return u, d2, d3, vega, d1vega

    def fk_reference(self, gp, state, grid, reduced):
        sigma, v2eff = _reduced_vol(gp, reduced)
        u, d2, d3, vega, d1vega = self.expected_greeks(state, sigma, grid)
        if u.size == 0:
            return 0.0, 0.0
        w = np.exp(-self.r * (u - state.t)) * grid.dt
        p10 = float(np.sum(w * (gp.v3 * (2.0 * d2 + d3) + v2eff * d2)))
        p01 = float(np.sum(w * 2.0 * (gp.v0 * vega + gp.v1 * d1vega)))
        return p10, p01

    def discrete_control_mean(self, state, grid, sigma):
        _check_span(state.t, self.maturity, grid)
        n = grid.steps
        dt = grid.dt
        T = self.maturity
        tau = grid.T - grid.t0
        m = self.r - 0.5 * sigma * sigma
        lx = math.log(state.x)
        mu = (state.log_integral + dt * (n * lx + m * dt * n * (n - 1.0) / 2.0)) / T
        var = sigma**2 * dt**3 * (n - 1.0) * n * (2.0 * n - 1.0) / 6.0 / (T * T)
        disc = math.exp(-self.r * tau)
        fwd = math.exp(mu + 0.5 * var)
        k = self.spec.strike
        if var == 0.0:
            intr = max(k - fwd, 0.0) if self.spec.is_put else max(fwd - k, 0.0)
            return disc * intr
        sd = math.sqrt(var)
        d2 = (mu - math.log(k)) / sd
        d1 = d2 + sd
        call = disc * (fwd * float(ndtr(d1)) - k * float(ndtr(d2)))
        if self.spec.is_put:
            return call - disc * (fwd - k)
        return call

    def payoff_on_matrix(self, s, dt, state, work=None):
        logs = np.log(s[:-1]) if work is None else np.log(s[:-1], out=work)
        ilog = state.log_integral + dt * np.sum(logs, axis=0)
        g = np.exp(ilog / self.maturity)
        if self.spec.is_put:
            return np.maximum(self.spec.strike - g, 0.0)
        return np.maximum(g - self.spec.strike, 0.0)


class QvLinearOracle(ZeroOrderOracle):
    """Payoff equal to the accumulated quadratic variation of the level path.

    Weakly path dependent, but the expected correction integrands grow with
    the level's second moment, so the maturity-scaled form is replaced by
    the exact time integrals (they are just as closed-form).
    """

    weakly_pd = True

    def __init__(self, maturity: float, r: float):
        if not maturity > 0:
            raise ValueError("maturity must be positive")
        self.maturity = float(maturity)
        self.r = float(r)

    def price(self, state, sigma):
        return qv_linear_price(state, self.maturity, self.r, sigma)

    def d123(self, state, sigma):
        dx, dxx, dxxx = qv_linear_derivs(state, self.maturity, self.r, sigma)
        x = state.x
        return x * dx, x * x * dxx, x**3 * dxxx

    def vega_pair(self, state, sigma):
        return qv_linear_vega_pair(state, self.maturity, self.r, sigma)

    def terminal_payoff(self, state):
        return state.qv

    def payoff_functional(self):
        return quadratic_variation()

    def state_from_path(self, x: Path) -> OracleState:
        d = np.diff(x.values)
        return OracleState(t=x.t, x=x.last, qv=float(np.dot(d, d)))

    def d2_d3_arrays(self, x, aux, t, sigma):
        x = np.asarray(x, dtype=float)
        core = _qv_core(x, 0.0, self.maturity - t, self.r, sigma)
        return x * x * core["dxx"], x**3 * core["dxxx"]

    def vega_arrays(self, x, aux, t, sigma):
        core = _qv_core(np.asarray(x, dtype=float), 0.0, self.maturity - t,
                        self.r, sigma)
        return core["vega"], core["d1vega"]

    def closed_correction(self, gp, state, reduced):
        sigma, v2eff = _reduced_vol(gp, reduced)
        tau = self.maturity - state.t
        x2 = state.x * state.x
        k = 2.0 * self.r + sigma * sigma
        a, ak = _qv_afactors(k, tau)
        a, ak = float(a), float(ak)
        disc = math.exp(-self.r * tau)
        p10 = (2.0 * gp.v3 + v2eff) * 2.0 * x2 * disc * (a + sigma**2 * ak)
        if abs(k * tau) < 1e-8:
            g = tau**3 / 6.0 + k * tau**4 / 8.0
        else:
            g = (tau * tau * math.exp(k * tau) / 2.0 - ak) / k
        p01 = 4.0 * sigma * (gp.v0 + 2.0 * gp.v1) * x2 * disc * (ak + sigma**2 * g)
        return p10, p01

    def fk_reference(self, gp, state, grid, reduced):
        sigma, v2eff = _reduced_vol(gp, reduced)
        u = fk_time_nodes(state.t, self.maturity, grid)
        if u.size == 0:
            return 0.0, 0.0
        k = 2.0 * self.r + sigma * sigma
        rem = self.maturity - u
        a, ak = _qv_afactors(k, rem)
        # e^{-r(u-t)} discount times the greek's own e^{-r rem} is flat
        base = state.x**2 * math.exp(-self.r * (self.maturity - state.t))
        grow = np.exp(k * (u - state.t))
        ed2 = base * grow * (2.0 * sigma**2 * a + 2.0)
        evega = 2.0 * sigma * base * grow * (a + sigma**2 * ak)
        p10 = float(grid.dt * (2.0 * gp.v3 + v2eff) * np.sum(ed2))
        p01 = float(grid.dt * 2.0 * (gp.v0 + 2.0 * gp.v1) * np.sum(evega))
        return p10, p01

    def discrete_control_mean(self, state, grid, sigma):
        _check_span(state.t, self.maturity, grid)
        k = 2.0 * self.r + sigma * sigma
        dt = grid.dt
        tau = grid.T - grid.t0
        step = math.expm1(k * dt)
        if step == 0.0:
            total = float(grid.steps)
        else:
            total = math.expm1(k * tau) / step
        per = math.exp(k * dt) - 2.0 * math.exp(self.r * dt) + 1.0
        return math.exp(-self.r * tau) * (state.qv + state.x**2 * per * total)

    def payoff_on_matrix(self, s, dt, state, work=None):
        d = np.diff(s, axis=0) if work is None else np.subtract(s[1:], s[:-1], out=work)
        np.multiply(d, d, out=d)
        return state.qv + np.sum(d, axis=0)


# --- reports and assembly ----------------------------------------------------


@dataclass(frozen=True)
class CorrectionReport:
    """Zero-order price, both corrections, and their sum.

    The correction legs are floats for the deterministic routes and
    Estimate objects for the Monte Carlo route; total always uses means.
    """

    p0: float
    p10_eps: object
    p01_delta: object
    total: float
    method: str

    def to_dict(self) -> dict:
        def leg(v):
            return v.to_dict() if isinstance(v, Estimate) else v

        return {
            "p0": self.p0,
            "p10_eps": leg(self.p10_eps),
            "p01_delta": leg(self.p01_delta),
            "total": self.total,
            "method": self.method,
        }


def _leg_mean(v) -> float:
    return v.mean if isinstance(v, Estimate) else float(v)


@dataclass(frozen=True)
class ControlVariate:
    """Control with unit coefficient: the same payoff on the constant-vol
    path rebuilt from the identical asset driver, centered by its exact
    discrete mean."""

    oracle: ZeroOrderOracle
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("control sigma must be positive")


def _as_state(oracle: ZeroOrderOracle, X) -> OracleState:
    if isinstance(X, OracleState):
        return X
    if isinstance(X, Path):
        return oracle.state_from_path(X)
    raise TypeError(f"X must be a Path or OracleState, got {type(X).__name__}")


def zero_order_price(oracle: ZeroOrderOracle, X, gp: GroupParams,
                     reduced: bool = True) -> float:
    """Constant-volatility value at the group-parameter vol level."""
    sigma, _ = _reduced_vol(gp, reduced)
    return oracle.price(_as_state(oracle, X), sigma)


def correction_closed(oracle: ZeroOrderOracle, gp: GroupParams, X,
                      reduced: bool = True) -> CorrectionReport:
    """Closed-form first-order report; needs a weakly path-dependent payoff."""
    if not oracle.weakly_pd:
        raise ValueError(
            f"{type(oracle).__name__} is not weakly path dependent, so the "
            "closed corrections do not apply; use correction_fk_eps / "
            "correction_fk_delta or the quadrature reference"
        )
    state = _as_state(oracle, X)
    p0 = zero_order_price(oracle, state, gp, reduced)
    p10, p01 = oracle.closed_correction(gp, state, reduced)
    return CorrectionReport(p0=p0, p10_eps=p10, p01_delta=p01,
                            total=p0 + p10 + p01, method="closed")


def _fk_estimate(oracle: ZeroOrderOracle, gp: GroupParams, X, grid: GridSpec,
                 mc: McConfig, reduced: bool, leg: str) -> Estimate:
    state = _as_state(oracle, X)
    tau = oracle.maturity - state.t
    if tau < 0:
        raise ValueError(f"state time {state.t} is past maturity {oracle.maturity}")
    sigma, v2eff = _reduced_vol(gp, reduced)
    if leg == "eps":
        inactive = gp.v3 == 0.0 and v2eff == 0.0
    else:
        inactive = gp.v0 == 0.0 and gp.v1 == 0.0
    if tau == 0 or inactive:
        return Estimate(mean=0.0, stderr=0.0, n_paths=mc.n_paths, seed=mc.seed)

    u = fk_time_nodes(state.t, oracle.maturity, grid)
    weights = np.exp(-oracle.r * (u - state.t)) * grid.dt
    aux0 = oracle.aux_start(state)
    r = oracle.r

    def sampler(rng, n):
        cols = 2 * n if mc.antithetic else n
        s = bs_paths_chunk(sigma, r, state.x, grid, rng, cols,
                           antithetic=mc.antithetic)
        aux = oracle.aux_along(s, grid.dt, aux0)
        times = grid.times()
        acc = np.zeros(cols)
        for pos in range(u.size):
            j = int(round((u[pos] - grid.t0) / grid.dt))
            arow = None if aux is None else aux[j]
            if leg == "eps":
                d2, d3 = oracle.d2_d3_arrays(s[j], arow, float(times[j]), sigma)
                g = gp.v3 * (2.0 * d2 + d3) + v2eff * d2
            else:
                vega, d1vega = oracle.vega_arrays(s[j], arow, float(times[j]), sigma)
                g = 2.0 * (gp.v0 * vega + gp.v1 * d1vega)
            if not np.all(np.isfinite(g)):
                raise ValueError(
                    f"oracle greeks non-finite at integration time u={times[j]:.6g}"
                )
            acc += weights[pos] * g
        if mc.antithetic:
            acc = 0.5 * (acc[:n] + acc[n:])
        return acc

    return mc_estimate(sampler, mc.n_paths, mc.seed, mc.workers, mc.chunk_size)


def correction_fk_eps(oracle: ZeroOrderOracle, gp: GroupParams, X,
                      grid: GridSpec, mc: McConfig,
                      reduced: bool = True) -> Estimate:
    """Fast-scale correction by Monte Carlo over the constant-vol flow."""
    return _fk_estimate(oracle, gp, X, grid, mc, reduced, "eps")


def correction_fk_delta(oracle: ZeroOrderOracle, gp: GroupParams, X,
                        grid: GridSpec, mc: McConfig,
                        reduced: bool = True) -> Estimate:
    """Slow-scale correction by Monte Carlo over the constant-vol flow."""
    return _fk_estimate(oracle, gp, X, grid, mc, reduced, "delta")


def correction_fk_reference(oracle: ZeroOrderOracle, gp: GroupParams, X,
                            grid: GridSpec, reduced: bool = True) -> tuple:
    """Exact means of the two Monte Carlo correction estimators.

    Deterministic: the constant-vol flow is Gaussian in the log level (and,
    for the average payoff, in the running log sum), so the per-node
    expected integrands have closed forms. Same grid, same truncation, same
    left-endpoint weights as the estimators.
    """
    state = _as_state(oracle, X)
    tau = oracle.maturity - state.t
    if tau < 0:
        raise ValueError(f"state time {state.t} is past maturity {oracle.maturity}")
    if tau == 0:
        return 0.0, 0.0
    return oracle.fk_reference(gp, state, grid, reduced)


def first_order_price(oracle: ZeroOrderOracle, gp: GroupParams, X,
                      grid: GridSpec | None = None, mc: McConfig | None = None,
                      method: str = "closed",
                      reduced: bool = True) -> CorrectionReport:
    """Zero-order price plus both corrections.

    method: 'closed' (weakly path-dependent payoffs), 'feynman_kac' (Monte
    Carlo, needs grid and mc), or 'quadrature' (deterministic expected-
    integrand sums on the grid).
    """
    if method not in ("closed", "feynman_kac", "quadrature"):
        raise ValueError(f"unknown pricing method {method!r}")
    state = _as_state(oracle, X)
    if state.t == oracle.maturity:
        p0 = oracle.terminal_payoff(state)
        return CorrectionReport(p0=p0, p10_eps=0.0, p01_delta=0.0, total=p0,
                                method=method)
    if method == "closed":
        return correction_closed(oracle, gp, state, reduced)
    if method == "feynman_kac":
        if grid is None or mc is None:
            raise ValueError("feynman_kac pricing needs grid and mc")
        p0 = zero_order_price(oracle, state, gp, reduced)
        e10 = correction_fk_eps(oracle, gp, state, grid, mc, reduced)
        e01 = correction_fk_delta(oracle, gp, state, grid, mc, reduced)
        total = p0 + e10.mean + e01.mean
        return CorrectionReport(p0=p0, p10_eps=e10, p01_delta=e01, total=total,
                                method="feynman_kac")
    if grid is None:
        raise ValueError("quadrature pricing needs grid")
    p0 = zero_order_price(oracle, state, gp, reduced)
    p10, p01 = correction_fk_reference(oracle, gp, state, grid, reduced)
    return CorrectionReport(p0=p0, p10_eps=p10, p01_delta=p01,
                            total=p0 + p10 + p01, method="quadrature")


# --- full model ---------------------------------------------------------------


def full_model_price(spec: ModelSpec, payoff: Functional, X: Path,
                     grid: GridSpec, mc: McConfig, y0: float | None = None,
                     z0: float | None = None,
                     control: ControlVariate | None = None) -> Estimate:
    """Discounted payoff mean over full-model paths continuing the history X.

    The payoff functional is evaluated on the continuous paste of the
    history and each simulated continuation. With a control variate, each
    sample is corrected by the same payoff on the constant-vol path driven
    by the identical asset shocks, centered by its exact discrete mean.
    """
    if not isinstance(X, Path):
        raise TypeError("X must be a Path history")
    check_stiffness(spec, grid)
    if abs(grid.t0 - X.t) > 1e-9 * max(1.0, abs(X.t)):
        raise ValueError(
            f"grid must start at the history's current time {X.t}, got {grid.t0}"
        )
    if len(X) > 1 and abs(X.dt - grid.dt) > 1e-9 * grid.dt:
        raise ValueError("history and simulation grid must share the step size")
    s0 = X.last
    if not s0 > 0:
        raise ValueError("history must end at a positive level")
    ystart = spec.m_y if y0 is None else float(y0)
    zstart = spec.m_z if z0 is None else float(z0)
    disc = math.exp(-spec.r * (grid.T - grid.t0))
    hist = X.values
    single = len(hist) == 1
    if control is not None:
        state_c = control.oracle.state_from_path(X)
        m_c = control.oracle.discrete_control_mean(state_c, grid, control.sigma)

    workspaces: dict = {}

    def sampler(rng, n):
        cols = 2 * n if mc.antithetic else n
        key = (threading.get_ident(), cols)
        ws = workspaces.get(key)
        if ws is None:
            ws = ChunkWorkspace(grid.steps, cols, control is not None)
            workspaces[key] = ws
        if control is None:
            s = asset_paths_chunk(spec, s0, ystart, zstart, grid, rng, cols,
                                  antithetic=mc.antithetic, out_s=ws.s)
            xi0 = None
        else:
            s, xi0 = asset_paths_chunk(spec, s0, ystart, zstart, grid, rng,
                                       cols, antithetic=mc.antithetic,
                                       return_asset_normals=True,
                                       out_s=ws.s, out_xi=ws.xi)
        np.copyto(ws.st, s.T)
        st = ws.st
        vals = np.empty(cols)
        for i in range(cols):
            v = st[i] if single else np.concatenate([hist[:-1], st[i]])
            vals[i] = payoff(Path(X.t0, grid.dt, v))
        samples = disc * vals
        if control is not None:
            sc = bs_paths_chunk(control.sigma, spec.r, s0, grid, rng, cols,
                                normals=xi0, out=ws.bs, work=ws.work)
            ctrl = disc * control.oracle.payoff_on_matrix(sc, grid.dt, state_c,
                                                          work=ws.work)
            samples = samples - ctrl + m_c
        if mc.antithetic:
            samples = 0.5 * (samples[:n] + samples[n:])
        return samples

    return mc_estimate(sampler, mc.n_paths, mc.seed, mc.workers, mc.chunk_size)


# --- accuracy sweep -----------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    """One (eps, delta) scale of the sweep."""

    eps: float
    delta: float
    full: Estimate
    approx: float
    error: float
    stderr: float
    used: bool

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "delta": self.delta,
            "full": self.full.to_dict(),
            "approx": self.approx,
            "error": self.error,
            "stderr": self.stderr,
            "used": self.used,
        }


@dataclass(frozen=True)
class SweepResult:
    points: tuple
    slope: float | None

    def to_dict(self) -> dict:
        return {
            "points": [p.to_dict() for p in self.points],
            "slope": self.slope,
        }


def accuracy_sweep(spec: ModelSpec, oracle: ZeroOrderOracle,
                   payoff: Functional, scales, mc: McConfig, *, X: Path,
                   grid: GridSpec, y0: float | None = None,
                   z0: float | None = None, reduced: bool = True,
                   use_control: bool = True,
                   quad: QuadratureConfig | None = None) -> SweepResult:
    """|full-model - first-order| across scales, with a log-log slope.

    One common grid and seed for all scales, so the full-model runs share
    their random numbers. Points whose error is within twice the Monte
    Carlo noise, or down at floating-point level, are flagged unused and
    left out of the slope regression.
    """
    scales = [(float(e), float(d)) for e, d in scales]
    if len(scales) < 3:
        raise ValueError("need at least 3 scale points")
    scales.sort(key=lambda p: -(p[0] + p[1]))
    sizes = [e + d for e, d in scales]
    ratios = [sizes[i] / sizes[i + 1] for i in range(len(sizes) - 1)]
    if min(ratios) <= 1.0 or max(ratios) / min(ratios) > 2.0:
        raise ValueError("scale points must be geometrically spaced in eps + delta")

    q = quad if quad is not None else QuadratureConfig()
    z_eff = spec.m_z if z0 is None else float(z0)
    state = oracle.state_from_path(X)
    points = []
    for e, d in scales:
        spec_i = spec.rescaled(eps=e, delta=d)
        gp = group_params(spec_i, z_eff, q)
        if oracle.weakly_pd:
            rep = first_order_price(oracle, gp, state, method="closed",
                                    reduced=reduced)
        else:
            rep = first_order_price(oracle, gp, state, grid=grid,
                                    method="quadrature", reduced=reduced)
        control = ControlVariate(oracle, gp.sigma_star) if use_control else None
        full = full_model_price(spec_i, payoff, X, grid, mc, y0=y0, z0=z_eff,
                                control=control)
        err = abs(full.mean - rep.total)
        floor = 1e-12 * max(1.0, abs(rep.total))
        used = err > 2.0 * full.stderr and err > floor
        points.append(SweepPoint(eps=e, delta=d, full=full, approx=rep.total,
                                 error=err, stderr=full.stderr, used=used))

    good = [p for p in points if p.used]
    slope = None
    if len(good) >= 2:
        lx = np.log([p.eps + p.delta for p in good])
        ly = np.log([p.error for p in good])
        slope = float(np.polyfit(lx, ly, 1)[0])
    return SweepResult(points=tuple(points), slope=slope)
