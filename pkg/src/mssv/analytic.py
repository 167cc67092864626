"""Closed-form constant-volatility prices, level Greeks, and implied vol.

Three payoff families have closed forms here and serve as leading-order
pricing oracles elsewhere in the package:

  vanilla    European call/put on the terminal level
  geo Asian  call/put on the continuously monitored geometric average
  qv linear  pays the accumulated quadratic variation of the level path

Level Greeks are reported in the scale-free form D_k = x^k d^k/dx^k. For the
path-dependent payoffs the reported second and third derivatives are the
functional ones: bumping today's level also moves the running functional, and
the chain-rule terms that produces are folded in (see qv_linear_derivs).

All cores broadcast over numpy arrays; the public wrappers take scalar
states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "VanillaSpec",
    "OracleState",
    "bs_price",
    "bs_greeks",
    "bs_vega_pair",
    "implied_vol",
    "geo_asian_price",
    "geo_asian_greeks",
    "geo_asian_vega_pair",
    "qv_linear_price",
    "qv_linear_derivs",
    "qv_linear_vega_pair",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _npdf(u):
    return np.exp(-0.5 * u * u) / _SQRT_2PI


@dataclass(frozen=True)
class VanillaSpec:
    """Strike/maturity/kind triple shared by the strike-based payoffs."""

    strike: float
    maturity: float
    kind: str = "call"

    def __post_init__(self):
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if not self.maturity > 0:
            raise ValueError("maturity must be positive")
        if self.kind not in ("call", "put"):
            raise ValueError(f"kind must be 'call' or 'put', got {self.kind!r}")

    @property
    def is_put(self) -> bool:
        return self.kind == "put"


@dataclass(frozen=True)
class OracleState:
    """Reduced Markov state (t, x) plus the running functionals.

    log_integral carries int_0^t ln(level) du for average-based payoffs; qv
    carries the accumulated quadratic variation of the level path. Payoffs
    that do not use a field ignore it.
    """

    t: float
    x: float
    log_integral: float = 0.0
    qv: float = 0.0

    def __post_init__(self):
        if not self.x > 0:
            raise ValueError("level x must be positive")
        if self.qv < 0:
            raise ValueError("accumulated quadratic variation cannot be negative")


def _tau(state_t: float, maturity: float) -> float:
    tau = maturity - state_t
    if tau < 0:
        raise ValueError(f"state time {state_t} is past maturity {maturity}")
    return tau


# --- vanilla ----------------------------------------------------------------------


def _vanilla_core(x, tau, strike, r, sigma, put: bool):
    """Vectorized price and level Greeks for the terminal-value payoff.

    Returns dict with price, d1v (= x dP/dx), d2v (= x^2 d2P/dx2),
    d3v (= x^3 d3P/dx3), vega, d1vega (= x d(vega)/dx).
    """
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    disc = np.exp(-r * tau)
    sqt = np.sqrt(tau)
    vol = sigma * sqt
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(x / strike) + (r + 0.5 * sigma * sigma) * tau) / vol
    d2 = d1 - vol
    n1 = _npdf(d1)
    call = x * ndtr(d1) - strike * disc * ndtr(d2)
    price = np.where(put, call - x + strike * disc, call)

    d1v = np.where(put, x * (ndtr(d1) - 1.0), x * ndtr(d1))
    with np.errstate(divide="ignore", invalid="ignore"):
        gidx = n1 / vol  # x^2 * gamma = x * n(d1) / (sigma sqrt(tau))
    d2v = x * gidx
    d3v = -d2v * (d1 / vol + 1.0)
    vega = x * n1 * sqt
    d1vega = vega * (1.0 - d1 / vol)
    return {
        "price": price,
        "d1v": d1v,
        "d2v": d2v,
        "d3v": d3v,
        "vega": vega,
        "d1vega": d1vega,
    }


def bs_price(state: OracleState, spec: VanillaSpec, r: float, sigma: float) -> float:
    """Constant-volatility value of the vanilla payoff at the given state."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    tau = _tau(state.t, spec.maturity)
    if tau == 0 or sigma == 0:
        disc = math.exp(-r * tau)
        fwd = state.x * math.exp(r * tau)
        intrinsic = max(fwd - spec.strike, 0.0)
        if spec.is_put:
            intrinsic = max(spec.strike - fwd, 0.0)
        return disc * intrinsic
    out = _vanilla_core(state.x, tau, spec.strike, r, sigma, spec.is_put)
    return float(out["price"])


def bs_greeks(state: OracleState, spec: VanillaSpec, r: float, sigma: float):
    """(D1, D2, D3, vega) of the vanilla payoff; needs sigma > 0 and t < T."""
    if not sigma > 0:
        raise ValueError("greeks need sigma > 0")
    tau = _tau(state.t, spec.maturity)
    if tau == 0:
        raise ValueError("greeks need t < maturity")
    out = _vanilla_core(state.x, tau, spec.strike, r, sigma, spec.is_put)
    return (float(out["d1v"]), float(out["d2v"]), float(out["d3v"]), float(out["vega"]))


def bs_vega_pair(state: OracleState, spec: VanillaSpec, r: float, sigma: float):
    """(vega, x d(vega)/dx); the second one drives slow-scale corrections."""
    if not sigma > 0:
        raise ValueError("needs sigma > 0")
    tau = _tau(state.t, spec.maturity)
    if tau == 0:
        raise ValueError("needs t < maturity")
    out = _vanilla_core(state.x, tau, spec.strike, r, sigma, spec.is_put)
    return (float(out["vega"]), float(out["d1vega"]))


def implied_vol(price: float, state: OracleState, spec: VanillaSpec, r: float) -> float:
    """Volatility whose constant-vol value reproduces `price`.

    Safeguarded Newton iteration bracketed by bisection on [1e-6, 5]. The
    price must lie inside the static no-arbitrage band for the payoff.
    """
    tau = _tau(state.t, spec.maturity)
    if tau == 0:
        raise ValueError("implied volatility needs t < maturity")
    x = state.x
    disc_k = spec.strike * math.exp(-r * tau)
    if spec.is_put:
        lower, upper = max(disc_k - x, 0.0), disc_k
    else:
        lower, upper = max(x - disc_k, 0.0), x
    if price < lower - 1e-12:
        raise ValueError(
            f"price {price} violates the zero-volatility lower bound {lower}"
        )
    if price > upper + 1e-12:
        raise ValueError(f"price {price} violates the upper bound {upper}")

    lo, hi = 1e-6, 5.0
    f_lo = bs_price(OracleState(state.t, x), spec, r, lo) - price
    if f_lo >= 0:
        return lo
    f_hi = bs_price(OracleState(state.t, x), spec, r, hi) - price
    if f_hi <= 0:
        raise ValueError("implied volatility exceeds the bracket ceiling 5.0")

    sigma = 0.5
    for _ in range(100):
        val = bs_price(state, spec, r, sigma) - price
        if val > 0:
            hi = sigma
        else:
            lo = sigma
        core = _vanilla_core(x, tau, spec.strike, r, sigma, spec.is_put)
        vega = float(core["vega"])
        if vega > 1e-14:
            step = val / vega
            nxt = sigma - step
        else:
            nxt = 0.5 * (lo + hi)
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - sigma) < 1e-10:
            return nxt
        sigma = nxt
    return sigma


# --- geometric-average Asian --------------------------------------------------------


def _geo_core(x, ilog, t, strike, maturity, r, sigma, put: bool):
    """Price and Greeks for the geometric-average payoff, vectorized in x/ilog.

    Conditional on time-t information the log of the terminal geometric
    average is Gaussian; everything reduces to a lognormal-forward pricing
    formula with maturity-shrunk vol. Level derivatives are taken in
    L = ln x, where x d/dx = d/dL turns D_k into simple stencils.
    """
    x = np.asarray(x, dtype=float)
    ilog = np.asarray(ilog, dtype=float)
    tau = maturity - t
    T = maturity
    afrac = tau / T
    m = r - 0.5 * sigma * sigma
    disc = np.exp(-r * tau)

    mu = (ilog + tau * np.log(x)) / T + m * tau * tau / (2.0 * T)
    s2 = sigma * sigma * tau**3 / (3.0 * T * T)
    s = math.sqrt(s2)
    fwd = np.exp(mu + 0.5 * s2)

    if s == 0.0:
        # deterministic average (sigma = 0 or tau = 0)
        intrinsic = np.maximum(fwd - strike, 0.0)
        if put:
            intrinsic = np.maximum(strike - fwd, 0.0)
        zero = np.zeros_like(fwd)
        return {"price": disc * intrinsic, "d1v": zero, "d2v": zero, "d3v": zero,
                "vega": zero, "d1vega": zero}

    d2 = (mu - math.log(strike)) / s
    d1 = d2 + s
    n1 = _npdf(d1)
    big_n1 = ndtr(d1)
    call = disc * (fwd * big_n1 - strike * ndtr(d2))

    # derivatives with respect to L = ln x; dmu/dL = afrac
    p_l = disc * afrac * fwd * big_n1
    p_ll = disc * afrac**2 * fwd * (big_n1 + n1 / s)
    p_lll = disc * afrac**3 * fwd * (big_n1 + n1 * (2.0 / s - d1 / s2))

    mu_s = -sigma * tau * tau / (2.0 * T)          # d(mu)/d(sigma)
    s_s = s / sigma                                # d(s)/d(sigma)
    c1 = mu_s + s * s_s
    vega = disc * fwd * (c1 * big_n1 + s_s * n1)
    d1vega = disc * afrac * fwd * (
        c1 * big_n1 + n1 * (s_s + c1 / s - s_s * d1 / s)
    )

    if put:
        # parity: put = call - disc * (fwd - strike)
        price = call - disc * (fwd - strike)
        p_l = p_l - disc * afrac * fwd
        p_ll = p_ll - disc * afrac**2 * fwd
        p_lll = p_lll - disc * afrac**3 * fwd
        vega = vega - disc * fwd * c1
        d1vega = d1vega - disc * afrac * fwd * c1
    else:
        price = call

    # D1 = dP/dL, D2 = d2P/dL2 - dP/dL, D3 = d3P/dL3 - 3 d2P/dL2 + 2 dP/dL
    d1v = p_l
    d2v = p_ll - p_l
    d3v = p_lll - 3.0 * p_ll + 2.0 * p_l
    return {"price": price, "d1v": d1v, "d2v": d2v, "d3v": d3v,
            "vega": vega, "d1vega": d1vega}


def geo_asian_price(state: OracleState, spec: VanillaSpec, r: float, sigma: float) -> float:
    """Value of the geometric-average call/put given the running log integral."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    _tau(state.t, spec.maturity)
    out = _geo_core(
        state.x, state.log_integral, state.t, spec.strike, spec.maturity, r, sigma,
        spec.is_put,
    )
    return float(out["price"])


def geo_asian_greeks(state: OracleState, spec: VanillaSpec, r: float, sigma: float):
    """(D1, D2, D3, vega) of the geometric-average payoff."""
    if not sigma > 0:
        raise ValueError("greeks need sigma > 0")
    tau = _tau(state.t, spec.maturity)
    if tau == 0:
        raise ValueError("greeks need t < maturity")
    out = _geo_core(
        state.x, state.log_integral, state.t, spec.strike, spec.maturity, r, sigma,
        spec.is_put,
    )
    return (float(out["d1v"]), float(out["d2v"]), float(out["d3v"]), float(out["vega"]))


def geo_asian_vega_pair(state: OracleState, spec: VanillaSpec, r: float, sigma: float):
    if not sigma > 0:
        raise ValueError("needs sigma > 0")
    tau = _tau(state.t, spec.maturity)
    if tau == 0:
        raise ValueError("needs t < maturity")
    out = _geo_core(
        state.x, state.log_integral, state.t, spec.strike, spec.maturity, r, sigma,
        spec.is_put,
    )
    return (float(out["vega"]), float(out["d1vega"]))


# --- quadratic-variation payoff -------------------------------------------------------


def _qv_afactors(k: float, tau):
    """A = (e^{k tau} - 1)/k and its k-derivative, with the k -> 0 limits."""
    tau = np.asarray(tau, dtype=float)
    if abs(k * np.max(tau, initial=0.0)) < 1e-8:
        kt = k * tau
        a = tau * (1.0 + 0.5 * kt + kt * kt / 6.0)
        ak = tau * tau * (0.5 + kt / 3.0 + kt * kt / 8.0)
        return a, ak
    a = np.expm1(k * tau) / k
    ak = (tau * np.exp(k * tau) - a) / k
    return a, ak


def _qv_core(x, q, tau, r, sigma):
    """Price and functional derivatives of the accumulated-QV payoff.

    The payoff's reduced value is e^{-r tau}(q + x^2 sigma^2 A) with
    A = (e^{(2r+sigma^2) tau} - 1)/(2r+sigma^2). A level bump moves both x
    and, quadratically, the accumulated QV, so the functional second
    derivative is d_xx + 2 d_q and the third picks up 6 d_x d_q (zero here
    together with d_xxx).
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    tau = np.asarray(tau, dtype=float)
    k = 2.0 * r + sigma * sigma
    a, ak = _qv_afactors(k, tau)
    disc = np.exp(-r * tau)
    s2 = sigma * sigma

    price = disc * (q + x * x * s2 * a)
    dx = 2.0 * x * s2 * a * disc                  # d/dx
    dxx_func = (2.0 * s2 * a + 2.0) * disc        # d_xx + 2 d_q
    dxxx_func = np.zeros_like(price)              # d_xxx + 6 d_x d_q = 0
    vega = 2.0 * sigma * x * x * disc * (a + s2 * ak)
    d1vega = 2.0 * vega                           # vega is proportional to x^2
    return {"price": price, "dx": dx, "dxx": dxx_func, "dxxx": dxxx_func,
            "vega": vega, "d1vega": d1vega}


def qv_linear_price(state: OracleState, maturity: float, r: float, sigma: float) -> float:
    """Value of the payoff that pays the level path's quadratic variation."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    tau = _tau(state.t, maturity)
    out = _qv_core(state.x, state.qv, tau, r, sigma)
    return float(out["price"])


def qv_linear_derivs(state: OracleState, maturity: float, r: float, sigma: float):
    """Functional level derivatives (Dx, Dxx, Dxxx) of the QV payoff value.

    These are plain derivatives, not the x^k-weighted D_k form; the second
    and third include the chain-rule contributions from the accumulated QV.
    """
    tau = _tau(state.t, maturity)
    out = _qv_core(state.x, state.qv, tau, r, sigma)
    return (float(out["dx"]), float(out["dxx"]), float(out["dxxx"]))


def qv_linear_vega_pair(state: OracleState, maturity: float, r: float, sigma: float):
    if not sigma > 0:
        raise ValueError("needs sigma > 0")
    tau = _tau(state.t, maturity)
    out = _qv_core(state.x, state.qv, tau, r, sigma)
    return (float(out["vega"]), float(out["d1vega"]))
