"""Affine smile fitting and the group-parameter round trip.

The first-order vanilla price implies a volatility surface that is affine in
the log-moneyness-to-maturity ratio (LMMR), with maturity-dependent slope
and level:

    vol(K, T) = b_star + (T - t) * b_delta + (a_eps + (T - t) * a_delta) * LMMR

fit_smile recovers the four coefficients from quotes by least squares;
params_to_coeffs / coeffs_to_params map between them and the group market
parameters (sigma_star, v0, v1, v3); synthesize_surface evaluates the affine
formula on a strike/maturity grid. CSV interchange uses the three-column
schema K,T,iv with spot, rate, and valuation time supplied separately: a
surface file carries only what varies.

A fitted surface pins no slow-factor level and no separate base vol, so
calibrated GroupParams carry sigma_bar = sigma_star, v2 = 0, z = 0.0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from mssv.model import GroupParams

__all__ = [
    "SurfaceQuote",
    "Surface",
    "SmileCoeffs",
    "affine_vol",
    "fit_smile",
    "smile_residuals",
    "params_to_coeffs",
    "coeffs_to_params",
    "synthesize_surface",
    "surface_to_csv",
    "surface_from_csv",
]


@dataclass(frozen=True)
class SurfaceQuote:
    """One implied-vol quote: strike, maturity, vol in 1/sqrt(year)."""

    strike: float
    maturity: float
    vol: float

    def __post_init__(self):
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if not self.vol > 0:
            raise ValueError(f"vol must be positive, got {self.vol}")
        if not np.isfinite(self.maturity):
            raise ValueError("maturity must be finite")


@dataclass(frozen=True)
class Surface:
    """Quotes sharing one spot, rate, and valuation time."""

    x: float
    r: float
    t: float
    quotes: tuple

    def __post_init__(self):
        if not self.x > 0:
            raise ValueError("spot must be positive")
        object.__setattr__(self, "quotes", tuple(self.quotes))
        for q in self.quotes:
            if not q.maturity > self.t:
                raise ValueError(
                    f"quote maturity {q.maturity} is not after valuation time {self.t}"
                )

    def lmmr(self) -> np.ndarray:
        k = np.array([q.strike for q in self.quotes])
        tau = np.array([q.maturity for q in self.quotes]) - self.t
        return np.log(k / self.x) / tau


@dataclass(frozen=True)
class SmileCoeffs:
    """Affine smile coefficients: level, maturity slope, LMMR slope, and
    the maturity-dependent part of the LMMR slope."""

    b_star: float
    b_delta: float
    a_eps: float
    a_delta: float

    def __post_init__(self):
        if not self.b_star > 0:
            raise ValueError("b_star must be positive")

    def to_dict(self) -> dict:
        return {
            "b_star": self.b_star,
            "b_delta": self.b_delta,
            "a_eps": self.a_eps,
            "a_delta": self.a_delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SmileCoeffs":
        return cls(**{k: d[k] for k in ("b_star", "b_delta", "a_eps", "a_delta")})


def affine_vol(c: SmileCoeffs, x: float, strike, tau):
    """Affine smile evaluated at strike(s) and remaining maturity tau."""
    strike = np.asarray(strike, dtype=float)
    tau = np.asarray(tau, dtype=float)
    lmmr = np.log(strike / x) / tau
    return c.b_star + tau * c.b_delta + (c.a_eps + tau * c.a_delta) * lmmr


def _design(surface: Surface) -> np.ndarray:
    tau = np.array([q.maturity for q in surface.quotes]) - surface.t
    lmmr = surface.lmmr()
    return np.column_stack([np.ones_like(tau), tau, lmmr, tau * lmmr])


def fit_smile(surface: Surface, vega_weighted: bool = False) -> SmileCoeffs:
    """Least-squares fit of the affine smile to a quote surface.

    Needs at least 4 quotes spanning at least 2 strikes and 2 maturities.
    vega_weighted scales each residual by the quote's own vega, damping the
    far wings; default off (plain least squares).
    """
    quotes = surface.quotes
    if len(quotes) < 4:
        raise ValueError(f"need at least 4 quotes to fit, got {len(quotes)}")
    if len({q.strike for q in quotes}) < 2:
        raise ValueError("quotes span a single strike; need at least two strikes")
    if len({q.maturity for q in quotes}) < 2:
        raise ValueError("quotes span a single maturity; need at least two maturities")

    a = _design(surface)
    y = np.array([q.vol for q in quotes])
    if vega_weighted:
        tau = np.array([q.maturity for q in quotes]) - surface.t
        k = np.array([q.strike for q in quotes])
        vol = y * np.sqrt(tau)
        d1 = (np.log(surface.x / k) + (surface.r + 0.5 * y * y) * tau) / vol
        w = np.sqrt(surface.x * np.exp(-0.5 * d1 * d1) * np.sqrt(tau))
        a = a * w[:, None]
        y = y * w
    beta, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    if rank < 4:
        raise ValueError(
            "rank-deficient design: the quotes do not separate the level, "
            "maturity, and moneyness terms"
        )
    return SmileCoeffs(b_star=float(beta[0]), b_delta=float(beta[1]),
                       a_eps=float(beta[2]), a_delta=float(beta[3]))


def smile_residuals(surface: Surface, c: SmileCoeffs) -> np.ndarray:
    """Quote vols minus fitted vols, in quote order."""
    fitted = _design(surface) @ np.array([c.b_star, c.b_delta, c.a_eps, c.a_delta])
    return np.array([q.vol for q in surface.quotes]) - fitted


def params_to_coeffs(gp: GroupParams, r: float) -> SmileCoeffs:
    """Smile coefficients implied by group parameters at rate r."""
    s = gp.sigma_star
    if not s > 0:
        raise ValueError("sigma_star must be positive")
    half = 1.0 - 2.0 * r / (s * s)
    return SmileCoeffs(
        b_star=s + (gp.v3 / (2.0 * s)) * half,
        b_delta=gp.v0 + (gp.v1 / 2.0) * half,
        a_eps=gp.v3 / s**3,
        a_delta=gp.v1 / (s * s),
    )


def coeffs_to_params(c: SmileCoeffs, r: float, literal: bool = False) -> GroupParams:
    """Invert the smile coefficients to group parameters.

    The inversion is first order: the level seen in b_star already carries
    an O(v3) shift. By default the vol-level estimate is refined first and
    the v's are scaled by it; `literal` instead applies the uncorrected
    b_star everywhere, which is cruder by one order in the v's.
    """
    s = c.b_star + c.a_eps * (r - c.b_star**2 / 2.0)
    if not s > 0:
        raise ValueError(f"inverted sigma_star {s:.6g} is not positive")
    if literal:
        v3 = c.a_eps * c.b_star**3
        v1 = c.a_delta * c.b_star**2
        v0 = c.b_delta + c.a_delta * (r - c.b_star**2 / 2.0)
    else:
        v3 = c.a_eps * s**3
        v1 = c.a_delta * s * s
        v0 = c.b_delta + c.a_delta * (r - s * s / 2.0)
    return GroupParams(sigma_bar=s, sigma_star=s, v0=v0, v1=v1, v2=0.0, v3=v3,
                       z=0.0)


def synthesize_surface(gp: GroupParams, r: float, strikes, maturities,
                       x: float, t: float = 0.0) -> Surface:
    """Surface of affine-smile vols on the strike/maturity grid."""
    c = params_to_coeffs(gp, r)
    quotes = []
    bad = []
    for maturity in maturities:
        tau = maturity - t
        if not tau > 0:
            raise ValueError(f"maturity {maturity} is not after valuation time {t}")
        for k in strikes:
            vol = float(affine_vol(c, x, k, tau))
            if vol <= 0:
                bad.append((float(k), float(maturity)))
            else:
                quotes.append(SurfaceQuote(strike=float(k), maturity=float(maturity),
                                           vol=vol))
    if bad:
        raise ValueError(
            "affine smile is non-positive at (K, T) pairs: "
            + ", ".join(f"({k:g}, {m:g})" for k, m in bad[:8])
            + ("..." if len(bad) > 8 else "")
        )
    return Surface(x=x, r=r, t=t, quotes=tuple(quotes))


# --- CSV interchange ----------------------------------------------------------


def surface_to_csv(surface: Surface, path: str) -> None:
    """Write quotes as K,T,iv rows (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "T", "iv"])
        for q in surface.quotes:
            w.writerow([format(q.strike, ".17g"), format(q.maturity, ".17g"),
                        format(q.vol, ".17g")])


def surface_from_csv(path: str, x: float, r: float, t: float = 0.0) -> Surface:
    """Read a K,T,iv quote file; spot, rate, and time come from the caller."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in ("K", "T", "iv") if c not in cols]
        if missing:
            raise ValueError(f"quote file {path} is missing columns: {missing}")
        quotes = [
            SurfaceQuote(strike=float(row["K"]), maturity=float(row["T"]),
                         vol=float(row["iv"]))
            for row in reader
        ]
    return Surface(x=x, r=r, t=t, quotes=tuple(quotes))
