import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mssv import mc
from mssv.analytic import (
    OracleState,
    VanillaSpec,
    bs_greeks,
    bs_price,
    bs_vega_pair,
    geo_asian_greeks,
    geo_asian_price,
    geo_asian_vega_pair,
    implied_vol,
    qv_linear_derivs,
    qv_linear_price,
    qv_linear_vega_pair,
)
from mssv.pathspace import DerivativeConfig, Functional, Path, delta_x

# Frozen independent oracles: direct numerical integration against the exact
# terminal laws (400001-node trapezoid, 14 sd window), no N(d) algebra.
ORACLE_BS_CALL_ATM = 18.0229514531179            # x=100 K=100 r=0.05 s=0.4 tau=1
ORACLE_BS_CALL_OTM = 0.03898551183652311         # x=1 K=1.1 r=0.03 s=0.25 tau=0.5
ORACLE_GEO_CALL = 0.09365021450847448            # x=1 K=1 r=0.05 s=0.4 T=1, t=0
ORACLE_GEO_CALL_2 = 12.03699082663811            # x=100 K=95 r=0.02 s=0.3 T=2, t=0
ORACLE_GEO_MID = 0.05340036136473467             # x=1.05 ilog=0.4*ln(0.98) t=0.4
ORACLE_QV = 0.17381454489602413                  # x=1 q=0 r=0.05 s=0.4 tau=1
ORACLE_QV_2 = 0.36910704290395113                # x=1.2 q=0.3 r=0 s=0.25 tau=0.75


# --- domain types -----------------------------------------------------------------


def test_vanilla_spec_validation():
    with pytest.raises(ValueError):
        VanillaSpec(strike=0.0, maturity=1.0)
    with pytest.raises(ValueError):
        VanillaSpec(strike=1.0, maturity=0.0)
    with pytest.raises(ValueError):
        VanillaSpec(strike=1.0, maturity=1.0, kind="straddle")


def test_oracle_state_validation():
    with pytest.raises(ValueError):
        OracleState(t=0.0, x=0.0)
    with pytest.raises(ValueError):
        OracleState(t=0.0, x=1.0, qv=-0.1)


def test_state_past_maturity_rejected():
    with pytest.raises(ValueError):
        bs_price(OracleState(t=2.0, x=1.0), VanillaSpec(1.0, 1.0), 0.0, 0.2)


# --- vanilla prices ----------------------------------------------------------------


def test_bs_call_matches_density_oracle():
    st8 = OracleState(t=0.0, x=100.0)
    v = bs_price(st8, VanillaSpec(100.0, 1.0), 0.05, 0.4)
    assert v == pytest.approx(ORACLE_BS_CALL_ATM, rel=2e-9)


def test_bs_otm_call_matches_density_oracle():
    v = bs_price(OracleState(0.0, 1.0), VanillaSpec(1.1, 0.5), 0.03, 0.25)
    assert v == pytest.approx(ORACLE_BS_CALL_OTM, rel=2e-9)


def test_bs_zero_vol_is_discounted_intrinsic():
    spec = VanillaSpec(90.0, 2.0)
    v = bs_price(OracleState(0.0, 100.0), spec, 0.05, 0.0)
    assert v == pytest.approx(100.0 - 90.0 * math.exp(-0.1), abs=1e-14)
    vput = bs_price(OracleState(0.0, 100.0), VanillaSpec(90.0, 2.0, "put"), 0.05, 0.0)
    assert vput == 0.0


def test_bs_deep_itm_asymptote():
    spec = VanillaSpec(100.0, 1.0)
    x = 1e6
    v = bs_price(OracleState(0.0, x), spec, 0.05, 0.4)
    assert v - (x - 100.0 * math.exp(-0.05)) == pytest.approx(0.0, abs=1e-7)


def test_put_call_parity():
    for x in (80.0, 100.0, 125.0):
        call = bs_price(OracleState(0.0, x), VanillaSpec(100.0, 1.5), 0.04, 0.3)
        put = bs_price(OracleState(0.0, x), VanillaSpec(100.0, 1.5, "put"), 0.04, 0.3)
        assert call - put == pytest.approx(
            x - 100.0 * math.exp(-0.04 * 1.5), abs=1e-12
        )


def test_bs_expiry_boundary():
    spec = VanillaSpec(100.0, 1.0)
    assert bs_price(OracleState(1.0, 130.0), spec, 0.05, 0.4) == pytest.approx(30.0)
    assert bs_price(OracleState(1.0, 70.0), spec, 0.05, 0.4) == 0.0


# --- vanilla Greeks -----------------------------------------------------------------


def _fd_d123(price_fn, x):
    h = x * 1e-4
    p = {k: price_fn(x + k * h) for k in (-1, 0, 1)}
    d1 = x * (p[1] - p[-1]) / (2 * h)
    d2 = x * x * (p[1] - 2 * p[0] + p[-1]) / (h * h)

    def third(hh):
        q = {k: price_fn(x + k * hh) for k in (-2, -1, 1, 2)}
        return (-0.5 * q[-2] + q[-1] - q[1] + 0.5 * q[2]) / (hh**3)

    # Richardson: kills the h^2 truncation term of the central stencil
    h3 = x * 2e-3
    d3 = x**3 * (4.0 * third(h3 / 2) - third(h3)) / 3.0
    return d1, d2, d3


@pytest.mark.parametrize("kind", ["call", "put"])
@pytest.mark.parametrize("x", [80.0, 100.0, 115.0])
def test_bs_greeks_match_finite_differences(kind, x):
    spec = VanillaSpec(100.0, 1.0, kind)
    r, sigma = 0.05, 0.4
    d1, d2, d3, vega = bs_greeks(OracleState(0.0, x), spec, r, sigma)
    f1, f2, f3 = _fd_d123(
        lambda u: bs_price(OracleState(0.0, u), spec, r, sigma), x
    )
    assert d1 == pytest.approx(f1, rel=1e-6)
    assert d2 == pytest.approx(f2, rel=1e-6)
    assert d3 == pytest.approx(f3, rel=1e-6)
    h = 1e-6
    fv = (
        bs_price(OracleState(0.0, x), spec, r, sigma + h)
        - bs_price(OracleState(0.0, x), spec, r, sigma - h)
    ) / (2 * h)
    assert vega == pytest.approx(fv, rel=1e-7)


def test_bs_d2_positive_for_calls():
    spec = VanillaSpec(100.0, 1.0)
    for x in (60.0, 100.0, 170.0):
        _, d2, _, _ = bs_greeks(OracleState(0.0, x), spec, 0.05, 0.4)
        assert d2 > 0


def test_vanilla_vega_gamma_identity_grid():
    # vega = (T - t) sigma D2, exact for terminal payoffs
    for x in (0.7, 1.0, 1.6):
        for sigma in (0.1, 0.4, 0.9):
            for tau in (0.1, 1.0, 3.0):
                for r in (0.0, 0.05, -0.01):
                    spec = VanillaSpec(1.0, tau)
                    _, d2, _, vega = bs_greeks(OracleState(0.0, x), spec, r, sigma)
                    assert vega == pytest.approx(tau * sigma * d2, rel=1e-10)


def test_bs_d1vega_matches_finite_difference():
    spec = VanillaSpec(100.0, 1.0)
    x, r, sigma = 110.0, 0.05, 0.4
    _, d1vega = bs_vega_pair(OracleState(0.0, x), spec, r, sigma)
    h = x * 1e-5

    def vega_at(u):
        return bs_greeks(OracleState(0.0, u), spec, r, sigma)[3]

    fd = x * (vega_at(x + h) - vega_at(x - h)) / (2 * h)
    assert d1vega == pytest.approx(fd, rel=1e-6)


# --- implied volatility ---------------------------------------------------------------


def test_implied_vol_round_trip():
    spec = VanillaSpec(100.0, 1.0)
    state = OracleState(0.0, 105.0)
    for sigma in (0.05, 0.2, 0.8, 2.5):
        p = bs_price(state, spec, 0.05, sigma)
        assert implied_vol(p, state, spec, 0.05) == pytest.approx(sigma, abs=1e-9)


def test_implied_vol_put_round_trip():
    spec = VanillaSpec(100.0, 0.5, "put")
    state = OracleState(0.0, 90.0)
    p = bs_price(state, spec, 0.02, 0.35)
    assert implied_vol(p, state, spec, 0.02) == pytest.approx(0.35, abs=1e-9)


def test_implied_vol_below_intrinsic_errors():
    spec = VanillaSpec(100.0, 1.0)
    state = OracleState(0.0, 120.0)
    with pytest.raises(ValueError, match="lower bound"):
        implied_vol(10.0, state, spec, 0.05)


def test_implied_vol_above_upper_bound_errors():
    spec = VanillaSpec(100.0, 1.0)
    state = OracleState(0.0, 120.0)
    with pytest.raises(ValueError, match="upper bound"):
        implied_vol(125.0, state, spec, 0.05)


def test_implied_vol_monotone_in_price():
    spec = VanillaSpec(1.0, 1.0)
    state = OracleState(0.0, 1.0)
    p1 = bs_price(state, spec, 0.0, 0.2)
    p2 = bs_price(state, spec, 0.0, 0.3)
    assert implied_vol(p1, state, spec, 0.0) < implied_vol(p2, state, spec, 0.0)


@given(
    st.floats(min_value=0.03, max_value=2.8),
    st.floats(min_value=0.6, max_value=1.7),
    st.floats(min_value=0.05, max_value=3.0),
)
@settings(max_examples=60, deadline=None)
def test_implied_vol_round_trip_property(sigma, moneyness, tau):
    spec = VanillaSpec(moneyness, tau)
    state = OracleState(0.0, 1.0)
    # the inversion is only well-posed where the price responds to vol in
    # double precision; skip the vega ~ 0 corner (deep ITM, tiny total vol)
    vega = bs_greeks(state, spec, 0.03, sigma)[3]
    assume(vega > 1e-7)
    p = bs_price(state, spec, 0.03, sigma)
    assert implied_vol(p, state, spec, 0.03) == pytest.approx(sigma, abs=1e-8)


# --- geometric Asian -------------------------------------------------------------------


def test_geo_asian_matches_density_oracle():
    spec = VanillaSpec(1.0, 1.0)
    v = geo_asian_price(OracleState(0.0, 1.0), spec, 0.05, 0.4)
    assert v == pytest.approx(ORACLE_GEO_CALL, rel=2e-9)


def test_geo_asian_second_point_matches_density_oracle():
    spec = VanillaSpec(95.0, 2.0)
    v = geo_asian_price(OracleState(0.0, 100.0), spec, 0.02, 0.3)
    assert v == pytest.approx(ORACLE_GEO_CALL_2, rel=2e-9)


def test_geo_asian_mid_life_matches_density_oracle():
    spec = VanillaSpec(1.0, 1.0)
    state = OracleState(t=0.4, x=1.05, log_integral=0.4 * math.log(0.98))
    v = geo_asian_price(state, spec, 0.05, 0.4)
    assert v == pytest.approx(ORACLE_GEO_MID, rel=2e-9)


def test_geo_asian_expiry_pays_realized_average():
    spec = VanillaSpec(1.0, 1.0)
    # realized geometric mean exp(ilog / T)
    state = OracleState(t=1.0, x=0.9, log_integral=math.log(1.3))
    assert geo_asian_price(state, spec, 0.05, 0.4) == pytest.approx(0.3, rel=1e-12)
    state2 = OracleState(t=1.0, x=0.9, log_integral=math.log(0.7))
    assert geo_asian_price(state2, spec, 0.05, 0.4) == 0.0


def test_geo_asian_zero_vol_discounts_deterministic_average():
    spec = VanillaSpec(1.0, 1.0)
    v = geo_asian_price(OracleState(0.0, 1.0), spec, 0.05, 0.0)
    # average of a deterministic exponential: exp(r T / 2)
    assert v == pytest.approx(math.exp(-0.05) * (math.exp(0.025) - 1.0), rel=1e-12)


def test_geo_asian_parity():
    spec_c = VanillaSpec(1.1, 1.0)
    spec_p = VanillaSpec(1.1, 1.0, "put")
    state = OracleState(0.2, 0.95, log_integral=0.2 * math.log(1.02))
    call = geo_asian_price(state, spec_c, 0.05, 0.4)
    put = geo_asian_price(state, spec_p, 0.05, 0.4)
    # parity against the lognormal forward of the average
    tau = 0.8
    m = 0.05 - 0.08
    mu = (state.log_integral + tau * math.log(0.95)) / 1.0 + m * tau * tau / 2.0
    s2 = 0.16 * tau**3 / 3.0
    fwd = math.exp(mu + s2 / 2)
    assert call - put == pytest.approx(math.exp(-0.05 * tau) * (fwd - 1.1), abs=1e-12)


@pytest.mark.parametrize("kind", ["call", "put"])
def test_geo_asian_greeks_match_finite_differences(kind):
    spec = VanillaSpec(1.0, 1.0, kind)
    r, sigma = 0.05, 0.4
    state = OracleState(0.25, 1.08, log_integral=0.25 * math.log(1.01))
    d1, d2, d3, vega = geo_asian_greeks(state, spec, r, sigma)

    def at(u):
        return geo_asian_price(
            OracleState(state.t, u, log_integral=state.log_integral), spec, r, sigma
        )

    f1, f2, f3 = _fd_d123(at, 1.08)
    assert d1 == pytest.approx(f1, rel=1e-6)
    assert d2 == pytest.approx(f2, rel=1e-5)
    assert d3 == pytest.approx(f3, rel=3e-4, abs=1e-7)
    h = 1e-6
    fv = (
        geo_asian_price(state, spec, r, sigma + h)
        - geo_asian_price(state, spec, r, sigma - h)
    ) / (2 * h)
    assert vega == pytest.approx(fv, rel=1e-6)


def test_geo_asian_d1vega_matches_finite_difference():
    spec = VanillaSpec(1.0, 1.0)
    state = OracleState(0.25, 1.08, log_integral=0.25 * math.log(1.01))
    _, d1vega = geo_asian_vega_pair(state, spec, 0.05, 0.4)
    x, h = 1.08, 1.08e-5

    def vega_at(u):
        return geo_asian_greeks(
            OracleState(0.25, u, log_integral=state.log_integral), spec, 0.05, 0.4
        )[3]

    fd = x * (vega_at(x + h) - vega_at(x - h)) / (2 * h)
    assert d1vega == pytest.approx(fd, rel=1e-6)


def test_geo_asian_against_discrete_mc():
    # Monte Carlo of the discretely monitored geometric mean under the
    # constant-vol model; fine grid so the monitoring gap is far below noise
    x, K, r, sigma, T = 1.0, 1.0, 0.05, 0.4, 1.0
    steps, n = 512, 100_000
    grid = mc.GridSpec(0.0, T, steps)
    closed = geo_asian_price(OracleState(0.0, x), VanillaSpec(K, T), r, sigma)

    vals = np.empty(n)
    done = 0
    ci = 0
    while done < n:
        take = min(4096, n - done)
        s = mc.bs_paths_chunk(sigma, r, x, grid, mc.chunk_rng(77, ci), take)
        lg = np.log(s[:-1]).mean(axis=0)
        vals[done : done + take] = math.exp(-r * T) * np.maximum(np.exp(lg) - K, 0.0)
        done += take
        ci += 1
    err = abs(vals.mean() - closed)
    stderr = vals.std(ddof=1) / math.sqrt(n)
    assert err < 3 * stderr

    # exact law of the discrete statistic, derived from scratch: the mean of
    # ln S over left nodes is Gaussian with these moments
    dt = T / steps
    m = r - 0.5 * sigma**2
    mu_d = math.log(x) + m * dt * (steps - 1) / 2.0
    var_d = sigma**2 * dt**3 / T**2 * sum((steps - k) ** 2 for k in range(1, steps))
    from scipy.special import ndtr

    sd = math.sqrt(var_d)
    fwd = math.exp(mu_d + var_d / 2)
    d2 = (mu_d - math.log(K)) / sd
    exact_discrete = math.exp(-r * T) * (fwd * ndtr(d2 + sd) - K * ndtr(d2))
    assert abs(vals.mean() - exact_discrete) < 3 * stderr
    assert abs(exact_discrete - closed) < 5e-4


# --- quadratic-variation payoff ----------------------------------------------------------


def test_qv_price_matches_moment_oracle():
    v = qv_linear_price(OracleState(0.0, 1.0), 1.0, 0.05, 0.4)
    assert v == pytest.approx(ORACLE_QV, rel=1e-10)


def test_qv_price_second_point_matches_moment_oracle():
    v = qv_linear_price(OracleState(0.25, 1.2, qv=0.3), 1.0, 0.0, 0.25)
    assert v == pytest.approx(ORACLE_QV_2, rel=1e-10)


def test_qv_expiry_pays_accumulated_variation():
    assert qv_linear_price(OracleState(1.0, 2.0, qv=0.37), 1.0, 0.05, 0.4) == 0.37


def test_qv_removable_singularity():
    # 2r + sigma^2 = 0 at r = -sigma^2/2; the A-factor limit is tau
    sigma = 0.3
    r = -0.5 * sigma * sigma
    v = qv_linear_price(OracleState(0.0, 2.0, qv=0.1), 1.0, r, sigma)
    expect = math.exp(-r) * (0.1 + 4.0 * sigma * sigma * 1.0)
    assert v == pytest.approx(expect, rel=1e-9)


def test_qv_derivs_functional_chain_rule():
    state = OracleState(0.0, 1.3, qv=0.2)
    r, sigma, T = 0.05, 0.4, 1.0
    dx, dxx, dxxx = qv_linear_derivs(state, T, r, sigma)
    k = 2 * r + sigma * sigma
    a = math.expm1(k * T) / k
    disc = math.exp(-r * T)
    assert dx == pytest.approx(2 * 1.3 * sigma**2 * a * disc, rel=1e-12)
    assert dxx == pytest.approx((2 * sigma**2 * a + 2.0) * disc, rel=1e-12)
    assert dxxx == 0.0


def test_qv_against_discrete_mc():
    x, r, sigma, T = 1.0, 0.05, 0.4, 1.0
    steps, n = 512, 100_000
    grid = mc.GridSpec(0.0, T, steps)
    closed = qv_linear_price(OracleState(0.0, x), T, r, sigma)

    vals = np.empty(n)
    done, ci = 0, 0
    while done < n:
        take = min(4096, n - done)
        s = mc.bs_paths_chunk(sigma, r, x, grid, mc.chunk_rng(78, ci), take)
        qv = np.sum(np.diff(s, axis=0) ** 2, axis=0)
        vals[done : done + take] = math.exp(-r * T) * qv
        done += take
        ci += 1
    stderr = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - closed) < 3 * stderr

    # exact mean of the discrete quadratic variation (geometric series)
    dt = T / steps
    k = 2 * r + sigma * sigma
    per = math.exp(k * dt) - 2 * math.exp(r * dt) + 1
    exact_discrete = (
        math.exp(-r * T)
        * x
        * x
        * per
        * (math.exp(k * T) - 1.0)
        / (math.exp(k * dt) - 1.0)
    )
    assert abs(vals.mean() - exact_discrete) < 3 * stderr
    assert abs(exact_discrete - closed) < 5e-4


def test_qv_vega_gamma_identity_at_zero_rate():
    # with zero rate the identity vega = tau sigma (x^2 Dxx) is exact
    for sigma in (0.15, 0.4, 0.8):
        for tau in (0.25, 1.0, 2.0):
            state = OracleState(0.0, 1.1, qv=0.05)
            vega, _ = qv_linear_vega_pair(state, tau, 0.0, sigma)
            _, dxx, _ = qv_linear_derivs(state, tau, 0.0, sigma)
            d2 = 1.1 * 1.1 * dxx
            assert vega == pytest.approx(tau * sigma * d2, rel=1e-10)


def test_qv_vega_gamma_defect_at_nonzero_rate():
    # the identity breaks off the zero-rate axis; the gap has a closed form
    x, r, sigma, tau = 1.0, 0.05, 0.4, 1.0
    state = OracleState(0.0, x)
    vega, _ = qv_linear_vega_pair(state, tau, r, sigma)
    _, dxx, _ = qv_linear_derivs(state, tau, r, sigma)
    d2 = x * x * dxx
    k = 2 * r + sigma * sigma
    a = math.expm1(k * tau) / k
    expected_gap = 2 * sigma * x * x * math.exp(-r * tau) * (2 * r / k) * (a - tau)
    assert vega - tau * sigma * d2 == pytest.approx(expected_gap, rel=1e-10)
    assert abs(expected_gap) > 1e-3  # genuinely nonzero


def test_qv_vega_fd():
    state = OracleState(0.1, 1.4, qv=0.12)
    vega, d1vega = qv_linear_vega_pair(state, 1.0, 0.05, 0.4)
    h = 1e-6
    fd = (
        qv_linear_price(state, 1.0, 0.05, 0.4 + h)
        - qv_linear_price(state, 1.0, 0.05, 0.4 - h)
    ) / (2 * h)
    assert vega == pytest.approx(fd, rel=1e-7)
    assert d1vega == pytest.approx(2 * vega, rel=1e-14)


# --- pathspace cross-validation ---------------------------------------------------------


def _flat_ended(values, dt):
    vals = np.asarray(values, dtype=float)
    vals = np.append(vals, vals[-1])
    return Path(0.0, dt, vals)


def test_vanilla_closed_form_agrees_with_path_derivatives():
    spec = VanillaSpec(1.0, 1.0)
    r, sigma = 0.05, 0.4

    def p0(path):
        return bs_price(OracleState(path.t, path.last), spec, r, sigma)

    x = _flat_ended([1.0, 1.02, 0.98, 1.05], dt=0.05)
    f = Functional(p0, "vanilla_p0")
    state = OracleState(x.t, x.last)
    d1, d2, d3, _ = bs_greeks(state, spec, r, sigma)
    cfg = DerivativeConfig(h=1e-4)
    assert delta_x(f, x, cfg, 1) == pytest.approx(d1 / x.last, rel=1e-6)
    assert delta_x(f, x, cfg, 2) == pytest.approx(d2 / x.last**2, rel=1e-5)
    cfg3 = DerivativeConfig(h=2e-3)
    assert delta_x(f, x, cfg3, 3) == pytest.approx(d3 / x.last**3, rel=1e-3)


def test_qv_closed_form_agrees_with_path_derivatives():
    # the quadratic response of accumulated QV to a terminal bump is what
    # generates the chain-rule terms; flat-ended paths isolate it
    r, sigma, T = 0.05, 0.4, 1.0

    def p0(path):
        q = float(np.sum(np.diff(path.values) ** 2))
        return qv_linear_price(OracleState(path.t, path.last, qv=q), T, r, sigma)

    x = _flat_ended([1.0, 1.04, 0.97], dt=0.05)
    f = Functional(p0, "qv_p0")
    q0 = float(np.sum(np.diff(x.values) ** 2))
    dx, dxx, dxxx = qv_linear_derivs(
        OracleState(x.t, x.last, qv=q0), T, r, sigma
    )
    cfg = DerivativeConfig(h=1e-4)
    assert delta_x(f, x, cfg, 1) == pytest.approx(dx, rel=1e-6)
    assert delta_x(f, x, cfg, 2) == pytest.approx(dxx, rel=1e-6)
    cfg3 = DerivativeConfig(h=2e-3)
    assert delta_x(f, x, cfg3, 3) == pytest.approx(dxxx, abs=1e-4)


def test_geo_asian_closed_form_agrees_with_path_derivatives():
    spec = VanillaSpec(1.0, 1.0)
    r, sigma = 0.05, 0.4

    def p0(path):
        ilog = float(np.sum(np.log(path.values[:-1])) * path.dt)
        return geo_asian_price(
            OracleState(path.t, path.last, log_integral=ilog), spec, r, sigma
        )

    x = _flat_ended([1.0, 1.03, 0.99, 1.01], dt=0.05)
    f = Functional(p0, "geo_p0")
    ilog0 = float(np.sum(np.log(x.values[:-1])) * x.dt)
    state = OracleState(x.t, x.last, log_integral=ilog0)
    d1, d2, d3, _ = geo_asian_greeks(state, spec, r, sigma)
    cfg = DerivativeConfig(h=1e-4)
    assert delta_x(f, x, cfg, 1) == pytest.approx(d1 / x.last, rel=1e-6)
    assert delta_x(f, x, cfg, 2) == pytest.approx(d2 / x.last**2, rel=1e-4)
    cfg3 = DerivativeConfig(h=2e-3)
    assert delta_x(f, x, cfg3, 3) == pytest.approx(d3 / x.last**3, rel=5e-3, abs=1e-7)
