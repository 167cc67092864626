"""Multiscale stochastic volatility pricing toolkit.

Prices path-dependent European payoffs under a two-factor (fast and slow)
stochastic volatility model via a first-order asymptotic expansion around
an effective Black-Scholes model, validates the expansion against full-model
Monte Carlo, and calibrates the group market parameters from implied
volatility surfaces.
"""

from mssv.pathspace import (
    DerivativeConfig,
    Functional,
    GridMismatchError,
    Path,
    bump,
    concat,
    d_lambda,
    delta_t,
    delta_x,
    flat_extension,
    lie_bracket,
    quadratic_variation,
    running_integral,
)
from mssv.model import (
    REFERENCE_MODEL,
    GroupParams,
    ModelSpec,
    QuadratureConfig,
    group_params,
    reference_model,
    sigma_bar,
)
from mssv.mc import Estimate, GridSpec, McConfig, mc_estimate, simulate_bs, simulate_full, simulate_ou
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
from mssv.pricing import (
    ControlVariate,
    CorrectionReport,
    GeoAsianOracle,
    QvLinearOracle,
    SweepPoint,
    SweepResult,
    VanillaOracle,
    ZeroOrderOracle,
    accuracy_sweep,
    correction_closed,
    correction_fk_delta,
    correction_fk_eps,
    correction_fk_reference,
    first_order_price,
    fk_time_nodes,
    full_model_price,
    zero_order_price,
)
from mssv.calibration import (
    SmileCoeffs,
    Surface,
    SurfaceQuote,
    affine_vol,
    coeffs_to_params,
    fit_smile,
    params_to_coeffs,
    smile_residuals,
    surface_from_csv,
    surface_to_csv,
    synthesize_surface,
)

__version__ = "0.1.0"
