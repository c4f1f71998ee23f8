"""The model suite: state, county, GP series, count and mixture models."""

from .counts import fit_negbin_counts, negbin_program
from .county import PARAMETERIZATIONS, county_program, fit_county_hierarchical, no_pool_estimates
from .gpseries import (
    KINDS as GP_KINDS,
    LATENT_NAME,
    MCF_PER_BOE,
    fit_gp_series,
    forecast_latent,
    gas_capture_from_proportion,
    gp_series_program,
    kernel_for,
    link,
)
from .linear import SLOPE_UNIDENTIFIED, fit_state_linear, predict_state, state_linear_program
from .mixture import (
    K_RANGE,
    MixtureFit,
    fit_gmm,
    gmm_program,
    latent_joint_logpdf,
    marginal_logpdf,
    mu_tilde,
    order_components,
    responsibilities,
)
from .predictive import posterior_predictive
from .records import COUNTY_TABLE, CountyMonthly, CountyRegistry, EntitySeries, StateMonthly
from .scoring import (
    BAND_COLUMNS,
    DEFAULT_BANDS,
    WAIC,
    Band,
    ComparisonRow,
    compare_models,
    percentile_bands,
    waic,
    write_bands_csv,
)
