"""reviewlab: social learning from consumer reviews.

Simulation library for review-driven markets where sequential consumers learn
a product's latent quality from past reviews, under both fixed and
Markov-switching quality, plus the measurement side: losses, regret,
posterior-concentration bound audits, and discounted-estimator tuning.
"""

from .distributions import DistributionSpec, Marginal, parse_distribution
from .dynamics import (
    DynamicsSpec,
    LearnerSpec,
    RoundRecord,
    Trace,
    purchase_times,
    quality_step,
    simulate_run,
    write_trace_csv,
)
from .errors import ConfigError, ReviewLabError, UnsupportedModelError
from .gkernel import Additive1DKernel, MCKernel, MonteCarlo, Quadrature, eval_G, make_kernel
from .harness import (
    ExperimentConfig,
    ResultRow,
    ResultTable,
    binary_gaussian_model,
    build_config,
    interval_gaussian_model,
    load_config,
    parse_config_text,
    rate_fit,
    reproduce_eta1_table,
    run_monte_carlo,
    sweep_eta,
)
from .learners import (
    EstimatorState,
    PosteriorGrid,
    QualityEstimate,
    bayes_update_dynamic,
    bayes_update_stationary,
    estimator_observe,
    imperfect_update,
    posterior_mean,
    psi_invert,
)
from .lockstep import run_binary_batch, run_tracking_batch
from .metrics import (
    Blocks,
    MetricsReport,
    SeparationStats,
    anti_concentration_ratio,
    block_decompose,
    bridge_bound,
    build_metrics_report,
    delta_gamma,
    loss_LT,
    loss_series,
    make_psi_bar_mc,
    regret,
    stationary_bound_curve,
    tau_times,
    tau_times_trace,
)
from .model import (
    NO_PURCHASE,
    ConsumerDraw,
    FeedbackSpec,
    ModelSpec,
    QualitySpace,
    RewardSpec,
    buy_decision,
    buyer_fraction,
    feedback_eval,
    sample_consumer,
    validate_model,
)

__version__ = "0.1.0"
