"""surveyblend: integrate probability and nonprobability survey samples.

Estimates finite-population means by correcting the selection bias of
nonprobability (opt-in) samples with pseudo-maximum-likelihood inverse
propensity weighting, correcting measurement-error bias either from held-out
survey pairs or with a boosted predictive response model, and combining the
sources through an unbiased precision-weighted composite whose mean squared
error is provably below the classical biased composite. A Monte Carlo
simulator generates populations with known truth and verifies every analytic
claim at desk scale.
"""

from .samples import (
    OVERALL,
    BenchmarkTable,
    CovariateSchema,
    CovariateVector,
    EstimateTable,
    MeanEstimate,
    NonprobabilitySample,
    ProbabilitySample,
    SubgroupKey,
    encode_covariates,
    validate_sample,
)
from .propensity import (
    ConvergenceError,
    PropensityFit,
    SeparationError,
    SingularHessianError,
    fit_propensity,
    logistic_propensity,
    pseudo_log_likelihood,
)
from .estimators import (
    PredictedProbabilities,
    ResponseColumn,
    bias_corrected_ipw,
    bootstrap_variance,
    design_weighted_mean,
    ipw_estimate_table,
    ipw_mean,
    model_assisted_ipw,
    ps_estimate_table,
)
from .composite import (
    CompositeInputs,
    CompositeResult,
    comb_composite,
    compose_tables,
    ev_composite,
    m_comb_composite,
    m_ev_composite,
    mse_comb,
    mse_ev,
)
from .benchmark import (
    BiasMatrix,
    MaeReport,
    abs_diff_table,
    apply_bias_correction,
    estimate_bias,
    mae,
)
from .response_model import (
    BoostedModel,
    GBMConfig,
    StackedTrainingSet,
    auc_score,
    build_training_set,
    cross_validate,
    evaluate_classifier,
    fit_gbm,
    predict_for_sample,
    predict_probability,
)
from .simulate import (
    BogusSpec,
    FactorSpec,
    Population,
    PopulationSpec,
    QuestionSpec,
    StratifiedDesign,
    default_population_spec,
    draw_nonprobability_sample,
    draw_probability_sample,
    gaussian_composite_mc,
    generate_population,
    inject_bogus_responses,
    monte_carlo,
    rare_benefit_incidence,
    sample_size_sweep,
    weight_segment_subsample,
)

__version__ = "0.1.0"
