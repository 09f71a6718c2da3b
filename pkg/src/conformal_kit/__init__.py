"""Distribution-free prediction sets: split conformal calibration, RCPS
calibration with Hoeffding bounds, evaluation diagnostics and synthetic
worlds for checking the guarantees."""

from .calibrate import calibrate, conformal_quantile, quantile_index
from .core import (
    CalibrationArtifact,
    Dataset,
    DegenerateScaleError,
    Density,
    Interval,
    Labels,
    LabelSpace,
    Mask,
    MonotonicityError,
    PixelScores,
    PointScale,
    QuantilePair,
    RiskCurve,
    ScoreRecord,
    Softmax,
    ValidationError,
)
from .evaluation import (
    CoverageReport,
    RiskReport,
    SizeReport,
    coverage,
    coverage_over_splits,
    fsc,
    risk_over_splits,
    size_report,
    ssc,
)
from .rcps import (
    LossTable,
    build_loss_table,
    fnr_loss_table,
    hoeffding_ucb,
    loss_fnr,
    loss_miscoverage,
    risk_curve,
    select_lambda,
)
from .scores import (
    score_aps,
    score_bayes,
    score_cqr,
    score_lac,
    score_scalar,
    set_aps,
    set_bayes,
    set_cqr,
    set_lac,
    set_scalar,
)
from .synth import WorldSpec, fit_linear_quantile, oracle_aps_set, sample, sample_dataset, true_risk

__version__ = "0.1.0"
