"""Test-time prompt tuning calibration lab on precomputed feature bundles."""

__version__ = "0.1.0"

from .adaptation import (AdaptConfig, PredictionRecord, PromptTuner,
                         adamw_step, adapt_sample, run_dataset)
from .analysis import (SensitivityProfile, ablate_dominant, atfd,
                       dimension_sensitivity, find_dominant, geometry_report,
                       mean_replace_eval, sensitivity_profile)
from .errors import (ConfigurationError, DegenerateInputError, FormatError,
                     NumericDomainError, TptCalibError, ValidationError)
from .features import (FeatureBundle, PromptState, TextFeatureSet,
                       compute_logits, encode_text, encode_text_vjp, softmax,
                       validate_bundle)
from .io import (SynthSpec, read_bundle, read_predictions, reliability_csv,
                 reliability_svg, synth_bundle, write_bundle,
                 write_predictions, write_report)
from .metrics import (BinStat, CalibrationReport, GeometryDiagnostics,
                      accuracy, aece, aurc, compute_report, ece, mce,
                      reliability_data)
from .objectives import (LossBreakdown, composite_loss, ctpt_term, dem_loss,
                         entropy, kld, logit_prompt_jacobian, otpt_term,
                         tpt_gradient_closed_form, tpt_loss)

__all__ = [
    "AdaptConfig", "BinStat", "CalibrationReport", "ConfigurationError",
    "DegenerateInputError", "FeatureBundle", "FormatError",
    "GeometryDiagnostics", "LossBreakdown", "NumericDomainError",
    "PredictionRecord", "PromptState", "PromptTuner", "SensitivityProfile",
    "SynthSpec", "TextFeatureSet", "TptCalibError", "ValidationError",
    "ablate_dominant", "accuracy", "adamw_step", "adapt_sample", "aece",
    "atfd", "aurc", "composite_loss", "compute_logits", "compute_report",
    "ctpt_term", "dem_loss", "dimension_sensitivity", "ece", "encode_text",
    "encode_text_vjp", "entropy", "find_dominant", "geometry_report", "kld",
    "logit_prompt_jacobian", "mce", "mean_replace_eval", "otpt_term",
    "read_bundle", "read_predictions", "reliability_csv", "reliability_data",
    "reliability_svg", "run_dataset", "sensitivity_profile", "softmax",
    "synth_bundle", "tpt_gradient_closed_form", "tpt_loss", "validate_bundle",
    "write_bundle", "write_predictions", "write_report",
]
