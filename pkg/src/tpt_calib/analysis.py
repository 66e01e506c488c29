"""Diagnostics: per-dimension sensitivity, dominant dimensions, ablations.

Masking and mean-replacement both renormalize afterwards so features stay on
the unit hypersphere; a replacement that would leave a feature at the zero
vector raises :class:`~tpt_calib.errors.DegenerateInputError` instead of
silently emitting NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adaptation import AdaptConfig, run_dataset
from .errors import ConfigurationError, DegenerateInputError
from .features import (FeatureBundle, PromptState, TextFeatureSet,
                       compute_logits, encode_text, softmax)
from .metrics import DEFAULT_NUM_BINS, CalibrationReport, GeometryDiagnostics
from .objectives import ctpt_term, kld

MODALITIES = ("text", "image")
# zeroed-out rows below this norm are treated as degenerate
_DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class SensitivityProfile:
    """Per-dimension prediction sensitivities and detected dominant dims."""

    text_sensitivity: np.ndarray
    image_sensitivity: np.ndarray
    text_top_k: tuple
    image_top_k: tuple
    tdd: int
    idd: int


def _mask_rows(rows: np.ndarray, dim: int) -> np.ndarray:
    masked = np.array(rows, dtype=np.float64, copy=True)
    masked[..., dim] = 0.0
    norms = np.linalg.norm(masked, axis=-1, keepdims=True)
    if np.any(norms < _DEGENERATE_NORM):
        raise DegenerateInputError(
            f"masking dimension {dim} reduces a feature to the zero vector")
    return masked / norms


def dimension_sensitivity(text: TextFeatureSet, image: np.ndarray, tau: float,
                          modality: str, m: int) -> float:
    """KL divergence of the prediction after zeroing one feature dimension.

    Dimension ``m`` of the chosen modality is set to zero, the feature(s)
    renormalized, and probabilities recomputed; the result is
    ``KLD(p_masked || p_original)``. Zero when the dimension already holds
    zeros in the masked modality.
    """
    if modality not in MODALITIES:
        raise ConfigurationError(f"modality must be one of {MODALITIES}")
    image = np.asarray(image, dtype=np.float64)
    d = text.features.shape[1]
    if not 0 <= m < d:
        raise ConfigurationError(f"dimension {m} out of range for D = {d}")
    q = softmax(compute_logits(text, image, tau))
    if modality == "text":
        masked = TextFeatureSet(features=_mask_rows(text.features, m),
                                pre_norm=text.pre_norm)
        p_m = softmax(compute_logits(masked, image, tau))
    else:
        p_m = softmax(compute_logits(text, _mask_rows(image, m), tau))
    return kld(p_m, q)


def find_dominant(features: np.ndarray) -> int:
    """Index of the dimension with the largest mean absolute value.

    Ties resolve to the lowest index. Magnitude is deliberate: dominant
    dimensions show up with large values of either sign.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return int(np.argmax(np.mean(np.abs(features), axis=0)))


def _top_k(sensitivity: np.ndarray, k: int):
    order = np.argsort(-sensitivity, kind="stable")[:k]
    return tuple((int(i), float(sensitivity[i])) for i in order)


def sensitivity_profile(bundle: FeatureBundle, sample_index: Optional[int] = None,
                        top_k: int = 10) -> SensitivityProfile:
    """Sensitivity of every dimension at the zero-shot state.

    With ``sample_index`` the profile uses that sample's original view; with
    ``None`` sensitivities are averaged over all samples' original views.
    """
    text = encode_text(bundle, PromptState.zeros(bundle.prompt_dim))
    if sample_index is None:
        images = bundle.image_features[:, 0, :]
    else:
        images = bundle.image_features[sample_index:sample_index + 1, 0, :]
    d = bundle.dim_d
    text_sens = np.zeros(d)
    image_sens = np.zeros(d)
    for image in images:
        for m in range(d):
            text_sens[m] += dimension_sensitivity(
                text, image, bundle.temperature, "text", m)
            image_sens[m] += dimension_sensitivity(
                text, image, bundle.temperature, "image", m)
    text_sens /= len(images)
    image_sens /= len(images)
    return SensitivityProfile(
        text_sensitivity=text_sens,
        image_sensitivity=image_sens,
        text_top_k=_top_k(text_sens, top_k),
        image_top_k=_top_k(image_sens, top_k),
        tdd=find_dominant(bundle.base_text_features),
        idd=find_dominant(bundle.image_features.reshape(-1, d)),
    )


def _replace_column_with_mean(rows: np.ndarray, dim: int):
    """Replace one column by its mean; returns (rows, changed?)."""
    if np.all(rows[:, dim] == rows[0, dim]):
        # already constant: replacement is the identity
        return rows, False
    mean = np.mean(rows[:, dim])
    out = np.array(rows, copy=True)
    out[:, dim] = mean
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    if np.any(norms < _DEGENERATE_NORM):
        raise DegenerateInputError(
            f"mean replacement of dimension {dim} zeroed a feature")
    return out / norms, True


def ablate_dominant(bundle: FeatureBundle, target: str) -> FeatureBundle:
    """Bundle with the dominant dimension replaced by its mean value.

    ``target="tdd"`` replaces the text-dominant dimension with its mean over
    classes; ``target="idd"`` replaces the image-dominant dimension with its
    mean over all image rows. Rows are renormalized afterwards. If the
    replacement changes nothing the original bundle is returned unchanged.
    """
    if target not in ("tdd", "idd"):
        raise ConfigurationError("target must be 'tdd' or 'idd'")
    d = bundle.dim_d
    if target == "tdd":
        dim = find_dominant(bundle.base_text_features)
        rows, changed = _replace_column_with_mean(bundle.base_text_features, dim)
        if not changed:
            return bundle
        return FeatureBundle.from_arrays(
            bundle.class_names, bundle.temperature, rows, bundle.jacobians_f32,
            bundle.labels, bundle.image_features_f32, bundle.metadata)
    flat = bundle.image_features.reshape(-1, d)
    dim = find_dominant(flat)
    rows, changed = _replace_column_with_mean(flat, dim)
    if not changed:
        return bundle
    return FeatureBundle.from_arrays(
        bundle.class_names, bundle.temperature, bundle.base_text_features_f32,
        bundle.jacobians_f32, bundle.labels,
        rows.reshape(bundle.image_features.shape), bundle.metadata)


def mean_replace_eval(bundle: FeatureBundle, cfg: AdaptConfig, target: str, *,
                      n_jobs: int = 1,
                      num_bins: int = DEFAULT_NUM_BINS) -> CalibrationReport:
    """Rerun the full pipeline with the dominant dimension mean-replaced."""
    ablated = ablate_dominant(bundle, target)
    _, report = run_dataset(ablated, cfg, n_jobs=n_jobs, num_bins=num_bins)
    return report


def atfd(text: TextFeatureSet) -> float:
    """Average text feature dispersion; same arithmetic as the C-TPT term."""
    return ctpt_term(text)


def geometry_report(bundle: FeatureBundle, text: TextFeatureSet) -> GeometryDiagnostics:
    """Hypersphere diagnostics of a text feature set against the bundle.

    Uses the original (view 0) image features of every sample.
    ``mean_logit_value`` is ``tau * mean_cross_cosine`` by definition.
    """
    view0 = bundle.image_features[:, 0, :]
    cosines = view0 @ text.features.T
    logits = bundle.temperature * cosines
    mean_cross = float(np.mean(cosines))
    return GeometryDiagnostics(
        atfd=atfd(text),
        mean_logit_range=float(np.mean(logits.max(axis=1) - logits.min(axis=1))),
        mean_logit_value=bundle.temperature * mean_cross,
        modality_gap_l2=float(np.linalg.norm(
            view0.mean(axis=0) - text.features.mean(axis=0))),
        mean_cross_cosine=mean_cross,
    )
