"""Feature bundles and the linearized text encoder.

A :class:`FeatureBundle` is a frozen snapshot of everything the lab needs to
run prompt adaptation without a neural network: unit-norm class text features,
the jacobian of each pre-normalization text feature with respect to the prompt
displacement, and per-sample augmented image features. Bundles keep two views
of every array: the float32 values as stored on disk (the round-trip truth)
and float64 copies, renormalized once at load time, used for all arithmetic.

The text encoder is a first-order surrogate: for a prompt displacement ``p``
the class feature is ``normalize(t0_c + J_c @ p)``, which reproduces the
stored features exactly at ``p = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, ValidationError

UNIT_NORM_TOL = 1e-4


def _as_f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32)


def _renormalize_rows(rows: np.ndarray) -> np.ndarray:
    """Return float64 copies of ``rows`` scaled to exact unit L2 norm."""
    out = np.asarray(rows, dtype=np.float64).copy()
    norms = np.linalg.norm(out, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValidationError("cannot renormalize a zero feature row")
    out /= norms
    return out


@dataclass(frozen=True)
class Sample:
    """One test sample: its label and the (N, D) unit-norm view features.

    View 0 is the unaugmented original; views 1..N-1 are augmentations.
    """

    label: int
    image_features: np.ndarray


@dataclass(frozen=True)
class FeatureBundle:
    """Immutable dataset snapshot shared by every stage of the pipeline.

    Attributes
    ----------
    class_names : tuple of str
        C nonempty names, aligned with text feature rows.
    temperature : float
        Logit scale tau > 0.
    base_text_features : ndarray, shape (C, D)
        Unit-norm float64 text features at the initial prompt.
    jacobians : ndarray, shape (C, D, P)
        Sensitivity of each pre-normalization text feature to the prompt.
    labels : ndarray, shape (S,)
        True class index per sample.
    image_features : ndarray, shape (S, N, D)
        Unit-norm float64 view features; view 0 is the original image.
    metadata : tuple of str
        Free-form lines carried in the file's name table after the class
        names (exporters record augmentation parameters here).
    """

    class_names: tuple
    temperature: float
    base_text_features: np.ndarray
    jacobians: np.ndarray
    labels: np.ndarray
    image_features: np.ndarray
    metadata: tuple = ()
    # float32 storage views, kept verbatim so write(read(file)) is bit-exact
    base_text_features_f32: np.ndarray = field(repr=False, default=None)
    jacobians_f32: np.ndarray = field(repr=False, default=None)
    image_features_f32: np.ndarray = field(repr=False, default=None)

    @property
    def dim_d(self) -> int:
        return self.base_text_features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.base_text_features.shape[0]

    @property
    def prompt_dim(self) -> int:
        return self.jacobians.shape[2]

    @property
    def num_samples(self) -> int:
        return self.image_features.shape[0]

    @property
    def views_per_sample(self) -> int:
        return self.image_features.shape[1]

    def sample(self, index: int) -> Sample:
        return Sample(int(self.labels[index]), self.image_features[index])

    @classmethod
    def from_arrays(cls, class_names, temperature, base_text_features,
                    jacobians, labels, image_features, metadata=()):
        """Build a validated bundle from raw arrays.

        Inputs of any float dtype are quantized to float32 first (the storage
        truth), then promoted to float64 and feature rows renormalized, so a
        bundle constructed in memory is indistinguishable from one read back
        from disk.
        """
        base32 = _as_f32(base_text_features)
        jac32 = _as_f32(jacobians)
        img32 = _as_f32(image_features)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        bundle = cls(
            class_names=tuple(str(n) for n in class_names),
            temperature=float(np.float32(temperature)),
            base_text_features=_renormalize_rows(base32),
            jacobians=np.asarray(jac32, dtype=np.float64),
            labels=labels,
            image_features=_renormalize_rows(img32),
            metadata=tuple(str(m) for m in metadata),
            base_text_features_f32=base32,
            jacobians_f32=jac32,
            image_features_f32=img32,
        )
        validate_bundle(bundle)
        return bundle


def validate_bundle(bundle: FeatureBundle) -> None:
    """Check every bundle invariant; raise :class:`ValidationError` on failure.

    Norms are checked on the float32 storage values (in float64 arithmetic)
    against the 1e-4 tolerance; the compute arrays are renormalized and exact
    by construction.
    """
    base32 = bundle.base_text_features_f32
    jac32 = bundle.jacobians_f32
    img32 = bundle.image_features_f32
    if base32.ndim != 2 or jac32.ndim != 3 or img32.ndim != 3:
        raise ValidationError("bundle arrays have wrong rank")
    c, d = base32.shape
    p = jac32.shape[2]
    s, n = img32.shape[0], img32.shape[1]
    if min(c, d, p, s, n) < 1:
        raise ValidationError("all bundle dimensions must be >= 1")
    if jac32.shape[:2] != (c, d):
        raise ValidationError(
            f"jacobians shape {jac32.shape} does not match (C, D) = {(c, d)}")
    if img32.shape[2] != d:
        raise ValidationError(
            f"image feature dimensionality {img32.shape[2]} != D = {d}")
    if len(bundle.class_names) != c:
        raise ValidationError(
            f"expected {c} class names, got {len(bundle.class_names)}")
    if any(not name for name in bundle.class_names):
        raise ValidationError("class names must be nonempty")
    if not (bundle.temperature > 0):
        raise ValidationError("temperature must be positive")
    for name, arr in (("base_text_features", base32),
                      ("jacobians", jac32),
                      ("image_features", img32)):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} contains non-finite values")
    if bundle.labels.shape != (s,):
        raise ValidationError("labels must have one entry per sample")
    if np.any(bundle.labels < 0) or np.any(bundle.labels >= c):
        raise ValidationError("labels must lie in [0, C)")
    for name, rows in (("base_text_features", base32),
                       ("image_features", img32.reshape(-1, d))):
        norms = np.linalg.norm(np.asarray(rows, dtype=np.float64), axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > UNIT_NORM_TOL:
            raise ValidationError(
                f"{name} rows deviate from unit norm by {worst:.3e} "
                f"(tolerance {UNIT_NORM_TOL:.0e})")


@dataclass
class PromptState:
    """Prompt displacement plus AdamW moments; reset to zero between samples."""

    p: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, prompt_dim: int) -> "PromptState":
        return cls(
            p=np.zeros(prompt_dim, dtype=np.float64),
            first_moment=np.zeros(prompt_dim, dtype=np.float64),
            second_moment=np.zeros(prompt_dim, dtype=np.float64),
            step_count=0,
        )

    def reset(self) -> None:
        self.p[:] = 0.0
        self.first_moment[:] = 0.0
        self.second_moment[:] = 0.0
        self.step_count = 0


@dataclass(frozen=True)
class TextFeatureSet:
    """Normalized class text features plus the pre-normalization values.

    ``pre_norm`` is retained so gradients can be propagated back through the
    normalization.
    """

    features: np.ndarray
    pre_norm: np.ndarray


def encode_text(bundle: FeatureBundle, prompt: PromptState) -> TextFeatureSet:
    """Map a prompt displacement to unit-norm class text features.

    Computes ``normalize(t0_c + J_c @ p)`` per class. At ``p = 0`` this
    returns the bundle's base text features unchanged.

    Raises
    ------
    ConfigurationError
        If the prompt length does not match the jacobians' P.
    DegenerateInputError
        If some pre-normalization feature collapses to the zero vector.
    """
    p = np.asarray(prompt.p, dtype=np.float64)
    if p.shape != (bundle.prompt_dim,):
        raise ConfigurationError(
            f"prompt has length {p.shape}, jacobians expect P = {bundle.prompt_dim}")
    if not np.any(p):
        # base rows are already exactly unit norm; skip the (lossy) renormalize
        return TextFeatureSet(features=bundle.base_text_features,
                              pre_norm=bundle.base_text_features.copy())
    pre = bundle.base_text_features + bundle.jacobians @ p
    norms = np.linalg.norm(pre, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("a text feature collapsed to zero norm")
    return TextFeatureSet(features=pre / norms, pre_norm=pre)


def encode_text_vjp(bundle: FeatureBundle, prompt: PromptState,
                    upstream: np.ndarray, text: TextFeatureSet = None) -> np.ndarray:
    """Pull a (C, D) cotangent on the normalized features back to the prompt.

    For each class the normalize jacobian is ``(I - f f^T) / |pre|``, so the
    pre-normalization cotangent is ``(u - (u . f) f) / |pre|``; contracting
    with the prompt jacobians gives the P-vector gradient. Radial components
    of ``upstream`` are projected out, so ``upstream = features`` maps to 0.

    Pass ``text`` to reuse an existing forward pass.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if text is None:
        text = encode_text(bundle, prompt)
    if upstream.shape != text.features.shape:
        raise ConfigurationError(
            f"upstream shape {upstream.shape} != features shape {text.features.shape}")
    if not np.all(np.isfinite(upstream)):
        raise ValidationError("upstream cotangent contains non-finite values")
    f = text.features
    norms = np.linalg.norm(text.pre_norm, axis=1, keepdims=True)
    radial = np.sum(upstream * f, axis=1, keepdims=True)
    d_pre = (upstream - radial * f) / norms
    return np.einsum("cdp,cd->p", bundle.jacobians, d_pre)


def compute_logits(text: TextFeatureSet, image: np.ndarray, tau: float) -> np.ndarray:
    """Scaled cosine similarities ``tau * <t_c, v>`` of image against each class.

    ``image`` may be a single (D,) vector or an (N, D) batch of views; both
    sides are unit norm, so the cosine reduces to a dot product and every
    logit lies in [-tau, tau].
    """
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ValidationError("image feature contains non-finite values")
    return float(tau) * (image @ text.features.T)


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValidationError("softmax input contains non-finite values")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)
