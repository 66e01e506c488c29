"""Loss functions for the four tuning methods, with exact prompt gradients.

All gradients are assembled by hand in reverse mode: entropy / KL terms are
differentiated through the softmax, the logit cotangent is pushed onto the
text features, and :func:`~tpt_calib.features.encode_text_vjp` carries it
back through the normalization and the prompt jacobians. A closed-form
single-view entropy gradient is provided as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericDomainError
from .features import (FeatureBundle, PromptState, TextFeatureSet,
                       compute_logits, encode_text, encode_text_vjp, softmax)

METHODS = ("tpt", "ctpt", "otpt", "dtpt")

# probabilities are clamped to this floor inside every log
PROB_FLOOR = 1e-30


def _safe_log(x: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(x, PROB_FLOOR))


def entropy(prob: np.ndarray) -> float:
    """Shannon entropy (nats) of a probability vector; 0*log(0) counts as 0.

    Raises :class:`NumericDomainError` on negative entries.
    """
    prob = np.asarray(prob, dtype=np.float64)
    if np.any(prob < 0):
        raise NumericDomainError("entropy requires nonnegative probabilities")
    terms = np.where(prob > 0, prob * _safe_log(prob), 0.0)
    return float(-np.sum(terms))


def kld(p: np.ndarray, q: np.ndarray) -> float:
    """Kullback-Leibler divergence ``sum p * log(p / q)`` in nats.

    ``q`` must be strictly positive wherever ``p`` is; a support violation
    raises :class:`NumericDomainError`.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(p < 0) or np.any(q < 0):
        raise NumericDomainError("kld requires nonnegative inputs")
    mask = p > 0
    if np.any(q[mask] == 0.0):
        raise NumericDomainError("kld support violation: q = 0 where p > 0")
    terms = p[mask] * (_safe_log(p[mask]) - _safe_log(q[mask]))
    return max(float(np.sum(terms)), 0.0)


def select_confident_views(view_entropies: np.ndarray, rho: float) -> np.ndarray:
    """Indices of the ``ceil(rho * N)`` lowest-entropy views, ties by index."""
    n = len(view_entropies)
    if not 0.0 < rho <= 1.0:
        raise ConfigurationError(f"rho must lie in (0, 1], got {rho}")
    k = min(n, math.ceil(rho * n))
    order = np.argsort(view_entropies, kind="stable")
    return np.sort(order[:k])


def tpt_loss(probs: np.ndarray, rho: float, per_view: bool = False):
    """Entropy objective over the confident subset of augmented views.

    The ``ceil(rho * N)`` lowest-entropy rows are selected; by default the
    loss is the entropy of their averaged distribution. With
    ``per_view=True`` it is the mean of their individual entropies instead.

    Returns
    -------
    (float, ndarray)
        Loss value and the selected view indices (sorted ascending).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ConfigurationError("probs must be a nonempty (N, C) matrix")
    view_entropies = np.array([entropy(row) for row in probs])
    selected = select_confident_views(view_entropies, rho)
    if per_view:
        loss = float(np.mean(view_entropies[selected]))
    else:
        loss = entropy(probs[selected].mean(axis=0))
    return loss, selected


def dem_loss(text: TextFeatureSet) -> float:
    """Mean KL divergence of each feature's softmax-over-dimensions from uniform.

    Zero exactly when every feature row is a constant vector; pushing it down
    spreads mass away from dominant dimensions.
    """
    feats = text.features
    d = feats.shape[1]
    uniform = np.full(d, 1.0 / d)
    vals = [kld(softmax(row), uniform) for row in feats]
    return float(np.mean(vals))


def ctpt_term(text: TextFeatureSet) -> float:
    """Average distance of the class text features from their centroid (ATFD)."""
    feats = text.features
    centroid = feats.mean(axis=0)
    return float(np.mean(np.linalg.norm(feats - centroid, axis=1)))


def otpt_term(text: TextFeatureSet) -> float:
    """Squared Frobenius distance of the text Gram matrix from the identity."""
    feats = text.features
    gram = feats @ feats.T
    gram = gram - np.eye(feats.shape[0])
    return float(np.sum(gram * gram))


@dataclass(frozen=True)
class LossBreakdown:
    """One evaluation of a composite objective at a given prompt state."""

    tpt_term: float
    reg_term: float
    total: float
    selected_view_indices: tuple
    grad_p: np.ndarray


def _entropy_grad_wrt_probs(prob: np.ndarray) -> np.ndarray:
    # dH/dp_c for H = -sum p log p
    return -(_safe_log(prob) + 1.0)


def _softmax_vjp(prob: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # rows of prob/upstream: d softmax / d logits pulled back per row
    inner = np.sum(upstream * prob, axis=-1, keepdims=True)
    return prob * (upstream - inner)


def _dem_grad(feats: np.ndarray) -> np.ndarray:
    s = softmax(feats)
    log_s = _safe_log(s)
    mean_log = np.sum(s * log_s, axis=1, keepdims=True)
    return s * (log_s - mean_log) / feats.shape[0]


def _ctpt_grad(feats: np.ndarray) -> np.ndarray:
    c = feats.shape[0]
    resid = feats - feats.mean(axis=0)
    norms = np.linalg.norm(resid, axis=1, keepdims=True)
    # subgradient 0 for rows sitting exactly on the centroid
    units = np.divide(resid, norms, out=np.zeros_like(resid), where=norms > 0)
    return (units - units.mean(axis=0)) / c


def _otpt_grad(feats: np.ndarray) -> np.ndarray:
    gram = feats @ feats.T
    gram = gram - np.eye(feats.shape[0])
    return 4.0 * gram @ feats


def composite_loss(method: str, bundle: FeatureBundle, prompt: PromptState,
                   views: np.ndarray, lam: float = 1e5, rho: float = 0.1, *,
                   ctpt_literal_sign: bool = False,
                   per_view_entropy: bool = False) -> LossBreakdown:
    """Evaluate a method's total loss and its exact gradient wrt the prompt.

    Parameters
    ----------
    method : {"tpt", "ctpt", "otpt", "dtpt"}
    views : ndarray, shape (N, D)
        Unit-norm image features of the sample's augmented views.
    lam : float
        Regularizer weight; ignored for plain TPT. Must be >= 0 for
        dtpt/otpt. For ctpt the dispersion term is *subtracted* by default
        (the regularizer rewards dispersion); pass ``ctpt_literal_sign=True``
        to add it instead.
    rho : float
        Confident-view selection fraction in (0, 1].
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
    if method in ("dtpt", "otpt") and lam < 0:
        raise ConfigurationError(f"lambda must be nonnegative for {method}")

    text = encode_text(bundle, prompt)
    views = np.atleast_2d(np.asarray(views, dtype=np.float64))
    logits = compute_logits(text, views, bundle.temperature)
    probs = softmax(logits)

    view_entropies = np.array([entropy(row) for row in probs])
    selected = select_confident_views(view_entropies, rho)
    k = len(selected)

    d_probs = np.zeros_like(probs)
    if per_view_entropy:
        tpt_term = float(np.mean(view_entropies[selected]))
        d_probs[selected] = _entropy_grad_wrt_probs(probs[selected]) / k
    else:
        avg = probs[selected].mean(axis=0)
        tpt_term = entropy(avg)
        d_probs[selected] = _entropy_grad_wrt_probs(avg) / k

    d_logits = _softmax_vjp(probs, d_probs)
    d_feats = bundle.temperature * (d_logits.T @ views)

    if method == "tpt":
        reg_term = 0.0
        total = tpt_term
    else:
        if method == "dtpt":
            reg_term = dem_loss(text)
            reg_grad = _dem_grad(text.features)
            sign = 1.0
        elif method == "ctpt":
            reg_term = ctpt_term(text)
            reg_grad = _ctpt_grad(text.features)
            sign = 1.0 if ctpt_literal_sign else -1.0
        else:
            reg_term = otpt_term(text)
            reg_grad = _otpt_grad(text.features)
            sign = 1.0
        total = tpt_term + lam * (sign * reg_term)
        if lam != 0.0:
            d_feats = d_feats + (lam * sign) * reg_grad

    grad_p = encode_text_vjp(bundle, prompt, d_feats, text=text)
    return LossBreakdown(
        tpt_term=tpt_term,
        reg_term=reg_term,
        total=total,
        selected_view_indices=tuple(int(i) for i in selected),
        grad_p=grad_p,
    )


def logit_prompt_jacobian(bundle: FeatureBundle, prompt: PromptState,
                          image: np.ndarray) -> np.ndarray:
    """Forward-mode jacobian dz_c/dp of single-view logits, shape (C, P).

    Built from the explicit normalize jacobian ``(I - f f^T)/|pre|`` per
    class; deliberately a separate code path from the reverse-mode chain so
    it can serve as an oracle.
    """
    text = encode_text(bundle, prompt)
    image = np.asarray(image, dtype=np.float64)
    c, d = text.features.shape
    jac = np.empty((c, bundle.prompt_dim))
    eye = np.eye(d)
    for i in range(c):
        f = text.features[i]
        norm = np.linalg.norm(text.pre_norm[i])
        d_feat = (eye - np.outer(f, f)) / norm
        jac[i] = bundle.temperature * (image @ d_feat) @ bundle.jacobians[i]
    return jac


def tpt_gradient_closed_form(probs: np.ndarray, logit_jacobian: np.ndarray) -> np.ndarray:
    """Closed-form gradient of single-view prediction entropy wrt the prompt.

    Uses the full entropy-through-softmax derivative including cross-class
    terms, ``dH/dz_c = -p_c (log p_c + H(p))``, contracted with the supplied
    (C, P) logit jacobian.
    """
    probs = np.asarray(probs, dtype=np.float64)
    h = entropy(probs)
    d_logits = -probs * (_safe_log(probs) + h)
    return d_logits @ np.asarray(logit_jacobian, dtype=np.float64)
