"""Shared test fixtures and independent oracle implementations.

Oracles here are deliberately written in plain Python loops, separate from
the package's vectorized code paths, so they can vouch for it.
"""

import math

import numpy as np

from tpt_calib.features import FeatureBundle, PromptState


def random_bundle(rng, d=4, c=3, p=2, s=2, n=2, tau=5.0):
    """Small random bundle; rows are drawn standard normal and normalized."""
    base = rng.standard_normal((c, d))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    jac = rng.standard_normal((c, d, p))
    labels = rng.integers(0, c, size=s)
    imgs = rng.standard_normal((s, n, d))
    imgs /= np.linalg.norm(imgs, axis=2, keepdims=True)
    names = [f"c{i}" for i in range(c)]
    return FeatureBundle.from_arrays(names, tau, base, jac, labels, imgs)


def prompt_at(vec):
    """PromptState holding the given displacement (moments zero)."""
    vec = np.asarray(vec, dtype=np.float64)
    state = PromptState.zeros(len(vec))
    state.p[:] = vec
    return state


def fd_gradient(f, p0, h=1e-6):
    """Central finite differences of a scalar function of a P-vector."""
    p0 = np.asarray(p0, dtype=np.float64)
    grad = np.zeros_like(p0)
    for i in range(len(p0)):
        hi = p0.copy()
        lo = p0.copy()
        hi[i] += h
        lo[i] -= h
        grad[i] = (f(hi) - f(lo)) / (2.0 * h)
    return grad


def rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(np.linalg.norm(want), 1e-12)
    return float(np.linalg.norm(got - want) / denom)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# brute-force calibration metric oracles (pure python)


def _width_bin(conf, num_bins):
    # largest k with k/num_bins <= conf, capped at the last bin
    k = 0
    for j in range(num_bins + 1):
        if conf >= j / num_bins:
            k = j
    return min(k, num_bins - 1)


def oracle_ece(confs, corrects, num_bins):
    groups = {}
    for conf, corr in zip(confs, corrects):
        groups.setdefault(_width_bin(conf, num_bins), []).append((conf, corr))
    total = len(confs)
    value = 0.0
    for members in groups.values():
        mean_conf = sum(c for c, _ in members) / len(members)
        mean_acc = sum(1.0 if r else 0.0 for _, r in members) / len(members)
        value += len(members) / total * abs(mean_conf - mean_acc)
    return value


def oracle_mce(confs, corrects, num_bins):
    groups = {}
    for conf, corr in zip(confs, corrects):
        groups.setdefault(_width_bin(conf, num_bins), []).append((conf, corr))
    worst = 0.0
    for members in groups.values():
        mean_conf = sum(c for c, _ in members) / len(members)
        mean_acc = sum(1.0 if r else 0.0 for _, r in members) / len(members)
        worst = max(worst, abs(mean_conf - mean_acc))
    return worst


def oracle_aece(confs, corrects, num_bins):
    order = sorted(range(len(confs)), key=lambda i: confs[i])
    total = len(confs)
    base, extra = divmod(total, num_bins)
    value = 0.0
    start = 0
    for b in range(num_bins):
        size = base + (1 if b < extra else 0)
        members = order[start:start + size]
        start += size
        if not members:
            continue
        mean_conf = sum(confs[i] for i in members) / len(members)
        mean_acc = sum(1.0 if corrects[i] else 0.0 for i in members) / len(members)
        value += len(members) / total * abs(mean_conf - mean_acc)
    return value


def oracle_aurc(confs, corrects, sample_ids=None):
    if sample_ids is None:
        sample_ids = list(range(len(confs)))
    order = sorted(range(len(confs)), key=lambda i: (-confs[i], sample_ids[i]))
    errors = 0
    total = 0.0
    for k, i in enumerate(order, start=1):
        if not corrects[i]:
            errors += 1
        total += errors / k
    return total / len(confs)


def oracle_adamw(p0, grads, lr, beta1, beta2, eps, weight_decay):
    """Reference AdamW trajectory, scalar loops, float64."""
    p = [float(x) for x in p0]
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    out = []
    for t, grad in enumerate(grads, start=1):
        new_p = []
        for j in range(len(p)):
            g = float(grad[j])
            m[j] = beta1 * m[j] + (1.0 - beta1) * g
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g
            m_hat = m[j] / (1.0 - beta1 ** t)
            v_hat = v[j] / (1.0 - beta2 ** t)
            x = p[j] - lr * (m_hat / (math.sqrt(v_hat) + eps))
            if weight_decay != 0.0:
                x = x - lr * weight_decay * p[j]
            new_p.append(x)
        p = new_p
        out.append(list(p))
    return out
