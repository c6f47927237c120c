"""Loss machinery for distillation-stabilized training.

The objective is standard cross-entropy plus a weighted KL term that only
looks at the K classes the teacher ranks highest. Restricting the divergence
to the teacher's top-K classes keeps the student aligned with the teacher on
what the (possibly heavily augmented) image still looks like, without forcing
agreement on classes the teacher itself considers irrelevant.

Two readings of the truncated divergence are supported:

* ``renormalize=True`` (default): both distributions are restricted to the
  top-K set and rescaled to sum to one. This is a proper KL divergence, is
  always >= 0, and reduces to the full KL when K equals the class count.
* ``renormalize=False``: the raw-score sum over the top-K set without
  rescaling. Kept as a config option; not a proper divergence.

Temperature is fixed at 1; there is no temperature knob.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KDConfig",
    "PRESET_DESTRUCTION",
    "PRESET_FULL14",
    "softmax",
    "cross_entropy",
    "top_k",
    "truncated_kl",
    "kd_loss",
    "kd_loss_grad",
]


@dataclass(frozen=True)
class KDConfig:
    """Distillation settings: ``lam`` is the KL weight, ``k`` the number of
    teacher-ranked classes kept by the truncated divergence."""

    lam: float
    k: int
    renormalize: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


# Presets used by the bundled experiments: the destruction-space sweep keeps
# only 3 classes at weight 1.0; the 14-operator space uses 5 at 0.5.
PRESET_DESTRUCTION = KDConfig(lam=1.0, k=3)
PRESET_FULL14 = KDConfig(lam=0.5, k=5)


def _as_prob(p, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {arr.shape}")
    return arr


def softmax(logits) -> np.ndarray:
    """Max-subtracted stable softmax over a 1-d logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(student, class_index: int) -> float:
    """Negative log-likelihood of the true class: -ln(student[class_index])."""
    p = _as_prob(student, "student")
    if not 0 <= class_index < p.shape[0]:
        raise ValueError(f"class_index {class_index} out of range for C={p.shape[0]}")
    return float(-np.log(p[class_index]))


def top_k(teacher, k: int) -> np.ndarray:
    """Indices of the k highest teacher scores, descending; ties go to the
    lower index."""
    t = _as_prob(teacher, "teacher")
    if not 1 <= k <= t.shape[0]:
        raise ValueError(f"k must be in [1, {t.shape[0]}], got {k}")
    # stable sort on negated scores keeps lower indices first among ties
    order = np.argsort(-t, kind="stable")
    return order[:k].copy()


def _check_top_set(teacher: np.ndarray, classes: np.ndarray) -> np.ndarray:
    idx = np.asarray(classes, dtype=np.intp).ravel()
    c = teacher.shape[0]
    if idx.size < 1 or idx.size > c:
        raise ValueError(f"top set size {idx.size} out of range for C={c}")
    if np.any(idx < 0) or np.any(idx >= c) or np.unique(idx).size != idx.size:
        raise ValueError("top set must hold distinct class indices in range")
    if idx.size < c:
        kept = np.zeros(c, dtype=bool)
        kept[idx] = True
        if teacher[idx].min() < teacher[~kept].max():
            raise ValueError("top set does not match the teacher's top scores")
    return idx


def truncated_kl(student, teacher, classes, renormalize: bool = True) -> float:
    """KL-style divergence summed over the teacher's top-K classes.

    With ``renormalize`` both distributions are restricted to ``classes`` and
    rescaled to sum to one, giving a proper divergence (>= 0, zero iff the
    restricted distributions coincide). Without it the raw scores are used.
    """
    s = _as_prob(student, "student")
    t = _as_prob(teacher, "teacher")
    if s.shape != t.shape:
        raise ValueError(f"shape mismatch: student {s.shape}, teacher {t.shape}")
    idx = _check_top_set(t, classes)
    ts, ss = t[idx], s[idx]
    if renormalize:
        ts = ts / ts.sum()
        ss = ss / ss.sum()
    return float(np.sum(ts * (np.log(ts) - np.log(ss))))


def kd_loss(student, teacher, class_index: int, cfg: KDConfig) -> float:
    """Cross-entropy plus ``cfg.lam`` times the truncated divergence against
    the teacher's top ``cfg.k`` classes."""
    loss = cross_entropy(student, class_index)
    if cfg.lam > 0.0:
        classes = top_k(teacher, cfg.k)
        loss += cfg.lam * truncated_kl(student, teacher, classes, cfg.renormalize)
    return loss


def kd_loss_grad(student_logits, teacher, class_index: int, cfg: KDConfig) -> np.ndarray:
    """Exact gradient of kd_loss(softmax(logits), ...) w.r.t. the logits.

    The teacher scores and the top-K set are constants. Derivation, with
    p = softmax(logits), S the top-K set, mask its indicator:

    * cross-entropy term: p - onehot.
    * renormalized KL: restricted student Shat_j = p_j / sum_S p; the term's
      gradient is mask * (Shat - That) where That is the restricted teacher.
    * raw KL: gradient is (sum_S t) * p - mask * t.
    """
    z = np.asarray(student_logits, dtype=np.float64)
    t = _as_prob(teacher, "teacher")
    if z.shape != t.shape:
        raise ValueError(f"shape mismatch: logits {z.shape}, teacher {t.shape}")
    c = z.shape[0]
    if not 0 <= class_index < c:
        raise ValueError(f"class_index {class_index} out of range for C={c}")
    p = softmax(z)
    grad = p.copy()
    grad[class_index] -= 1.0
    if cfg.lam > 0.0:
        idx = top_k(t, cfg.k)
        mask = np.zeros(c, dtype=bool)
        mask[idx] = True
        if cfg.renormalize:
            kl_grad = np.zeros(c)
            kl_grad[idx] = p[idx] / p[idx].sum() - t[idx] / t[idx].sum()
        else:
            kl_grad = t[idx].sum() * p
            kl_grad[idx] -= t[idx]
        grad += cfg.lam * kl_grad
    return grad
