"""Evidential classification heads, subjective-logic opinions and their fusion.

An opinion over C classes is a belief vector b plus an uncertainty mass u
with sum(b) + u = 1. It is in one-to-one correspondence with a Dirichlet
parameter vector: alpha = evidence + 1, S = sum(alpha), b = evidence / S,
u = C / S.

The batched helpers (:func:`masses_from_evidence`, :func:`combine_masses`,
:func:`masses_to_alpha`) are written against the operator protocol shared
by numpy arrays and :class:`~uclsed.numkit.Tensor`, so the same code runs
inside the training graph and in plain inference.
"""
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .encoder import glorot
from .numkit import Tensor

SUM_TOL = 1e-9
CONFLICT_GUARD = 1e-12
LOG_CLAMP = 1e-12
ANNEAL_EPOCHS = 25


class FusionDegenerate(ArithmeticError):
    """Two opinions are in (numerically) total conflict."""

    def __init__(self, message, rows=None, pair=None):
        super().__init__(message)
        self.rows = rows
        self.pair = pair


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


@dataclass(frozen=True)
class Opinion:
    beliefs: np.ndarray
    uncertainty: float

    def __post_init__(self):
        b = np.asarray(self.beliefs, dtype=np.float64)
        object.__setattr__(self, "beliefs", b)
        object.__setattr__(self, "uncertainty", float(self.uncertainty))
        if b.ndim != 1:
            raise ValueError("beliefs must be a vector")
        if (b < 0).any() or self.uncertainty < 0:
            raise ValueError(f"negative mass in opinion {b}, u={self.uncertainty}")
        total = b.sum() + self.uncertainty
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"opinion masses sum to {total!r}, not 1")

    @property
    def class_count(self):
        return len(self.beliefs)

    @classmethod
    def vacuous(cls, num_classes):
        return cls(np.zeros(num_classes), 1.0)


def evidence_to_opinion(evidence):
    e = np.asarray(evidence, dtype=np.float64)
    if (e < 0).any():
        raise ValueError(f"evidence must be nonnegative, got {e}")
    s = e.sum() + len(e)
    return Opinion(e / s, len(e) / s)


def opinion_to_alpha(m):
    if m.uncertainty <= 0:
        raise ValueError("opinion with zero uncertainty has infinite evidence")
    s = m.class_count / m.uncertainty
    return m.beliefs * s + 1.0


# ---------------------------------------------------------------------------
# batched masses: b is (B, C), u is (B, 1)


def masses_from_evidence(evidence):
    c = evidence.shape[-1]
    s = evidence.sum(axis=1, keepdims=True) + c
    return evidence / s, c / s


def combine_masses(b1, u1, b2, u2):
    """Dempster's rule for a batch of opinion pairs."""
    conflict = b1.sum(axis=1, keepdims=True) * b2.sum(axis=1, keepdims=True) - (b1 * b2).sum(axis=1, keepdims=True)
    bad = np.flatnonzero(_data(conflict).reshape(-1) >= 1.0 - CONFLICT_GUARD)
    if len(bad):
        raise FusionDegenerate(f"total conflict between opinions in rows {bad.tolist()}", rows=bad)
    norm = 1.0 - conflict
    b = (b1 * b2 + b1 * u2 + b2 * u1) / norm
    u = (u1 * u2) / norm
    return b, u


def fuse_masses(masses):
    """Left fold of Dempster's rule over a list of (b, u) pairs."""
    b, u = masses[0]
    for k, (b2, u2) in enumerate(masses[1:], start=1):
        try:
            b, u = combine_masses(b, u, b2, u2)
        except FusionDegenerate as exc:
            raise FusionDegenerate(f"fusing view {k} into views 0..{k - 1}: {exc}",
                                   rows=exc.rows, pair=(k - 1, k)) from None
    return b, u


def masses_to_alpha(b, u):
    c = _data(b).shape[-1]
    return b * (c / u) + 1.0


def dempster_combine(m1, m2):
    if m1.class_count != m2.class_count:
        raise ValueError("opinions over different numbers of classes")
    b, u = combine_masses(m1.beliefs[None], np.array([[m1.uncertainty]]),
                          m2.beliefs[None], np.array([[m2.uncertainty]]))
    return _clean_opinion(b[0], u[0, 0])


def _clean_opinion(b, u):
    # renormalise away the last-ulp drift of the rational formula
    b = np.maximum(b, 0.0)
    total = b.sum() + u
    return Opinion(b / total, u / total)


def combine_views(opinions):
    if not opinions:
        raise ValueError("need at least one opinion")
    c = opinions[0].class_count
    if any(m.class_count != c for m in opinions):
        raise ValueError("opinions over different numbers of classes")
    out = opinions[0]
    for k, m in enumerate(opinions[1:], start=1):
        try:
            out = dempster_combine(out, m)
        except FusionDegenerate as exc:
            raise FusionDegenerate(f"views 0..{k - 1} conflict totally with view {k}: {exc}",
                                   pair=(k - 1, k)) from None
    return out


def predict(beliefs):
    """argmax of beliefs, ties to the lowest class index."""
    return np.argmax(_data(beliefs), axis=1)


# ---------------------------------------------------------------------------
# losses on Dirichlet parameters (Tensor (B, C))


def one_hot(labels, num_classes):
    y = np.zeros((len(labels), num_classes))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def error_loss(alpha, labels):
    """Expected cross-entropy under Dir(alpha): mean_i [psi(S_i) - psi(alpha_{i,y_i})]."""
    alpha = nk.as_tensor(alpha)
    if alpha.ndim == 1:
        alpha = nk.reshape(alpha, (1, -1))
    labels = np.atleast_1d(np.asarray(labels))
    if (alpha.data < 1.0 - 1e-12).any():
        raise ValueError("Dirichlet parameters must be >= 1")
    y = one_hot(labels, alpha.shape[1])
    s = alpha.sum(axis=1, keepdims=True)
    per_sample = (y * (nk.t_digamma(s) - nk.t_digamma(alpha))).sum(axis=1)
    return per_sample.mean()


def kl_to_uniform(alpha):
    """KL(Dir(alpha) || Dir(1, ..., 1)) per row."""
    alpha = nk.as_tensor(alpha)
    c = alpha.shape[1]
    s = alpha.sum(axis=1, keepdims=True)
    log_norm = nk.t_lgamma(s).sum(axis=1) - nk.t_lgamma(alpha).sum(axis=1) - nk.lgamma(float(c))
    cross = ((alpha - 1.0) * (nk.t_digamma(alpha) - nk.t_digamma(s))).sum(axis=1)
    return log_norm + cross


def annealing(epoch):
    return min(1.0, epoch / ANNEAL_EPOCHS)


def euc_loss(alpha, labels, epoch, preds=None, reduction="mean", probs=None):
    """Uncertainty calibration loss.

    Correct predictions are pushed towards low uncertainty, weighted by their
    top class probability; wrong predictions have their misleading evidence
    pulled towards the uniform Dirichlet. ``reduction`` is "mean" or "sum"
    over the batch.

    ``probs`` (B, C) supplies the expected probabilities as constants, so the
    top-probability factor acts as a fixed weight and only S is pushed. When
    omitted, alpha / S is used and differentiated through.
    """
    alpha = nk.as_tensor(alpha)
    labels = np.asarray(labels)
    b, c = alpha.shape
    if preds is None:
        preds = np.argmax(alpha.data, axis=1)
    correct = (np.asarray(preds) == labels).astype(np.float64)
    s = alpha.sum(axis=1, keepdims=True)
    if probs is None:
        p_max = nk.reduce_max(alpha / s, axis=1)
    else:
        p_max = np.max(_data(probs), axis=1)
    certainty = nk.clamp_min(1.0 - nk.reshape(c / s, (-1,)), LOG_CLAMP)
    accurate = -(correct * p_max * nk.log(certainty)).sum()
    total = accurate
    wrong = np.flatnonzero(correct == 0)
    if len(wrong):
        y = one_hot(labels[wrong], c)
        alpha_tilde = y + (1.0 - y) * alpha[wrong]
        total = total + kl_to_uniform(alpha_tilde).sum()
    if reduction == "mean":
        total = total * (1.0 / b)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total * annealing(epoch)


# ---------------------------------------------------------------------------
# heads and class uncertainty


class EdlHead:
    """Two affine layers with ReLU between; softplus turns logits into evidence."""

    def __init__(self, d_in, hidden, num_classes, rng=None, name="head"):
        rng = rng or np.random.default_rng(0)
        self.W1 = Tensor(glorot(rng, d_in, hidden, np.sqrt(2.0)), requires_grad=True, name=f"{name}.W1")
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True, name=f"{name}.b1")
        self.W2 = Tensor(glorot(rng, hidden, num_classes), requires_grad=True, name=f"{name}.W2")
        self.b2 = Tensor(np.zeros(num_classes), requires_grad=True, name=f"{name}.b2")

    def parameters(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def __call__(self, z):
        hidden = nk.relu(z @ self.W1 + self.b1)
        return nk.softplus(hidden @ self.W2 + self.b2)


@dataclass
class UncertaintyTable:
    values: np.ndarray
    epoch: int = 0

    @classmethod
    def initial(cls, num_classes, eps=1e-3):
        return cls(np.full(num_classes, 1.0 - eps), 0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if ((self.values < 0) | (self.values > 1)).any():
            raise ValueError(f"class uncertainty outside [0, 1]: {self.values}")


def update_class_uncertainty(sample_u, labels, num_classes, epoch=0):
    """Per-class mean of fused sample uncertainty."""
    sample_u = np.asarray(sample_u, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        raise ValueError(f"classes without samples: {np.flatnonzero(counts == 0).tolist()}")
    sums = np.bincount(labels, weights=sample_u, minlength=num_classes)
    return UncertaintyTable(np.clip(sums / counts, 0.0, 1.0), epoch)


def sample_uncertainty(model, dataset, indices=None):
    """Fused uncertainty of each requested node under the current parameters."""
    out = model.infer(dataset)
    u = out.uncertainty
    return u if indices is None else u[np.asarray(indices)]
