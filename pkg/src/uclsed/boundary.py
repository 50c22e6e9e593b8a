"""Prototype banks and representation losses (PSC family, UCL, common-view loss)."""
import logging
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .numkit import Tensor

log = logging.getLogger(__name__)

NORM_TOL = 1e-6
MARGIN_KINDS = ("none", "fixed", "error_rate", "uncertainty")


@dataclass
class MarginPolicy:
    """Per-class additive margin inside the prototype contrastive loss.

    none -> 0 (plain PSC), fixed -> ``margin``, error_rate -> ``scale * err_c``,
    uncertainty -> ``beta * u_c``.
    """

    kind: str = "uncertainty"
    beta: float = 0.1
    margin: float = 0.1
    scale: float = 0.1

    def __post_init__(self):
        if self.kind not in MARGIN_KINDS:
            raise ValueError(f"unknown margin policy {self.kind!r}; expected one of {MARGIN_KINDS}")
        if min(self.beta, self.margin, self.scale) < 0:
            raise ValueError("margin parameters must be nonnegative")

    def margins(self, num_classes, uncertainty=None, error_rates=None):
        if self.kind == "none":
            return np.zeros(num_classes)
        if self.kind == "fixed":
            return np.full(num_classes, float(self.margin))
        if self.kind == "error_rate":
            if error_rates is None:
                raise ValueError("error_rate policy needs per-class error rates")
            return self.scale * np.asarray(error_rates, dtype=np.float64)
        if uncertainty is None:
            raise ValueError("uncertainty policy needs the class uncertainty table")
        return self.beta * np.asarray(uncertainty, dtype=np.float64)


def ucl_loss(z, labels, prototypes, margins=None, tau=1.0):
    """Batch mean of log(1 + sum_{c != y} exp(margin_y + (s_c - s_y) / tau)).

    ``z`` must hold unit rows; ``s_c`` is the dot product with prototype c.
    With zero margins this is the prototype supervised contrastive loss.
    """
    z, prototypes = nk.as_tensor(z), nk.as_tensor(prototypes)
    labels = np.asarray(labels)
    c = prototypes.shape[0]
    if labels.size and (labels.max() >= c or labels.min() < 0):
        raise ValueError(f"label outside [0, {c})")
    norms = np.linalg.norm(z.data, axis=1)
    if np.abs(norms - 1.0).max(initial=0.0) > NORM_TOL:
        raise ValueError("ucl_loss expects L2-normalized embeddings")
    margins = np.zeros(c) if margins is None else np.asarray(margins, dtype=np.float64)
    y = np.zeros((len(labels), c))
    y[np.arange(len(labels)), labels] = 1.0
    sims = z @ prototypes.T
    s_true = (sims * y).sum(axis=1, keepdims=True)
    logits = ((sims - s_true) * (1.0 / tau) + margins[labels][:, None]) * (1.0 - y)
    # the true-class column is exactly 0, which supplies the "1 +" term
    return nk.logsumexp(logits, axis=1).mean()


def common_loss(views, normalization="mean"):
    """Sum over view pairs of the squared difference of the cosine-similarity matrices.

    ``views`` are L2-normalized batch embeddings with matching rows.
    ``normalization="mean"`` averages over matrix entries, "sum" keeps the
    raw squared Frobenius norm.
    """
    views = [nk.as_tensor(v) for v in views]
    n = views[0].shape[0]
    if any(v.shape[0] != n for v in views):
        raise ValueError(f"batch sizes differ across views: {[v.shape[0] for v in views]}")
    sims = [v @ v.T for v in views]
    total = None
    for i in range(len(sims)):
        for j in range(i + 1, len(sims)):
            d = sims[i] - sims[j]
            term = (d * d).sum()
            if normalization == "mean":
                term = term * (1.0 / (n * n))
            elif normalization != "sum":
                raise ValueError(f"unknown normalization {normalization!r}")
            total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def error_rate_table(preds, labels, indices, num_classes):
    preds, labels = np.asarray(preds)[indices], np.asarray(labels)[indices]
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        raise ValueError(f"classes without training samples: {np.flatnonzero(counts == 0).tolist()}")
    wrong = np.bincount(labels, weights=(preds != labels).astype(float), minlength=num_classes)
    return wrong / counts


def update_centroids(embeddings, labels, indices, num_classes, previous=None):
    """Unit-normalized class means of (already normalized) embeddings.

    A class whose mean vanishes keeps its row from ``previous`` and logs a
    warning; without a previous bank that is an error.
    """
    emb = np.asarray(embeddings, dtype=np.float64)[indices]
    labels = np.asarray(labels)[indices]
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        raise ValueError(f"classes without training samples: {np.flatnonzero(counts == 0).tolist()}")
    sums = np.zeros((num_classes, emb.shape[1]))
    np.add.at(sums, labels, emb)
    means = sums / counts[:, None]
    norms = np.linalg.norm(means, axis=1)
    out = np.empty_like(means)
    for k in range(num_classes):
        if norms[k] < 1e-12:
            if previous is None:
                raise ValueError(f"class {k} has a zero mean embedding and no previous centroid")
            log.warning("class %d has a zero mean embedding; keeping its previous centroid", k)
            out[k] = previous[k]
        else:
            out[k] = means[k] / norms[k]
    return out


class PrototypeBank:
    """Per-view C x d prototypes: free parameters ("learned") or epoch centroids ("centroid")."""

    def __init__(self, views, num_classes, dim, mode="centroid", rng=None):
        if mode not in ("learned", "centroid"):
            raise ValueError(f"unknown prototype mode {mode!r}")
        rng = rng or np.random.default_rng(0)
        self.mode = mode
        self.epoch = 0
        self.protos = {}
        for v in views:
            init = rng.standard_normal((num_classes, dim))
            init /= np.linalg.norm(init, axis=1, keepdims=True)
            self.protos[v] = Tensor(init, requires_grad=(mode == "learned"), name=f"proto.{v}")

    def parameters(self):
        return list(self.protos.values()) if self.mode == "learned" else []

    def __getitem__(self, view):
        return self.protos[view]

    def renormalize(self):
        for p in self.protos.values():
            p.data[...] = p.data / np.linalg.norm(p.data, axis=1, keepdims=True)

    def refresh(self, embeddings, labels, indices, epoch):
        """Centroid mode: replace every view's rows with current class centroids."""
        if self.mode != "centroid":
            raise RuntimeError("refresh() only applies to centroid-mode banks")
        for v, emb in embeddings.items():
            prev = self.protos[v].data
            self.protos[v] = Tensor(update_centroids(emb, labels, indices, prev.shape[0], prev),
                                    name=f"proto.{v}")
        self.epoch = epoch
