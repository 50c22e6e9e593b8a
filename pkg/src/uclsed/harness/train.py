"""Training loop: per-batch total objective, per-epoch uncertainty refresh, model selection."""
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..boundary import common_loss, error_rate_table, ucl_loss
from ..evidential import UncertaintyTable, annealing, error_loss, euc_loss, masses_to_alpha, update_class_uncertainty
from .config import TrainConfig
from .metrics import evaluate
from .model import UCLModel

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _euc(alpha, labels, epoch, config, probs=None):
    if probs is None and not config.euc_confidence_grad:
        a = alpha.data
        probs = a / a.sum(axis=1, keepdims=True)
    return euc_loss(alpha, labels, epoch, reduction=config.euc_reduction, probs=probs)


def objective(out, labels, epoch, margins, config, prototypes, euc_probs=None):
    """All loss terms of one batch plus their weighted total (Tensors).

    ``euc_probs`` pins the confidence weights of the fused calibration term
    (used by gradient checks, which must hold them fixed while probing).
    """
    terms = {"error": error_loss(out["alpha"], labels)}
    if config.apply_edl_per_view:
        for v, (b, u) in out["masses"].items():
            terms["error"] = terms["error"] + error_loss(masses_to_alpha(b, u), labels)
    if config.error_only:
        terms["total"] = terms["error"]
        return terms

    terms["euc"] = _euc(out["alpha"], labels, epoch, config, euc_probs)
    if config.apply_edl_per_view:
        for v, (b, u) in out["masses"].items():
            terms["euc"] = terms["euc"] + _euc(masses_to_alpha(b, u), labels, epoch, config)
    ucl_sum = None
    for v, unit in out["unit"].items():
        t = ucl_loss(unit, labels, prototypes[v], margins, tau=config.tau)
        terms[f"ucl_{v}"] = t
        ucl_sum = t if ucl_sum is None else ucl_sum + t
    terms["ucl"] = ucl_sum
    terms["common"] = common_loss(list(out["unit"].values()), config.common_normalization)
    terms["total"] = (terms["error"] + config.effective_lambda1 * terms["euc"]
                      + config.lambda2 * terms["ucl"] + config.lambda3 * terms["common"])
    return terms


@dataclass
class TrainResult:
    model: UCLModel
    table: UncertaintyTable
    history: list
    best_epoch: int
    best_val_acc: float
    steps: list = field(default_factory=list)


def _check_finite(terms, epoch, step):
    for name, t in terms.items():
        if not np.isfinite(t.data).all():
            raise TrainingDiverged(f"loss term {name!r} is not finite at epoch {epoch}, step {step}")


def train(dataset, config=None, log_path=None, record_steps=False, progress=None):
    """Fit a model on ``dataset.train_idx``; returns the best-validation-accuracy snapshot."""
    config = config or TrainConfig()
    config.validate()
    c = dataset.num_classes
    labels = dataset.labels
    train_idx = np.asarray(dataset.train_idx)
    model = UCLModel(dataset.features.shape[1], c, config)
    opt = Adam(model.parameters(), config.learning_rate, (config.adam_beta1, config.adam_beta2), config.adam_eps)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    policy = config.policy

    table = UncertaintyTable.initial(c, config.eps)
    error_rates = np.full(c, 1.0 - config.eps)
    inference = model.infer(dataset) if config.prototype_mode == "centroid" else None

    history, steps = [], []
    best = None
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            if config.prototype_mode == "centroid":
                model.bank.refresh(inference.embeddings, labels, train_idx, epoch)
            margins = policy.margins(c, table.values, error_rates)
            order = shuffle_rng.permutation(train_idx)
            sums, n_seen = {}, 0
            for step, start in enumerate(range(0, len(order), config.batch_size)):
                batch = order[start:start + config.batch_size]
                opt.zero_grad()
                out = model.forward(dataset, batch)
                terms = objective(out, labels[batch], epoch, margins, config, model.bank)
                _check_finite(terms, epoch, step)
                terms["total"].backward()
                opt.step()
                if config.prototype_mode == "learned":
                    model.bank.renormalize()
                values = {k: float(t.data) for k, t in terms.items()}
                if record_steps:
                    steps.append({"epoch": epoch, "step": step, "margins": margins.tolist(), **values})
                for k, val in values.items():
                    sums[k] = sums.get(k, 0.0) + val * len(batch)
                n_seen += len(batch)

            inference = model.infer(dataset)
            table = update_class_uncertainty(inference.uncertainty[train_idx], labels[train_idx], c, epoch)
            error_rates = error_rate_table(inference.preds, labels, train_idx, c)
            val = evaluate(model, dataset, "val", table, inference)
            row = {"epoch": epoch, "lambda_e": annealing(epoch)}
            row.update({f"loss_{k}": v / n_seen for k, v in sums.items()})
            row.update({
                "train_acc": float(np.mean(inference.preds[train_idx] == labels[train_idx])),
                "val_acc": val.accuracy,
                "val_macro_f1": val.macro_f1,
                "mean_class_uncertainty": float(table.values.mean()),
                "class_uncertainty": table.values.tolist(),
                "seconds": round(time.perf_counter() - t0, 3),
            })
            history.append(row)
            if log_fh:
                log_fh.write(json.dumps({k: v for k, v in row.items() if k != "seconds"}) + "\n")
                log_fh.flush()
            if progress:
                progress(row)
            if best is None or val.accuracy > best[1]:
                best = (epoch, val.accuracy, model.state(), table, model.bank.epoch)
    finally:
        if log_fh:
            log_fh.close()

    epoch, acc, state, best_table, bank_epoch = best
    model.load_state(state)
    model.bank.epoch = bank_epoch
    return TrainResult(model, best_table, history, epoch, acc, steps)
