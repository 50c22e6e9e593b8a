"""Finite-difference checks of every loss term on a tiny multi-view instance."""
import numpy as np

from .. import numkit as nk
from ..boundary import MARGIN_KINDS, MarginPolicy, common_loss, ucl_loss
from ..evidential import error_loss, euc_loss
from ..graphs import MessageRecord, dataset_from_records
from ..numkit import Tensor, grad_check
from .config import TrainConfig
from .model import UCLModel, edge_indices
from .train import objective


def tiny_dataset(seed, num_nodes=16, num_classes=3, d_in=4):
    """Random 3-view graph instance; every node is a training node."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(num_nodes):
        tok = lambda prefix: [f"{prefix}{k}" for k in rng.choice(5, size=rng.integers(0, 3), replace=False)]
        records.append(MessageRecord(id=i, label=i % num_classes, timestamp=float(rng.uniform(0, 6)),
                                     hashtags=tok("h"), entities=tok("e"), users=tok("u"),
                                     features=rng.standard_normal(d_in).tolist()))
    return dataset_from_records(records, np.arange(num_nodes), [], [], num_classes, require_balanced=False)


def _relu_inputs(model, ds):
    """Every ReLU input of the forward pass, plus the raw embeddings."""
    edges = edge_indices(ds)
    pre, raw = [], []
    with nk.no_grad():
        for v in model.views:
            h = nk.as_tensor(ds.features)
            for layer in model.encoders[v].layers:
                z = h @ layer.W
                out = nk.temporal_aggregate(layer.decay_rates(z), z, edges[v])
                if layer.activation == "relu":
                    pre.append(out.data)
                    out = nk.relu(out)
                h = out
            raw.append(h.data)
            head = model.heads[v]
            pre.append((h @ head.W1 + head.b1).data)
    return pre, raw


def _live_instance(seed, cfg, attempts=100, margin=1e-3):
    """Tiny dataset + model on which the loss is smooth around the probe point.

    A draw is replaced by the next instance in a fixed sequence when a ReLU
    input lies within ``margin`` of its kink (finite differences would
    straddle it) or a node's embedding vanishes (it cannot be normalized).
    """
    for attempt in range(attempts):
        ds = tiny_dataset([seed, attempt] if attempt else seed)
        model = UCLModel(ds.features.shape[1], ds.num_classes, cfg)
        pre, raw = _relu_inputs(model, ds)
        if (min(np.abs(p).min() for p in pre) > margin
                and min(np.linalg.norm(z, axis=1).min() for z in raw) > margin):
            return ds, model
    raise RuntimeError(f"no smooth instance found for seed {seed}")


def _leaf(rng, shape, name):
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def loss_cases(seed):
    """(name, loss_fn, params) triples covering each term and the full objective."""
    rng = np.random.default_rng(seed)
    cases = []

    labels4 = np.array([0, 1, 2, 1])
    raw = _leaf(rng, (4, 5), "z")
    protos = _leaf(rng, (3, 5), "prototypes")
    u, err = rng.uniform(size=3), rng.uniform(size=3)
    for kind in MARGIN_KINDS:
        m = MarginPolicy(kind).margins(3, u, err)
        cases.append((f"ucl[{kind}]",
                      lambda m=m: ucl_loss(nk.normalize_rows(raw), labels4, nk.normalize_rows(protos), m),
                      [raw, protos]))

    alpha = Tensor(1.0 + rng.exponential(2.0, size=(5, 3)), requires_grad=True, name="alpha")
    labels5 = np.array([0, 1, 2, 0, 1])
    cases.append(("error", lambda: error_loss(alpha, labels5), [alpha]))
    preds = np.argmax(alpha.data, axis=1)
    cases.append(("euc", lambda: euc_loss(alpha, labels5, 7, preds=preds), [alpha]))
    probs = alpha.data / alpha.data.sum(axis=1, keepdims=True)
    cases.append(("euc[fixed weights]", lambda: euc_loss(alpha, labels5, 7, preds=preds, probs=probs), [alpha]))

    views = [_leaf(rng, (4, 3), f"h{k}") for k in range(3)]
    cases.append(("common", lambda: common_loss([nk.normalize_rows(v) for v in views]), views))

    for mode in ("learned", "centroid"):
        cfg = TrainConfig(embed_dim=10, edl_hidden=5, gnn_layers=2, prototype_mode=mode, seed=seed)
        ds, model = _live_instance(seed, cfg)
        if mode == "centroid":
            model.bank.refresh(model.infer(ds).embeddings, ds.labels, ds.train_idx, 1)
        batch = np.arange(ds.num_nodes)
        margins = cfg.policy.margins(ds.num_classes, rng.uniform(size=3))
        # the calibration term's confidence weights are constants of the step
        alpha0 = model.infer(ds).alpha[batch]
        probs0 = alpha0 / alpha0.sum(axis=1, keepdims=True)

        def total(model=model, cfg=cfg, ds=ds, batch=batch, margins=margins, probs0=probs0):
            out = model.forward(ds, batch)
            return objective(out, ds.labels[batch], 30, margins, cfg, model.bank, euc_probs=probs0)["total"]

        cases.append((f"total[{mode}]", total, model.parameters()))
    return cases


def run_suite(seed=0, tol=1e-4):
    """Returns a list of (name, GradCheckReport)."""
    return [(name, grad_check(fn, params, tol=tol)) for name, fn, params in loss_cases(seed)]
