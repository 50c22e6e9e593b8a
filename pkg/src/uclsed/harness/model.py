"""Multi-view model: temporal GNN encoder(s), per-view EDL heads, prototype bank."""
import json
import os
from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..boundary import PrototypeBank
from ..encoder import EdgeIndex, ViewEncoder, encode
from ..evidential import (EdlHead, FusionDegenerate, UncertaintyTable, fuse_masses, masses_from_evidence,
                          masses_to_alpha, predict)
from ..graphs import VIEWS
from .config import TrainConfig


def edge_indices(dataset):
    cache = getattr(dataset, "_edge_cache", None)
    if cache is None:
        cache = {v: EdgeIndex(g) for v, g in dataset.graphs.items()}
        dataset._edge_cache = cache
    return cache


@dataclass
class Inference:
    embeddings: dict  # view -> (N, d) unit rows
    view_uncertainty: dict  # view -> (N,)
    beliefs: np.ndarray
    uncertainty: np.ndarray
    alpha: np.ndarray
    preds: np.ndarray


class UCLModel:
    def __init__(self, d_in, num_classes, config=None, views=VIEWS):
        self.config = config or TrainConfig()
        cfg = self.config
        self.views = tuple(views)
        self.num_classes = num_classes
        self.d_in = d_in
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        dims = (cfg.embed_dim,) * cfg.gnn_layers
        if cfg.share_encoder:
            shared = ViewEncoder(d_in, dims, rng, name="encoder")
            self.encoders = {v: shared for v in self.views}
        else:
            self.encoders = {v: ViewEncoder(d_in, dims, rng, name=f"encoder_{v}") for v in self.views}
        self.heads = {v: EdlHead(cfg.embed_dim, cfg.edl_hidden, num_classes, rng, name=f"head_{v}")
                      for v in self.views}
        self.bank = PrototypeBank(self.views, num_classes, cfg.embed_dim, cfg.prototype_mode, rng)

    def parameters(self):
        seen, out = set(), []
        groups = [e.parameters() for e in self.encoders.values()]
        groups += [h.parameters() for h in self.heads.values()]
        groups.append(self.bank.parameters())
        for group in groups:
            for p in group:
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def forward(self, dataset, batch):
        """Differentiable pass over the full graphs, restricted to ``batch`` rows."""
        edges = edge_indices(dataset)
        out = {"z": {}, "unit": {}, "evidence": {}, "masses": {}}
        for v in self.views:
            z = encode(edges[v], dataset.features, self.encoders[v])[batch]
            e = self.heads[v](z)
            out["z"][v] = z
            out["unit"][v] = nk.normalize_rows(z)
            out["evidence"][v] = e
            out["masses"][v] = masses_from_evidence(e)
        try:
            b, u = fuse_masses([out["masses"][v] for v in self.views])
        except FusionDegenerate as exc:
            ids = np.asarray(batch)[exc.rows].tolist() if exc.rows is not None else []
            raise FusionDegenerate(f"{exc} (sample ids {ids})", rows=exc.rows, pair=exc.pair) from None
        out["beliefs"], out["uncertainty"] = b, u
        out["alpha"] = masses_to_alpha(b, u)
        return out

    def infer(self, dataset):
        with nk.no_grad():
            out = self.forward(dataset, np.arange(dataset.num_nodes))
        beliefs = out["beliefs"].data
        return Inference(
            embeddings={v: t.data for v, t in out["unit"].items()},
            view_uncertainty={v: m[1].data.reshape(-1) for v, m in out["masses"].items()},
            beliefs=beliefs,
            uncertainty=out["uncertainty"].data.reshape(-1),
            alpha=out["alpha"].data,
            preds=predict(beliefs),
        )

    # -- persistence ------------------------------------------------------

    def state(self):
        arrays = {p.name: p.data.copy() for p in self.parameters()}
        for v, p in self.bank.protos.items():
            arrays[p.name] = p.data.copy()
        return arrays

    def load_state(self, arrays):
        for p in self.parameters():
            p.data[...] = arrays[p.name]
        for v, p in self.bank.protos.items():
            p.data = np.array(arrays[p.name], dtype=np.float64)


def save_checkpoint(directory, model, table, extra=None):
    os.makedirs(directory, exist_ok=True)
    np.savez(os.path.join(directory, "model.npz"), **model.state())
    meta = {
        "config": model.config.to_dict(),
        "d_in": model.d_in,
        "num_classes": model.num_classes,
        "views": list(model.views),
        "class_uncertainty": table.values.tolist(),
        "table_epoch": table.epoch,
        "bank_epoch": model.bank.epoch,
    }
    meta.update(extra or {})
    with open(os.path.join(directory, "checkpoint.json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def load_checkpoint(directory):
    meta_path = os.path.join(directory, "checkpoint.json")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"no checkpoint.json in {directory}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    cfg = TrainConfig.from_dict(meta["config"])
    model = UCLModel(meta["d_in"], meta["num_classes"], cfg, meta["views"])
    with np.load(os.path.join(directory, "model.npz")) as z:
        model.load_state({k: z[k] for k in z.files})
    model.bank.epoch = meta.get("bank_epoch", 0)
    table = UncertaintyTable(np.array(meta["class_uncertainty"]), meta.get("table_epoch", 0))
    return model, table, meta
