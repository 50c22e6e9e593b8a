"""Message graphs per view, synthetic long-tail datasets, and dataset I/O.

Three views connect messages that share a hashtag, a named entity or a
user. Every node carries a self-loop so that isolated messages still
aggregate their own features in the encoder.
"""
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

VIEWS = ("hashtag", "entity", "user")
_ATTR = {"hashtag": "hashtags", "entity": "entities", "user": "users"}
_TOKEN_PREFIX = {"hashtag": "#", "entity": "ent:", "user": "@"}


class DatasetError(ValueError):
    pass


class InfeasibleConfig(DatasetError):
    pass


@dataclass
class MessageRecord:
    id: int
    label: int
    timestamp: float
    hashtags: list = field(default_factory=list)
    entities: list = field(default_factory=list)
    users: list = field(default_factory=list)
    features: list = field(default_factory=list)

    def tokens(self, view):
        return getattr(self, _ATTR[view])

    def to_json(self):
        d = dataclasses.asdict(self)
        d["features"] = [float(x) for x in self.features]
        return d


@dataclass
class ViewGraph:
    view: str
    node_count: int
    indptr: np.ndarray
    indices: np.ndarray
    timestamps: np.ndarray

    def adjacency(self):
        n = self.node_count
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def edges(self):
        """(rows, cols) of every stored entry, self-loops included, row-sorted."""
        rows = np.repeat(np.arange(self.node_count), np.diff(self.indptr))
        return rows, self.indices.copy()

    def degree(self):
        return np.diff(self.indptr)

    def permuted(self, perm):
        """Graph on relabelled nodes where new node k is old node perm[k]."""
        a = self.adjacency()[perm][:, perm].tocsr()
        a.sort_indices()
        return ViewGraph(self.view, self.node_count, a.indptr.astype(np.int64),
                         a.indices.astype(np.int64), self.timestamps[perm])


def _csr_graph(view, adj, timestamps):
    adj = sp.csr_matrix(adj)
    adj.setdiag(1.0)
    adj.data[:] = 1.0
    adj.eliminate_zeros()
    adj.sort_indices()
    return ViewGraph(view, adj.shape[0], adj.indptr.astype(np.int64),
                     adj.indices.astype(np.int64), np.asarray(timestamps, dtype=np.float64))


def _token_incidence(token_lists):
    vocab = {}
    rows, cols = [], []
    for i, toks in enumerate(token_lists):
        for t in set(toks):
            rows.append(i)
            cols.append(vocab.setdefault(t, len(vocab)))
    inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(token_lists), max(len(vocab), 1)))
    return inc


def _graph_from_tokens(view, token_lists, timestamps):
    inc = _token_incidence(token_lists)
    return _csr_graph(view, inc @ inc.T, timestamps)


def build_view_graph(records, view):
    """Connect two messages iff they share at least one token of ``view``."""
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")
    if not records:
        raise DatasetError("cannot build a graph from zero records")
    return _graph_from_tokens(view, [r.tokens(view) for r in records],
                              [r.timestamp for r in records])


def edge_quality(graph, labels):
    """Fraction of undirected non-self-loop edges joining same-label nodes.

    Returns None when the graph has no such edges (the ratio is undefined).
    """
    labels = np.asarray(labels)
    if len(labels) != graph.node_count:
        raise DatasetError(f"labels has length {len(labels)}, graph has {graph.node_count} nodes")
    upper = sp.triu(graph.adjacency(), k=1).tocoo()
    if upper.nnz == 0:
        return None
    return float(np.mean(labels[upper.row] == labels[upper.col]))


# ---------------------------------------------------------------------------
# synthetic long-tail data


@dataclass
class SyntheticConfig:
    classes: int = 10
    n_max: int = 200
    gamma: float = 0.6
    d_in: int = 32
    mean_sep: float = 1.0
    q_hashtag: float = 0.9
    q_entity: float = 0.7
    q_user: float = 0.85
    time_delta_days: float = 3.0
    time_jitter_days: float = 1.0
    val_per_class: int = 20
    test_per_class: int = 30
    seed: int = 0
    tokens_per_message: int = 2
    messages_per_token: float = 8.0
    min_train_per_class: int = 1
    q_tolerance: float = 0.05

    def target_quality(self, view):
        return getattr(self, f"q_{view}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DatasetError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    # long-tail recipe of the 7-class crisis dataset with its per-view edge quality
    "crisislex7": dict(classes=7, n_max=989, gamma=0.5, q_hashtag=0.8778, q_entity=0.9257, q_user=0.8707),
    "desk": dict(classes=10, n_max=200, gamma=0.6, q_hashtag=0.9, q_entity=0.7, q_user=0.85),
}


def long_tail_sizes(n_max, gamma, classes):
    # Python's round() is half-to-even: 989 * 0.5 = 494.5 -> 494
    return [int(round(n_max * gamma ** i)) for i in range(classes)]


@dataclass
class SplitDataset:
    records: list
    graphs: dict
    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def num_nodes(self):
        return len(self.labels)

    def split(self, name):
        return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]

    def validate(self, require_balanced=True):
        sets = [set(map(int, s)) for s in (self.train_idx, self.val_idx, self.test_idx)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise DatasetError("train/val/test index sets overlap")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DatasetError("label outside [0, num_classes)")
        counts = np.bincount(self.labels[self.train_idx], minlength=self.num_classes)
        if (counts == 0).any():
            raise DatasetError(f"classes without training samples: {np.flatnonzero(counts == 0).tolist()}")
        if require_balanced:
            for name, idx in (("val", self.val_idx), ("test", self.test_idx)):
                c = np.bincount(self.labels[idx], minlength=self.num_classes)
                if len(idx) and c.min() != c.max():
                    raise DatasetError(f"{name} split is not class-balanced: {c.tolist()}")
        for v, g in self.graphs.items():
            if g.node_count != self.num_nodes:
                raise DatasetError(f"{v} graph has {g.node_count} nodes, dataset has {self.num_nodes}")
        return self


def _assign_tokens(rng, labels, class_sizes, cfg, view):
    """Per-message token lists whose co-occurrence graph has the target edge quality.

    Each of ``tokens_per_message`` slots holds either a token from the
    message's class-specific signal pool or a token from a pool shared by all
    classes. The noise probability is found by bisection on the realized
    edge quality, with the random draws held fixed across candidates so the
    search is over a deterministic function.
    """
    n = len(labels)
    k = cfg.tokens_per_message
    m = cfg.messages_per_token
    signal_pool = np.maximum(1, np.round(np.asarray(class_sizes) * k / m)).astype(int)
    noise_pool = max(1, int(round(n * k / m)))
    u = rng.random((n, k))
    sig = np.floor(rng.random((n, k)) * signal_pool[labels][:, None]).astype(int)
    noi = rng.integers(0, noise_pool, size=(n, k))
    prefix = _TOKEN_PREFIX[view]

    def tokens_at(rate):
        out = []
        for i in range(n):
            toks = []
            for s in range(k):
                t = f"{prefix}n{noi[i, s]}" if u[i, s] < rate else f"{prefix}c{labels[i]}_{sig[i, s]}"
                if t not in toks:
                    toks.append(t)
            out.append(toks)
        return out

    def quality(rate):
        g = _graph_from_tokens(view, tokens_at(rate), np.zeros(n))
        q = edge_quality(g, labels)
        return 1.0 if q is None else q

    target = cfg.target_quality(view)
    if not 0.0 < target <= 1.0:
        raise InfeasibleConfig(f"q_{view}={target} outside (0, 1]")
    if target >= 1.0:
        return tokens_at(0.0), 1.0
    q_hi = quality(1.0)
    if q_hi > target + cfg.q_tolerance:
        raise InfeasibleConfig(
            f"q_{view}={target} unreachable: even all-shared tokens give quality {q_hi:.3f}")
    lo, hi, q_lo = 0.0, 1.0, 1.0
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        q = quality(mid)
        if q >= target:
            lo, q_lo = mid, q
        else:
            hi, q_hi = mid, q
        if hi - lo < 1e-4:
            break
    rate, q = (lo, q_lo) if abs(q_lo - target) <= abs(q_hi - target) else (hi, q_hi)
    if abs(q - target) > cfg.q_tolerance:
        raise InfeasibleConfig(f"q_{view}={target} not reachable within ±{cfg.q_tolerance} (best {q:.3f})")
    return tokens_at(rate), q


def generate_synthetic(config=None, seed=None):
    """Long-tail multi-view dataset: imbalanced train split, balanced val/test."""
    cfg = config or SyntheticConfig()
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if cfg.classes < 2:
        raise InfeasibleConfig("need at least 2 classes")
    if not 0.0 < cfg.gamma <= 1.0:
        raise InfeasibleConfig(f"gamma={cfg.gamma} outside (0, 1]")
    train_sizes = long_tail_sizes(cfg.n_max, cfg.gamma, cfg.classes)
    if min(train_sizes) < cfg.min_train_per_class:
        raise InfeasibleConfig(f"smallest class has {min(train_sizes)} training messages "
                               f"(< {cfg.min_train_per_class})")
    extra = cfg.val_per_class + cfg.test_per_class
    if cfg.n_max < extra:
        raise InfeasibleConfig(f"n_max={cfg.n_max} smaller than the per-class val+test draw {extra}")

    ss = np.random.SeedSequence(cfg.seed)
    feat_rng, time_rng, perm_rng, *view_rngs = [np.random.default_rng(s) for s in ss.spawn(3 + len(VIEWS))]

    totals = [n + extra for n in train_sizes]
    labels = np.repeat(np.arange(cfg.classes), totals)
    # position of each message within its class: train first, then val, then test
    rank = np.concatenate([np.arange(t) for t in totals])
    split_of = np.where(rank < np.repeat(train_sizes, totals), 0,
                        np.where(rank < np.repeat(np.asarray(train_sizes) + cfg.val_per_class, totals), 1, 2))

    perm = perm_rng.permutation(len(labels))
    labels, split_of = labels[perm], split_of[perm]
    n = len(labels)

    directions = feat_rng.standard_normal((cfg.classes, cfg.d_in))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    features = cfg.mean_sep * directions[labels] + feat_rng.standard_normal((n, cfg.d_in))
    timestamps = labels * cfg.time_delta_days + cfg.time_jitter_days * time_rng.standard_normal(n)

    tokens, realized = {}, {}
    for view, rng in zip(VIEWS, view_rngs):
        tokens[view], realized[view] = _assign_tokens(rng, labels, totals, cfg, view)

    records = [
        MessageRecord(id=i, label=int(labels[i]), timestamp=float(timestamps[i]),
                      hashtags=tokens["hashtag"][i], entities=tokens["entity"][i],
                      users=tokens["user"][i], features=features[i].tolist())
        for i in range(n)
    ]
    graphs = {v: build_view_graph(records, v) for v in VIEWS}
    ds = SplitDataset(
        records=records, graphs=graphs, features=features, labels=labels, timestamps=timestamps,
        train_idx=np.flatnonzero(split_of == 0), val_idx=np.flatnonzero(split_of == 1),
        test_idx=np.flatnonzero(split_of == 2), num_classes=cfg.classes,
        meta={"synthetic": dataclasses.asdict(cfg), "train_sizes": train_sizes,
              "edge_quality": realized},
    )
    return ds.validate()


# ---------------------------------------------------------------------------
# I/O

_REQUIRED = ("id", "label", "timestamp", "features")


def load_jsonl(path):
    """Parse one MessageRecord per line; missing token arrays read as empty."""
    records, seen, dim = [], set(), None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in _REQUIRED if k not in obj]
            if missing:
                raise DatasetError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            feats = obj["features"]
            if dim is None:
                dim = len(feats)
            elif len(feats) != dim:
                raise DatasetError(f"{path}:{lineno}: feature dimension {len(feats)}, expected {dim}")
            rid = int(obj["id"])
            if rid in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {rid}")
            seen.add(rid)
            records.append(MessageRecord(
                id=rid, label=int(obj["label"]), timestamp=float(obj["timestamp"]),
                hashtags=list(obj.get("hashtags") or []), entities=list(obj.get("entities") or []),
                users=list(obj.get("users") or []), features=[float(x) for x in feats]))
    return records


def write_jsonl(records, path):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def dataset_from_records(records, train_idx, val_idx, test_idx, num_classes=None, meta=None,
                         graphs=None, require_balanced=True):
    labels = np.array([r.label for r in records], dtype=np.int64)
    timestamps = np.array([r.timestamp for r in records], dtype=np.float64)
    features = np.array([r.features for r in records], dtype=np.float64)
    num_classes = int(num_classes if num_classes is not None else labels.max() + 1)
    if graphs is None:
        graphs = {v: build_view_graph(records, v) for v in VIEWS}
    ds = SplitDataset(records, graphs, features, labels, timestamps,
                      np.asarray(train_idx, dtype=np.int64), np.asarray(val_idx, dtype=np.int64),
                      np.asarray(test_idx, dtype=np.int64), num_classes, meta or {})
    return ds.validate(require_balanced=require_balanced)


def save_bundle(ds, directory):
    """records.jsonl + splits.json + graphs.npz (cache of the built graphs)."""
    os.makedirs(directory, exist_ok=True)
    write_jsonl(ds.records, os.path.join(directory, "records.jsonl"))
    with open(os.path.join(directory, "splits.json"), "w") as fh:
        json.dump({"num_classes": ds.num_classes, "train": ds.train_idx.tolist(),
                   "val": ds.val_idx.tolist(), "test": ds.test_idx.tolist(), "meta": ds.meta}, fh)
    arrays = {}
    for v, g in ds.graphs.items():
        arrays[f"{v}_indptr"] = g.indptr
        arrays[f"{v}_indices"] = g.indices
    np.savez(os.path.join(directory, "graphs.npz"), **arrays)


def load_bundle(directory):
    rec_path = os.path.join(directory, "records.jsonl")
    split_path = os.path.join(directory, "splits.json")
    for p in (rec_path, split_path):
        if not os.path.exists(p):
            raise DatasetError(f"dataset bundle is missing {p}")
    records = load_jsonl(rec_path)
    with open(split_path) as fh:
        splits = json.load(fh)
    graphs = None
    cache = os.path.join(directory, "graphs.npz")
    if os.path.exists(cache):
        with np.load(cache) as z:
            ts = np.array([r.timestamp for r in records], dtype=np.float64)
            graphs = {v: ViewGraph(v, len(records), z[f"{v}_indptr"], z[f"{v}_indices"], ts) for v in VIEWS}
    return dataset_from_records(records, splits["train"], splits["val"], splits["test"],
                                splits.get("num_classes"), splits.get("meta"), graphs)
