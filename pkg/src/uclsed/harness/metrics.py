"""Classification metrics, uncertainty-tertile groups and calibration quadrants."""
import csv
from dataclasses import asdict, dataclass, field

import numpy as np

GROUPS = ("certain", "middle", "uncertain")


def confusion(preds, labels, num_classes):
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (labels, preds), 1)
    return m


def per_class_scores(preds, labels, num_classes):
    """(accuracy, f1) per class; accuracy is per-class recall. Empty ratios read as 0."""
    m = confusion(preds, labels, num_classes)
    tp = np.diag(m).astype(float)
    support = m.sum(axis=1)
    predicted = m.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, tp / support, 0.0)
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return recall, f1


def uncertainty_groups(class_uncertainty):
    """Split classes into equal thirds of [U_min, U_max]; boundary ties go to the lower group."""
    u = np.asarray(class_uncertainty, dtype=np.float64)
    lo, hi = u.min(), u.max()
    b1 = lo + (hi - lo) / 3.0
    b2 = lo + 2.0 * (hi - lo) / 3.0
    group = np.where(u <= b1, 0, np.where(u <= b2, 1, 2))
    return {name: np.flatnonzero(group == k).tolist() for k, name in enumerate(GROUPS)}, (b1, b2)


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    mean_class_accuracy: float
    per_class_accuracy: list
    per_class_f1: list
    groups: dict
    group_boundaries: list
    group_metrics: dict
    calibration: dict
    uncertainty_threshold: float
    mean_u_correct: float = None
    mean_u_wrong: float = None
    n: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def write_csv(self, path, class_uncertainty=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "group", "class_uncertainty", "accuracy", "f1"])
            group_of = {c: g for g, cs in self.groups.items() for c in cs}
            for c, (acc, f1) in enumerate(zip(self.per_class_accuracy, self.per_class_f1)):
                cu = "" if class_uncertainty is None else f"{class_uncertainty[c]:.10g}"
                w.writerow([c, group_of.get(c, ""), cu, f"{acc:.10g}", f"{f1:.10g}"])
            w.writerow([])
            w.writerow(["summary", "value"])
            w.writerow(["accuracy", self.accuracy])
            w.writerow(["macro_f1", self.macro_f1])
            for g, m in self.group_metrics.items():
                w.writerow([f"{g}_accuracy", m["accuracy"]])
                w.writerow([f"{g}_f1", m["f1"]])
            for k, v in self.calibration.items():
                w.writerow([k, v])


def score(preds, labels, uncertainty, num_classes, class_uncertainty):
    preds, labels = np.asarray(preds), np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty split")
    u = np.asarray(uncertainty, dtype=np.float64)
    acc_c, f1_c = per_class_scores(preds, labels, num_classes)
    present = np.bincount(labels, minlength=num_classes) > 0
    groups, bounds = uncertainty_groups(class_uncertainty)
    group_metrics = {}
    for g, classes in groups.items():
        cls = [c for c in classes if present[c]]
        group_metrics[g] = {
            "classes": classes,
            "accuracy": float(np.mean(acc_c[cls])) if cls else None,
            "f1": float(np.mean(f1_c[cls])) if cls else None,
        }
    correct = preds == labels
    threshold = float(np.median(u))
    certain = u <= threshold
    calibration = {
        "AC": int(np.sum(correct & certain)),
        "AU": int(np.sum(correct & ~certain)),
        "IC": int(np.sum(~correct & certain)),
        "IU": int(np.sum(~correct & ~certain)),
    }
    return MetricsReport(
        accuracy=float(correct.mean()),
        macro_f1=float(np.mean(f1_c[present])),
        mean_class_accuracy=float(np.mean(acc_c[present])),
        per_class_accuracy=acc_c.tolist(),
        per_class_f1=f1_c.tolist(),
        groups=groups,
        group_boundaries=[float(b) for b in bounds],
        group_metrics=group_metrics,
        calibration=calibration,
        uncertainty_threshold=threshold,
        mean_u_correct=float(u[correct].mean()) if correct.any() else None,
        mean_u_wrong=float(u[~correct].mean()) if (~correct).any() else None,
        n=int(len(labels)),
    )


def evaluate(model, dataset, split, table, inference=None):
    """Metrics on one split; classes are grouped by the training-split uncertainty table."""
    idx = dataset.split(split) if isinstance(split, str) else np.asarray(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    inf = inference if inference is not None else model.infer(dataset)
    return score(inf.preds[idx], dataset.labels[idx], inf.uncertainty[idx], dataset.num_classes,
                 table.values)
