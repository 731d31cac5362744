"""Hungarian-matched clustering metrics and the linear-probe protocol."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .featnet import Adam

REPORT_HEADER = "# pointdc metrics report v1"


def confusion_matrix(pred, gt, n_pred, n_gt=None) -> np.ndarray:
    """Counts ``conf[p, g]`` of points predicted ``p`` with ground truth ``g``."""
    n_gt = n_pred if n_gt is None else n_gt
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction/ground-truth length mismatch: {pred.shape} vs {gt.shape}")
    if len(pred) and (pred.min() < 0 or pred.max() >= n_pred or gt.min() < 0 or gt.max() >= n_gt):
        raise ValueError("labels out of range")
    return np.bincount(pred * n_gt + gt, minlength=n_pred * n_gt).reshape(n_pred, n_gt)


def linear_assignment(cost) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (shortest augmenting
    paths with dual potentials, O(n^3)). Returns ``col_of_row``."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 1-based rows, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[row_of_col[1:] - 1] = np.arange(n)
    return col_of_row


def hungarian_match(conf) -> np.ndarray:
    """Permutation ``perm[pred] = gt`` maximizing the matched counts."""
    conf = np.asarray(conf)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {conf.shape}")
    return linear_assignment(conf.max() - conf)


@dataclass
class MetricsReport:
    iou: np.ndarray
    miou: float
    accuracy: float
    mean_class_accuracy: float
    permutation: np.ndarray
    gt_counts: np.ndarray
    pred_counts: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return int(self.gt_counts.sum())

    def to_text(self) -> str:
        lines = [REPORT_HEADER]
        fields = {"n_points": str(self.n_points), "n_classes": str(len(self.iou)),
                  "miou": _fmt(self.miou), "accuracy": _fmt(self.accuracy),
                  "mean_class_accuracy": _fmt(self.mean_class_accuracy),
                  "matching": " ".join(str(int(p)) for p in self.permutation)}
        fields.update({k: str(v) for k, v in sorted(self.extra.items())})
        lines += [f"{k} = {v}" for k, v in fields.items()]
        lines.append("")
        lines.append("class iou gt_points pred_points")
        for c, iou in enumerate(self.iou):
            lines.append(f"{c} {_fmt(iou)} {int(self.gt_counts[c])} {int(self.pred_counts[c])}")
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    # shortest repr that parses back to the same double
    return repr(float(x))


def segmentation_metrics(pred, gt, permutation=None, n_classes=None) -> MetricsReport:
    """IoU/accuracy after relabeling predictions through ``permutation``.

    Classes absent from both prediction and ground truth are left out of the
    mean IoU (reported as NaN).
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction/ground-truth length mismatch: {pred.shape} vs {gt.shape}")
    if n_classes is None:
        n_classes = int(max(pred.max(initial=0), gt.max(initial=0))) + 1
    perm = np.arange(n_classes) if permutation is None else np.asarray(permutation, dtype=np.int64)
    if len(perm) != n_classes:
        raise ValueError("permutation length must equal the class count")
    conf = confusion_matrix(perm[pred], gt, n_classes)
    tp = np.diag(conf).astype(np.float64)
    pred_counts = conf.sum(axis=1)
    gt_counts = conf.sum(axis=0)
    union = pred_counts + gt_counts - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
        class_acc = np.where(gt_counts > 0, tp / gt_counts, np.nan)
    total = conf.sum()
    return MetricsReport(
        iou=iou,
        miou=float(np.nanmean(iou)) if np.any(union > 0) else float("nan"),
        accuracy=float(tp.sum() / total) if total else float("nan"),
        mean_class_accuracy=float(np.nanmean(class_acc)) if np.any(gt_counts > 0) else float("nan"),
        permutation=perm,
        gt_counts=gt_counts,
        pred_counts=pred_counts,
    )


def evaluate_clustering(pred, gt, n_classes) -> MetricsReport:
    """Hungarian-match cluster ids to classes, then score."""
    perm = hungarian_match(confusion_matrix(pred, gt, n_classes))
    return segmentation_metrics(pred, gt, perm, n_classes)


@dataclass
class ProbeConfig:
    epochs: int = 50
    lr: float = 0.05
    batch_size: int = 256
    holdout: float = 0.2
    seed: int = 0


def _split(n, holdout, rng):
    order = rng.permutation(n)
    n_test = max(1, int(round(holdout * n)))
    return order[n_test:], order[:n_test]


def train_softmax_regression(x, y, n_classes, epochs, lr, batch_size, rng):
    """Mini-batch Adam on mean cross-entropy; zero-initialized weights."""
    weight = np.zeros((x.shape[1], n_classes))
    bias = np.zeros(n_classes)
    params = {"weight": weight, "bias": bias}
    opt = Adam(lr)
    onehot = np.eye(n_classes)[y]
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            b = order[start:start + batch_size]
            logits = x[b] @ params["weight"] + params["bias"]
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            g = (p - onehot[b]) / len(b)
            opt.step(params, {"weight": x[b].T @ g, "bias": g.sum(axis=0)})
    return params["weight"], params["bias"]


def linear_probe(features, gt_labels, config: ProbeConfig | None = None, n_classes=None):
    """Train a linear softmax classifier on frozen features and score it on a
    seeded held-out split. Returns ``((weight, bias), report)``."""
    config = config or ProbeConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(gt_labels, dtype=np.int64)
    if len(x) != len(y):
        raise ValueError("features and labels differ in length")
    if len(np.unique(y)) < 2:
        raise ValueError("linear probe needs at least two ground-truth classes")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    rng = np.random.default_rng(config.seed)
    train, test = _split(len(x), config.holdout, rng)
    weight, bias = train_softmax_regression(
        x[train], y[train], n_classes, config.epochs, config.lr, config.batch_size, rng)
    pred = np.argmax(x[test] @ weight + bias, axis=1)
    return (weight, bias), segmentation_metrics(pred, y[test], None, n_classes)
