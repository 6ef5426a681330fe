"""Label-aligned classification metrics and the Calinski-Harabasz /
Davies-Bouldin cluster validity indices."""

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datastore import as_feature_matrix
from .errors import DataError, NumericError

AVERAGING = ("binary", "macro", "weighted")
REPORT_COLUMNS = ("method", "source", "accuracy", "precision", "recall", "f1",
                  "calinski_harabasz", "davies_bouldin")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ClassificationResult:
    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # some precision/recall had a zero denominator


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float = math.nan
    precision: float = math.nan
    recall: float = math.nan
    f1: float = math.nan
    calinski_harabasz: float = math.nan
    davies_bouldin: float = math.nan
    averaging: str = "weighted"
    degenerate: bool = False

    def row(self, method: str, source: str) -> list:
        return [method, source] + [getattr(self, c) for c in REPORT_COLUMNS[2:]]


def _as_labels(values, what):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DataError(f"{what} must be one-dimensional")
    return arr.astype(np.int64)


def align_clusters_to_labels(assignment, labels) -> np.ndarray:
    """Map cluster indices to label values so that accuracy is maximal.

    The map is one-to-one; with more clusters than label values the
    unmatched clusters map to ``-1`` (always counted as wrong). Among
    equally accurate maps, clusters keep their own index where possible.
    """
    clusters = _as_labels(getattr(assignment, "labels", assignment), "assignment")
    truth = _as_labels(getattr(labels, "labels", labels), "labels")
    if len(clusters) != len(truth):
        raise DataError(f"length mismatch: {len(clusters)} assignments, {len(truth)} labels")
    K = max(getattr(assignment, "K", 0), int(clusters.max()) + 1 if len(clusters) else 1)
    L = max(int(truth.max()) + 1 if len(truth) else 1, 2)
    table = np.zeros((K, L), dtype=np.int64)
    np.add.at(table, (clusters, truth), 1)
    if K == 2 and L == 2:
        # better of the two permutations, identity on ties
        mapping = np.array([0, 1]) if np.trace(table) >= table[0, 1] + table[1, 0] else np.array([1, 0])
    else:
        # counts first, identity second; exact in integers
        score = table * (min(K, L) + 1) + (np.arange(K)[:, None] == np.arange(L)[None, :])
        rows, cols = linear_sum_assignment(-score)
        mapping = np.full(K, -1)
        mapping[rows] = cols
    return mapping[clusters]


def _safe_div(a, b):
    return (a / b, False) if b > 0 else (0.0, True)


def _per_class(pred, truth, cls):
    tp = int(((pred == cls) & (truth == cls)).sum())
    pp = int((pred == cls).sum())
    ap = int((truth == cls).sum())
    p, dp = _safe_div(tp, pp)
    r, dr = _safe_div(tp, ap)
    f, _ = _safe_div(2 * p * r, p + r)
    return p, r, f, ap, dp or dr


def classification_metrics(mapped, labels, averaging: str = "weighted") -> ClassificationResult:
    """Accuracy, precision, recall and F1 of predictions against binary labels.

    ``averaging`` is ``binary`` (positive class 1), ``macro`` or ``weighted``
    (per-class scores weighted by true support). Zero denominators yield 0
    and set ``degenerate``.
    """
    if averaging not in AVERAGING:
        raise DataError(f"averaging must be one of {AVERAGING}, got {averaging!r}")
    pred = _as_labels(mapped, "predictions")
    truth = _as_labels(getattr(labels, "labels", labels), "labels")
    if len(pred) != len(truth):
        raise DataError(f"length mismatch: {len(pred)} predictions, {len(truth)} labels")
    pos, neg = truth == 1, truth == 0
    counts = ConfusionCounts(
        tp=int((pos & (pred == 1)).sum()),
        fp=int((neg & (pred != 0)).sum()),
        tn=int((neg & (pred == 0)).sum()),
        fn=int((pos & (pred != 1)).sum()),
    )
    accuracy = (counts.tp + counts.tn) / max(counts.n, 1)
    if averaging == "binary":
        p, r, f, _, degenerate = _per_class(pred, truth, 1)
    else:
        per = [_per_class(pred, truth, c) for c in (0, 1)]
        if averaging == "macro":
            w = np.array([0.5, 0.5])
        else:
            support = np.array([s[3] for s in per], dtype=np.float64)
            w = support / support.sum() if support.sum() > 0 else np.array([0.5, 0.5])
        p, r, f = (float(np.dot(w, [s[i] for s in per])) for i in range(3))
        degenerate = any(s[4] for s in per)
    return ClassificationResult(counts, float(accuracy), float(p), float(r), float(f), degenerate)


def _clusters(X, assignment, what):
    X = as_feature_matrix(X, "X")
    labels = _as_labels(getattr(assignment, "labels", assignment), "assignment")
    if len(labels) != X.shape[0]:
        raise DataError(f"{what}: {len(labels)} labels for {X.shape[0]} rows")
    K = getattr(assignment, "K", int(labels.max()) + 1)
    if K < 2:
        raise DataError(f"{what} needs K >= 2")
    sizes = np.bincount(labels, minlength=K)
    if (sizes == 0).any():
        raise DataError(f"{what}: empty cluster {int(np.argmin(sizes))}")
    centroids = np.array([X[labels == k].mean(axis=0) for k in range(K)])
    return X, labels, K, sizes, centroids


def calinski_harabasz(X, assignment) -> float:
    """Between/within dispersion ratio. Returns ``inf`` when within-cluster
    dispersion is zero (including all-singleton clusterings)."""
    X, labels, K, sizes, centroids = _clusters(X, assignment, "calinski_harabasz")
    n = X.shape[0]
    between = float((sizes * ((centroids - X.mean(axis=0)) ** 2).sum(axis=1)).sum())
    within = float(((X - centroids[labels]) ** 2).sum())
    if within == 0.0:
        return math.inf
    if n <= K:
        raise DataError(f"calinski_harabasz needs N > K, got N={n}, K={K}")
    return (between / (K - 1)) / (within / (n - K))


def davies_bouldin(X, assignment) -> float:
    X, labels, K, _, centroids = _clusters(X, assignment, "davies_bouldin")
    scatter = np.array([np.linalg.norm(X[labels == k] - centroids[k], axis=1).mean()
                        for k in range(K)])
    sep = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=2)
    total = 0.0
    for i in range(K):
        worst = 0.0
        for j in range(K):
            if i == j:
                continue
            if sep[i, j] == 0.0:
                raise NumericError(f"davies_bouldin: clusters {min(i, j)} and {max(i, j)} "
                                   "have coincident centroids")
            worst = max(worst, (scatter[i] + scatter[j]) / sep[i, j])
        total += worst
    return total / K


def evaluate(X, assignment, labels=None, averaging: str = "weighted") -> MetricsReport:
    """Full report: supervised metrics when ``labels`` is given, CH and DB always.

    Degenerate validity indices (single cluster, coincident centroids) are
    reported as NaN with ``degenerate`` set instead of raising.
    """
    fields = {"averaging": averaging}
    degenerate = False
    if labels is not None:
        res = classification_metrics(align_clusters_to_labels(assignment, labels), labels, averaging)
        fields.update(accuracy=res.accuracy, precision=res.precision, recall=res.recall, f1=res.f1)
        degenerate = res.degenerate
    try:
        fields["calinski_harabasz"] = calinski_harabasz(X, assignment)
    except DataError:
        degenerate = True
    try:
        fields["davies_bouldin"] = davies_bouldin(X, assignment)
    except (DataError, NumericError):
        degenerate = True
    return MetricsReport(degenerate=degenerate or math.isinf(fields.get("calinski_harabasz", 0.0)),
                         **fields)


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def format_reports_csv(rows) -> str:
    """``rows`` is an iterable of ``(method, source, MetricsReport)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for method, source, report in rows:
        w.writerow([_fmt(v) for v in report.row(method, source)])
    return buf.getvalue()


def parse_reports_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise DataError(f"bad metrics header {header}")
    out = []
    for row in reader:
        vals = dict(zip(REPORT_COLUMNS[2:], (float(v) for v in row[2:])))
        out.append((row[0], row[1], MetricsReport(**vals)))
    return out


def report_dict(report: MetricsReport) -> dict:
    return asdict(report)
