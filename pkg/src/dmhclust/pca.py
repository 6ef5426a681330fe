"""PCA via SVD of the centred data, with dimension selection by cumulative
explained variance and mean squared reconstruction error.

Variances use the population convention (divide by N), so for the fitting
data ``reconstruction_error == total_variance - explained_variance.sum()``.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _binio
from .datastore import as_feature_matrix
from .errors import DataError, NumericError

MAGIC = b"DMHP"
DEFAULT_K = 50


@dataclass(frozen=True, eq=False)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # d x k, orthonormal columns
    explained_variance: np.ndarray
    total_variance: float

    @property
    def d(self) -> int:
        return self.components.shape[0]

    @property
    def k(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True)
class DimensionReport:
    k: int
    cumulative_variance_ratio: float
    reconstruction_error: float
    shortfall: bool = False
    # (k, cumulative ratio, reconstruction error) for every candidate k
    table: tuple = field(default=(), repr=False)


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _spectrum(X: np.ndarray, center: bool):
    mean = X.mean(axis=0) if center else np.zeros(X.shape[1])
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    var = s ** 2 / X.shape[0]
    total = float((Xc ** 2).sum() / X.shape[0])
    return mean, var, _fix_signs(Vt.T), total


def fit_pca(X, k: int, center: bool = True) -> PCAModel:
    """Fit the top-``k`` principal subspace of ``X``.

    Each component's largest-magnitude entry is made positive. With
    ``center=False`` the raw rows are projected (no mean subtraction) and
    ``k`` may go up to ``min(N, d)``.
    """
    X = as_feature_matrix(X, "X")
    n, d = X.shape
    if n < 2:
        raise DataError("PCA needs at least 2 rows")
    k_hi = min(n - 1, d) if center else min(n, d)
    if not 1 <= k <= k_hi:
        raise DataError(f"k={k} out of range [1, {k_hi}]")
    mean, var, V, total = _spectrum(X, center)
    if total == 0.0:
        raise NumericError("zero total variance: all rows identical")
    return PCAModel(mean, V[:, :k].copy(), var[:k].copy(), total)


def _check_cols(model: PCAModel, X, what: str, width: int) -> np.ndarray:
    X = as_feature_matrix(X, what)
    if X.shape[1] != width:
        raise DataError(f"{what}: column mismatch, got {X.shape[1]}, model expects {width}")
    return X


def transform(model: PCAModel, X) -> np.ndarray:
    X = _check_cols(model, X, "X", model.d)
    return (X - model.mean) @ model.components


def inverse_transform(model: PCAModel, Z) -> np.ndarray:
    Z = _check_cols(model, Z, "Z", model.k)
    return Z @ model.components.T + model.mean


def reconstruction_error(model: PCAModel, X) -> float:
    """Mean over rows of the squared norm of the residual after projection."""
    X = _check_cols(model, X, "X", model.d)
    Xc = X - model.mean
    resid = Xc - (Xc @ model.components) @ model.components.T
    return float((resid ** 2).sum() / X.shape[0])


def dimension_table(X, k_max: int = None, center: bool = True):
    """Rows ``(k, cumulative_variance_ratio, reconstruction_error)`` for k = 1..k_max."""
    X = as_feature_matrix(X, "X")
    n, d = X.shape
    k_hi = min(n - 1, d) if center else min(n, d)
    if k_hi < 1:
        raise DataError("PCA needs at least 2 rows")
    k_max = k_hi if k_max is None else min(int(k_max), k_hi)
    if k_max < 1:
        raise DataError(f"k_max must be >= 1, got {k_max}")
    _, var, _, total = _spectrum(X, center)
    if total == 0.0:
        raise NumericError("zero total variance: all rows identical")
    captured = np.cumsum(var)
    # tail sums are more accurate than total - captured
    tail = np.cumsum(var[::-1])[::-1]
    rows = []
    for k in range(1, k_max + 1):
        err = float(tail[k]) if k < len(var) else 0.0
        ratio = min(float(captured[k - 1] / total), 1.0)
        rows.append((k, ratio, err))
    return rows


def select_dimension(X, variance_target: float, error_target: float = np.inf,
                     k_max: int = None, center: bool = True) -> DimensionReport:
    """Smallest k meeting both the variance and the error targets.

    If no k up to ``k_max`` qualifies, the report for ``k_max`` is returned
    with ``shortfall=True``.
    """
    if not 0 <= variance_target <= 1:
        raise DataError(f"variance_target must lie in [0, 1], got {variance_target}")
    if error_target < 0:
        raise DataError(f"error_target must be >= 0, got {error_target}")
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise DataError("empty X")
    table = dimension_table(X, k_max, center)
    for k, ratio, err in table:
        # 1e-12 slack absorbs rounding in exact-rank cases
        if ratio >= variance_target - 1e-12 and err <= error_target + 1e-12:
            return DimensionReport(k, ratio, err, False, tuple(table))
    k, ratio, err = table[-1]
    return DimensionReport(k, ratio, err, True, tuple(table))


def save_model(model: PCAModel, path):
    w = _binio.Writer(MAGIC)
    w.u32(model.d)
    w.u32(model.k)
    w.f64(model.mean)
    w.f64(model.components.T)  # column-major
    w.f64(model.explained_variance)
    w.f64([model.total_variance])
    Path(path).write_bytes(w.getvalue())


def load_model(path) -> PCAModel:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    r = _binio.Reader(data, MAGIC, str(path))
    d, k = r.u32(), r.u32()
    mean = r.f64(d)
    components = r.f64(d * k).reshape(k, d).T.copy()
    ev = r.f64(k)
    total = float(r.f64(1)[0])
    r.finish()
    return PCAModel(mean, components, ev, total)
