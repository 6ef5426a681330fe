"""Dynamic multi-projection-head clustering.

Each of the four lesion blocks gets its own affine projection head. The
heads are trained on

    total = diversity + lambda * cluster

where ``diversity`` penalises cross-head cosine similarity above a
threshold ``T`` that moves linearly over the epochs, and ``cluster`` is the
mean distance of every projected sample to the nearer of its lesion's two
medoids. Medoids are re-fitted with K-Medoids between epochs and held
constant inside each gradient step. After training, the projections are
combined with per-lesion weights and clustered with K-Medoids.

Gradients are analytic. ``max`` and ``min`` are differentiated through the
achieving index (lowest index on ties) and ReLU has zero slope at 0.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from . import _binio
from .clustering import ClusteringConfig, MedoidSet, kmedoids
from .datastore import LESIONS, DatasetBundle, LesionFeatureSet
from .errors import ConfigError, DataError, NumericError
from .kvfile import format_kv, parse_kv
from .metrics import evaluate

N_HEADS = len(LESIONS)
PAIRS = tuple(itertools.combinations(range(N_HEADS), 2))
ZERO_NORM = 1e-12
STATE_MAGIC = b"DMHS"
WEIGHT_LEVELS = (1.0, 5.0, 10.0)
DEFAULT_GRID = tuple(itertools.product(WEIGHT_LEVELS, repeat=N_HEADS))


@dataclass(frozen=True, eq=False)
class ProjectionHead:
    weights: np.ndarray  # d_i x p
    bias: np.ndarray  # p

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[1],):
            raise DataError(f"head weights {W.shape} and bias {b.shape} are inconsistent")
        if W.shape[1] < 2:
            raise ConfigError(f"projection dim must be >= 2, got {W.shape[1]}")
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise NumericError("projection head has non-finite entries")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True, eq=False)
class ProjectionHeadBank:
    heads: tuple

    def __post_init__(self):
        if len(self.heads) != N_HEADS:
            raise DataError(f"expected {N_HEADS} heads, got {len(self.heads)}")
        if len({h.weights.shape[1] for h in self.heads}) != 1:
            raise DataError("all heads must share the output dimension")

    @property
    def p(self) -> int:
        return self.heads[0].weights.shape[1]

    @property
    def input_dims(self) -> tuple:
        return tuple(h.weights.shape[0] for h in self.heads)

    @classmethod
    def initialize(cls, input_dims, p: int = 16, seed: int = 0) -> "ProjectionHeadBank":
        """Uniform(+-sqrt(6 / (d_i + p))) weights, zero biases."""
        rng = np.random.default_rng(seed)
        heads = []
        for d in input_dims:
            limit = math.sqrt(6.0 / (d + p))
            heads.append(ProjectionHead(rng.uniform(-limit, limit, (d, p)), np.zeros(p)))
        return cls(tuple(heads))

    def params(self) -> list:
        return [a for h in self.heads for a in (h.weights, h.bias)]

    @classmethod
    def from_params(cls, params) -> "ProjectionHeadBank":
        return cls(tuple(ProjectionHead(params[2 * i], params[2 * i + 1]) for i in range(N_HEADS)))


@dataclass(frozen=True)
class LesionWeights:
    w: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        w = tuple(float(x) for x in self.w)
        if len(w) != N_HEADS:
            raise ConfigError(f"need {N_HEADS} lesion weights, got {len(w)}")
        if any(not 1.0 <= x <= 10.0 for x in w):
            raise ConfigError(f"lesion weights must lie in [1, 10], got {w}")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class ThresholdSchedule:
    t_start: float = 0.9
    t_end: float = 0.5
    epochs: int = 1

    def __post_init__(self):
        if not (0 <= self.t_start <= 1 and 0 <= self.t_end <= 1):
            raise ConfigError("threshold endpoints must lie in [0, 1]")
        if self.epochs < 1:
            raise ConfigError("threshold schedule needs epochs >= 1")


def threshold_at(schedule: ThresholdSchedule, epoch: int) -> float:
    """Linear interpolation from ``t_start`` (epoch 0) to ``t_end`` (last epoch)."""
    if schedule.epochs == 1:
        return schedule.t_start
    if epoch >= schedule.epochs - 1:
        return schedule.t_end
    frac = max(epoch, 0) / (schedule.epochs - 1)
    return schedule.t_start + (schedule.t_end - schedule.t_start) * frac


@dataclass(frozen=True)
class DMHConfig:
    lam: float = 0.3
    p: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    medoid_refresh_every: int = 1
    standardize_inputs: bool = True
    threshold: Optional[ThresholdSchedule] = None  # None: 0.9 -> 0.5 over `epochs`
    kmedoids_restarts: int = 10
    kmedoids_max_iter: int = 100
    aggregate: str = "projected"  # or "raw"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.p < 2:
            raise ConfigError(f"projection dim p must be >= 2, got {self.p}")
        if self.epochs < 0 or self.batch_size < 0 or self.medoid_refresh_every < 1:
            raise ConfigError("epochs/batch_size must be >= 0 and medoid_refresh_every >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        if self.aggregate not in ("projected", "raw"):
            raise ConfigError(f"aggregate must be 'projected' or 'raw', got {self.aggregate!r}")

    def schedule(self) -> ThresholdSchedule:
        if self.threshold is not None:
            return self.threshold
        return ThresholdSchedule(0.9, 0.5, max(self.epochs, 1))

    def clustering(self) -> ClusteringConfig:
        return ClusteringConfig(K=2, max_iter=self.kmedoids_max_iter, seed=self.seed,
                                restarts=self.kmedoids_restarts)


@dataclass(frozen=True, eq=False)
class SimilarityStats:
    # (i, j) ordered -> length-N array of max_m cos(z_i[n], z_j[m]); 0 for excluded rows
    max_similarity: dict
    # (i, j) with i < j -> averaged pair term, before and after ReLU(. - T)
    pair_term: dict
    penalty: dict


@dataclass(eq=False)
class Standardizer:
    means: tuple
    scales: tuple

    @classmethod
    def fit(cls, blocks) -> "Standardizer":
        means, scales = [], []
        for X in blocks:
            sd = X.std(axis=0)
            means.append(X.mean(axis=0))
            scales.append(np.where(sd > 0, sd, 1.0))
        return cls(tuple(means), tuple(scales))

    @classmethod
    def identity(cls, dims) -> "Standardizer":
        return cls(tuple(np.zeros(d) for d in dims), tuple(np.ones(d) for d in dims))

    def apply(self, blocks) -> list:
        if len(blocks) != len(self.means):
            raise DataError("block count mismatch in standardizer")
        return [(X - m) / s for X, m, s in zip(blocks, self.means, self.scales)]


@dataclass(eq=False)
class TrainState:
    bank: ProjectionHeadBank
    medoids: list  # 4 MedoidSet, indices into the training rows
    medoid_features: list  # 4 arrays (K x d_i): standardized inputs of the medoid rows
    adam_m: list
    adam_v: list
    standardizer: Standardizer
    epoch: int = 0
    step: int = 0
    config_echo: str = ""
    # one (epoch, total, diversity, cluster) tuple per completed epoch
    history: list = field(default_factory=list)
    # (epoch, cluster loss with stale medoids, cluster loss after refresh)
    refresh_log: list = field(default_factory=list)


def _blocks(features):
    if isinstance(features, LesionFeatureSet):
        return list(features.blocks)
    if isinstance(features, DatasetBundle):
        return list(features.features.blocks)
    return [np.asarray(b, dtype=np.float64) for b in features]


def project(bank: ProjectionHeadBank, features) -> list:
    """Apply head ``i`` to block ``i``: ``f_i @ W_i + b_i`` row-wise."""
    blocks = _blocks(features)
    if len(blocks) != N_HEADS:
        raise DataError(f"expected {N_HEADS} blocks, got {len(blocks)}")
    out = []
    for i, (X, head) in enumerate(zip(blocks, bank.heads)):
        if X.ndim != 2 or X.shape[1] != head.weights.shape[0]:
            raise DataError(f"block {i + 1}: dimension {X.shape} does not match head input "
                            f"{head.weights.shape[0]}")
        out.append(X @ head.weights + head.bias)
    return out


def _check_same_shape(mats, what):
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if len(mats) != N_HEADS:
        raise DataError(f"{what}: expected {N_HEADS} matrices, got {len(mats)}")
    if len({m.shape for m in mats}) != 1 or mats[0].ndim != 2:
        raise DataError(f"{what}: shape mismatch {[m.shape for m in mats]}")
    return mats


def aggregate_weighted(projected, weights: LesionWeights) -> np.ndarray:
    """Weighted mean of the four lesion representations: ``(1/4) sum_i w_i z_i``."""
    mats = _check_same_shape(projected, "aggregate_weighted")
    w = weights.w if isinstance(weights, LesionWeights) else tuple(weights)
    return sum(wi * Z for wi, Z in zip(w, mats)) / N_HEADS


def _unit_rows(Z):
    norms = np.linalg.norm(Z, axis=1)
    valid = norms >= ZERO_NORM
    U = np.zeros_like(Z)
    U[valid] = Z[valid] / norms[valid, None]
    return U, norms, valid


def _directed_max(Ua, va, Ub, vb):
    """Per row of ``a``: max cosine against rows of ``b`` and its (lowest) argmax."""
    S = Ua @ Ub.T
    S[:, ~vb] = -np.inf
    arg = np.argmax(S, axis=1)
    best = S[np.arange(len(S)), arg]
    ok = va & vb.any()
    best = np.where(ok, best, 0.0)
    return best, arg, ok


def _diversity(mats, T, want_grad):
    n = mats[0].shape[0]
    units = [_unit_rows(Z) for Z in mats]
    grads = [np.zeros_like(Z) for Z in mats] if want_grad else None
    max_sim, pair_term, penalty = {}, {}, {}
    loss = 0.0
    coef = 1.0 / (len(PAIRS) * 2 * n)
    for i, j in PAIRS:
        directed = {}
        for a, b in ((i, j), (j, i)):
            Ua, ra, va = units[a]
            Ub, rb, vb = units[b]
            best, arg, ok = _directed_max(Ua, va, Ub, vb)
            max_sim[(a, b)] = best
            directed[(a, b)] = (best, arg, ok)
        term = (directed[(i, j)][0].sum() + directed[(j, i)][0].sum()) / (2 * n)
        pair_term[(i, j)] = float(term)
        penalty[(i, j)] = max(float(term) - T, 0.0)
        loss += penalty[(i, j)]
        if want_grad and term - T > 0:
            for (a, b), (best, arg, ok) in directed.items():
                Ua, ra, _ = units[a]
                Ub, rb, _ = units[b]
                rows = np.flatnonzero(ok)
                cols = arg[rows]
                s = best[rows, None]
                grads[a][rows] += coef * (Ub[cols] - s * Ua[rows]) / ra[rows, None]
                np.add.at(grads[b], cols, coef * (Ua[rows] - s * Ub[cols]) / rb[cols, None])
    stats = SimilarityStats(max_sim, pair_term, penalty)
    return float(loss / len(PAIRS)), stats, grads


def diversity_loss(projected, T: float):
    """Mean over the six head pairs of ``ReLU(mean max cross-head cosine - T)``.

    For samples ``n`` of head ``i`` the max runs over all samples of head
    ``j``; both directions are averaged. Rows with norm below 1e-12 are left
    out of every similarity and contribute 0.
    """
    mats = _check_same_shape(projected, "diversity_loss")
    loss, stats, _ = _diversity(mats, float(T), False)
    return loss, stats


def _cluster(mats, centers, want_grad):
    loss = 0.0
    grads = [np.zeros_like(Z) for Z in mats] if want_grad else None
    for i, (Z, C) in enumerate(zip(mats, centers)):
        dist = cdist(Z, C)
        k = np.argmin(dist, axis=1)
        dmin = dist[np.arange(len(Z)), k]
        loss += dmin.mean()
        if want_grad:
            diff = Z - C[k]
            safe = np.where(dmin > 0, dmin, 1.0)
            g = np.where((dmin > 0)[:, None], diff / safe[:, None], 0.0)
            grads[i] = g / (N_HEADS * len(Z))
    return loss / N_HEADS, grads


def _medoid_indices(m):
    return list(m.indices) if isinstance(m, MedoidSet) else [int(x) for x in m]


def cluster_loss(projected, medoids) -> float:
    """Mean over lesions of the mean unsquared distance to the nearer medoid.

    ``medoids[i]`` indexes rows of ``projected[i]``.
    """
    mats = _check_same_shape(projected, "cluster_loss")
    if len(medoids) != N_HEADS:
        raise DataError(f"expected {N_HEADS} medoid sets, got {len(medoids)}")
    centers = []
    for i, (Z, m) in enumerate(zip(mats, medoids)):
        idx = _medoid_indices(m)
        if len(idx) != 2 or any(not 0 <= x < len(Z) for x in idx):
            raise DataError(f"lesion {i + 1}: invalid medoid indices {idx}")
        centers.append(Z[idx])
    return float(_cluster(mats, centers, False)[0])


def cluster_loss_to_centers(projected, centers) -> float:
    """Cluster loss against explicit medoid vectors (``centers[i]`` is K x p)."""
    mats = _check_same_shape(projected, "cluster_loss")
    centers = [np.asarray(C, dtype=np.float64) for C in centers]
    if len(centers) != N_HEADS or any(C.ndim != 2 or C.shape[1] != mats[0].shape[1]
                                      for C in centers):
        raise DataError("centers must be 4 arrays of shape K x p")
    return float(_cluster(mats, centers, False)[0])


def total_loss(projected, medoids, T: float, lam: float = 0.3):
    div, _ = diversity_loss(projected, T)
    clu = cluster_loss(projected, medoids)
    return div + lam * clu, {"diversity": div, "cluster": clu}


def loss_with_centers(bank: ProjectionHeadBank, blocks, centers, T, lam, want_grad=False):
    """Objective with fixed medoid vectors ``centers`` (4 arrays, K x p).

    Returns ``(total, parts, grads)``; ``grads`` follows ``bank.params()``
    order and is ``None`` unless ``want_grad``.
    """
    blocks = _blocks(blocks)
    mats = project(bank, blocks)
    div, _, gdiv = _diversity(mats, float(T), want_grad)
    clu, gclu = _cluster(mats, centers, want_grad)
    total = div + lam * clu
    parts = {"diversity": div, "cluster": clu}
    if not want_grad:
        return total, parts, None
    grads = []
    for X, gd, gc in zip(blocks, gdiv, gclu):
        gZ = gd + lam * gc
        grads.extend([X.T @ gZ, gZ.sum(axis=0)])
    return total, parts, grads


def medoid_centers(state: TrainState) -> list:
    """Current projections of the medoid rows; treated as constants by the gradient."""
    return project(state.bank, state.medoid_features)


def grad_total_loss(state: TrainState, batch, T: float, lam: float):
    """Gradients of the objective on ``batch`` w.r.t. every head weight and bias.

    Returned as a list in ``bank.params()`` order (W_1, b_1, ..., W_4, b_4);
    medoid vectors are held fixed at their current projections.
    """
    _, _, grads = loss_with_centers(state.bank, batch, medoid_centers(state), T, lam, True)
    return grads


# -- training -------------------------------------------------------------------

def _refresh_medoids(mats, cfg: DMHConfig, stale=None):
    ccfg = cfg.clustering()
    out = []
    for i, Z in enumerate(mats):
        _, fresh = kmedoids(Z, ccfg)
        if stale is not None:
            old_idx = list(stale[i].indices)
            old_cost = float(cdist(Z, Z[old_idx]).min(axis=1).sum())
            if old_cost < fresh.cost:
                fresh = MedoidSet(tuple(old_idx), old_cost)
        out.append(fresh)
    return out


def _adam_step(state: TrainState, grads, cfg: DMHConfig):
    state.step += 1
    t = state.step
    new_params = []
    for idx, (p, g) in enumerate(zip(state.bank.params(), grads)):
        m = cfg.beta1 * state.adam_m[idx] + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.adam_v[idx] + (1 - cfg.beta2) * g * g
        state.adam_m[idx], state.adam_v[idx] = m, v
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        new_params.append(p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
    state.bank = ProjectionHeadBank.from_params(new_params)


def _check_finite(epoch, parts, total):
    for name, value in (*parts.items(), ("total", total)):
        if not math.isfinite(value):
            raise NumericError(f"non-finite {name} loss at epoch {epoch}: {value}")


def config_echo(cfg: DMHConfig) -> str:
    sched = cfg.schedule()
    items = {
        "dmh.lambda": repr(cfg.lam), "dmh.p": cfg.p, "dmh.lr": repr(cfg.lr),
        "dmh.beta1": repr(cfg.beta1), "dmh.beta2": repr(cfg.beta2),
        "dmh.adam_eps": repr(cfg.adam_eps), "dmh.epochs": cfg.epochs,
        "dmh.batch_size": cfg.batch_size, "dmh.seed": cfg.seed,
        "dmh.medoid_refresh_every": cfg.medoid_refresh_every,
        "dmh.standardize": str(cfg.standardize_inputs).lower(),
        "dmh.t_start": repr(sched.t_start), "dmh.t_end": repr(sched.t_end),
        "dmh.t_epochs": sched.epochs, "dmh.kmedoids_restarts": cfg.kmedoids_restarts,
        "dmh.kmedoids_max_iter": cfg.kmedoids_max_iter, "dmh.aggregate": cfg.aggregate,
    }
    return format_kv(items)


def init_state(data, cfg: DMHConfig) -> tuple:
    """Seeded initial state and the standardized training blocks."""
    blocks = _blocks(data)
    dims = [X.shape[1] for X in blocks]
    std = Standardizer.fit(blocks) if cfg.standardize_inputs else Standardizer.identity(dims)
    X = std.apply(blocks)
    bank = ProjectionHeadBank.initialize(dims, cfg.p, cfg.seed)
    zeros = [np.zeros_like(a) for a in bank.params()]
    state = TrainState(bank, [], [], zeros, [z.copy() for z in zeros], std,
                       config_echo=config_echo(cfg))
    return state, X


def _set_medoids(state, medoids, X):
    state.medoids = medoids
    state.medoid_features = [Xi[list(m.indices)] for Xi, m in zip(X, medoids)]


def embed(state: TrainState, features, weights: LesionWeights = LesionWeights(),
          aggregate: str = "projected") -> np.ndarray:
    """Aggregated representation of ``features`` under the trained heads."""
    X = state.standardizer.apply(_blocks(features))
    parts = project(state.bank, X) if aggregate == "projected" else X
    return aggregate_weighted(parts, weights)


def train_dmh(data, cfg: DMHConfig = DMHConfig(), weights: LesionWeights = LesionWeights()):
    """Alternate medoid refits with Adam steps on the objective.

    Returns ``(state, assignment)`` where the assignment is K-Medoids (K=2)
    on the weighted aggregate of the final projections.
    """
    state, X = init_state(data, cfg)
    n = X[0].shape[0]
    if n < 2:
        raise DataError("training needs at least 2 samples")
    schedule = cfg.schedule()
    batch = cfg.batch_size or n
    _set_medoids(state, _refresh_medoids(project(state.bank, X), cfg), X)

    for epoch in range(cfg.epochs):
        if epoch > 0 and epoch % cfg.medoid_refresh_every == 0:
            mats = project(state.bank, X)
            before = cluster_loss(mats, state.medoids)
            _set_medoids(state, _refresh_medoids(mats, cfg, state.medoids), X)
            state.refresh_log.append((epoch, before, cluster_loss(mats, state.medoids)))
        T = threshold_at(schedule, epoch)
        for start in range(0, n, batch):
            rows = [Xi[start:start + batch] for Xi in X]
            total, parts, grads = loss_with_centers(state.bank, rows, medoid_centers(state),
                                                    T, cfg.lam, True)
            _check_finite(epoch, parts, total)
            _adam_step(state, grads, cfg)
        total, parts = total_loss(project(state.bank, X), state.medoids, T, cfg.lam)
        _check_finite(epoch, parts, total)
        state.history.append((epoch, total, parts["diversity"], parts["cluster"]))
        state.epoch += 1

    F = aggregate_weighted(project(state.bank, X) if cfg.aggregate == "projected" else X, weights)
    assignment, _ = kmedoids(F, cfg.clustering())
    return state, assignment


def _cluster_weighted(parts, weights, cfg, labels):
    F = aggregate_weighted(parts, LesionWeights(weights))
    assignment, _ = kmedoids(F, cfg.clustering())
    return evaluate(F, assignment, labels)


def grid_search_weights(data: DatasetBundle, cfg: DMHConfig = DMHConfig(), grid=DEFAULT_GRID,
                        retrain: bool = False, threads: int = 1):
    """Pick lesion weights maximising label-aligned accuracy.

    By default the heads are trained once with unit weights and only the
    aggregation and clustering are repeated per weight tuple. With
    ``retrain`` every tuple gets its own training run. Ties in accuracy go
    to the lexicographically smallest tuple. Returns the winning
    :class:`LesionWeights` and a list of ``(tuple, MetricsReport)`` rows in
    sorted tuple order.
    """
    if not isinstance(data, DatasetBundle) or data.labels is None:
        raise DataError("grid search needs labels to score accuracy")
    grid = sorted({tuple(float(x) for x in g) for g in grid})
    if not grid:
        raise ConfigError("empty weight grid")
    for g in grid:
        LesionWeights(g)

    if retrain:
        def work(g):
            state, assignment = train_dmh(data, cfg, LesionWeights(g))
            F = embed(state, data.features, LesionWeights(g), cfg.aggregate)
            return evaluate(F, assignment, data.labels)
    else:
        state, _ = train_dmh(data, cfg)
        X = state.standardizer.apply(_blocks(data))
        parts = project(state.bank, X) if cfg.aggregate == "projected" else X

        def work(g):
            return _cluster_weighted(parts, g, cfg, data.labels)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(work, grid))
    else:
        reports = [work(g) for g in grid]
    best = max(range(len(grid)), key=lambda i: (reports[i].accuracy, -i))
    return LesionWeights(grid[best]), list(zip(grid, reports))


# -- checkpoints -----------------------------------------------------------------

def save_state(state: TrainState, path):
    """DMHS checkpoint: config echo, heads, medoid indices, Adam moments, counters."""
    w = _binio.Writer(STATE_MAGIC)
    echo = state.config_echo.encode("utf-8")
    w.u32(len(echo))
    w.raw(echo)
    w.u32(N_HEADS)
    for head in state.bank.heads:
        w.u32(head.weights.shape[0])
        w.u32(head.weights.shape[1])
        w.f64(head.weights)
        w.f64(head.bias)
    for m in state.medoids:
        w.u32(len(m.indices))
        for idx in m.indices:
            w.u32(idx)
        w.f64([m.cost])
    for moments in (state.adam_m, state.adam_v):
        for a in moments:
            w.f64(a)
    for mf in state.medoid_features:
        w.f64(mf)
    for mean, scale in zip(state.standardizer.means, state.standardizer.scales):
        w.f64(mean)
        w.f64(scale)
    w.u32(state.step)
    w.u32(state.epoch)
    Path(path).write_bytes(w.getvalue())


def load_state(path) -> TrainState:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    r = _binio.Reader(data, STATE_MAGIC, str(path))
    echo = r.raw(r.u32()).decode("utf-8")
    parse_kv(echo, f"{path} config echo")
    if r.u32() != N_HEADS:
        raise DataError(f"{path}: unexpected head count")
    heads, shapes = [], []
    for _ in range(N_HEADS):
        d, p = r.u32(), r.u32()
        heads.append(ProjectionHead(r.f64(d * p).reshape(d, p), r.f64(p)))
        shapes.extend([(d, p), (p,)])
    medoids = []
    for _ in range(N_HEADS):
        k = r.u32()
        idx = tuple(r.u32() for _ in range(k))
        medoids.append(MedoidSet(idx, float(r.f64(1)[0])))
    moments = []
    for _ in range(2):
        moments.append([r.f64(int(np.prod(s))).reshape(s) for s in shapes])
    dims = [shapes[2 * i][0] for i in range(N_HEADS)]
    medoid_features = [r.f64(len(m.indices) * d).reshape(len(m.indices), d)
                       for m, d in zip(medoids, dims)]
    means, scales = [], []
    for d in dims:
        means.append(r.f64(d))
        scales.append(r.f64(d))
    step, epoch = r.u32(), r.u32()
    r.finish()
    return TrainState(ProjectionHeadBank(tuple(heads)), medoids, medoid_features,
                      moments[0], moments[1], Standardizer(tuple(means), tuple(scales)),
                      epoch=epoch, step=step, config_echo=echo)


def format_history_csv(state: TrainState) -> str:
    lines = ["epoch,total,diversity,cluster\n"]
    for epoch, total, div, clu in state.history:
        lines.append(f"{epoch},{total:.17g},{div:.17g},{clu:.17g}\n")
    return "".join(lines)
