"""Comparison and ablation harnesses shared by the CLI and the demo scripts.

Each run returns ``(method_or_variant, MetricsReport)`` rows. Validity
indices are computed in the space the clusterer actually saw: concatenated
blocks for the baselines, the weighted aggregate for DMH.
"""

from dataclasses import dataclass

from . import dmh
from .clustering import ClusteringConfig, agglomerative, kmeans, kmedoids
from .datastore import DatasetBundle, LesionFeatureSet
from .errors import ConfigError
from .metrics import evaluate
from .pca import DEFAULT_K, fit_pca, transform

METHODS = ("kmedoids", "kmeans", "agg", "dmh")
VARIANTS = {
    "a": "K-Medoids on raw concatenated blocks",
    "d": "DMH with per-block PCA",
    "e": "DMH without PCA",
}
UNAVAILABLE_VARIANTS = {
    "b": "needs the trained segmentation network (not part of this package)",
    "c": "needs the trained segmentation network with SCSE (not part of this package)",
}

# desk-scale stand-in for the ablation table: block dims above the PCA target
STANDARD_BENCHMARK = dict(n_per_class=50, block_dims=(128, 128, 128, 128),
                          block_separations=(2.0, 2.0, 2.0, 2.0), seed=42)


@dataclass(frozen=True)
class PCAStage:
    enabled: bool = True
    k: int = DEFAULT_K


def reduce_blocks(features: LesionFeatureSet, k: int = DEFAULT_K) -> LesionFeatureSet:
    """Project every block with more than ``k`` columns onto its top-``k`` components.

    ``k`` is clamped to ``N - 1``; blocks already at or below the target
    pass through unchanged.
    """
    out = []
    for X in features.blocks:
        kk = min(k, X.shape[0] - 1, X.shape[1])
        if kk < X.shape[1]:
            X = transform(fit_pca(X, kk), X)
        out.append(X)
    return features.with_blocks(out)


def cluster_features(method: str, X, cfg: ClusteringConfig, threads: int = 1):
    if method == "kmedoids":
        return kmedoids(X, cfg, threads=threads)[0]
    if method == "kmeans":
        return kmeans(X, cfg, threads=threads)
    if method == "agg":
        return agglomerative(X, cfg.K)
    raise ConfigError(f"unknown clustering method {method!r}; expected one of {METHODS[:3]}")


def run_dmh(bundle: DatasetBundle, cfg: dmh.DMHConfig, weights=dmh.LesionWeights()):
    """Train, cluster and evaluate. Returns ``(state, assignment, embedding, report)``."""
    state, assignment = dmh.train_dmh(bundle, cfg, weights)
    F = dmh.embed(state, bundle.features, weights, cfg.aggregate)
    return state, assignment, F, evaluate(F, assignment, bundle.labels)


def run_compare(bundle: DatasetBundle, methods, dmh_cfg: dmh.DMHConfig,
                cluster_cfg: ClusteringConfig, pca: PCAStage = PCAStage(), threads: int = 1):
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; available: {', '.join(METHODS)}")
    features = reduce_blocks(bundle.features, pca.k) if pca.enabled else bundle.features
    reduced = DatasetBundle(features, bundle.labels)
    rows = []
    for method in methods:
        if method == "dmh":
            report = run_dmh(reduced, dmh_cfg)[3]
        else:
            X = features.concatenated()
            report = evaluate(X, cluster_features(method, X, cluster_cfg, threads), bundle.labels)
        rows.append((method, report))
    return rows


def check_variants(variants):
    for v in variants:
        if v in UNAVAILABLE_VARIANTS:
            raise ConfigError(f"ablation variant {v!r} is out of scope: {UNAVAILABLE_VARIANTS[v]}")
        if v not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {v!r}; available: {', '.join(VARIANTS)}")


def run_ablation(bundle: DatasetBundle, variants, dmh_cfg: dmh.DMHConfig,
                 cluster_cfg: ClusteringConfig, pca_k: int = DEFAULT_K, threads: int = 1):
    check_variants(variants)
    rows = []
    for v in variants:
        if v == "a":
            X = bundle.features.concatenated()
            assignment = kmedoids(X, cluster_cfg, threads=threads)[0]
            report = evaluate(X, assignment, bundle.labels)
        else:
            features = reduce_blocks(bundle.features, pca_k) if v == "d" else bundle.features
            report = run_dmh(DatasetBundle(features, bundle.labels), dmh_cfg)[3]
        rows.append((v, report))
    return rows


def per_block_accuracy(bundle: DatasetBundle, cfg: ClusteringConfig = ClusteringConfig()):
    """Label-aligned K-Medoids accuracy on each block alone."""
    return [evaluate(X, kmedoids(X, cfg)[0], bundle.labels).accuracy
            for X in bundle.features.blocks]

