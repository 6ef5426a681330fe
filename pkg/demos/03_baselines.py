# K-Medoids, K-Means and average-linkage agglomerative clustering on the
# concatenated blocks, scored with label-aligned and validity metrics.
from dmhclust.clustering import ClusteringConfig, brute_force_kmedoids, kmedoids
from dmhclust.datastore import SyntheticSpec, generate_synthetic
from dmhclust.metrics import evaluate
from dmhclust.pipeline import cluster_features

bundle = generate_synthetic(SyntheticSpec(40, (6, 6, 6, 6), (3, 3, 3, 3), seed=1))
X = bundle.features.concatenated()
cfg = ClusteringConfig(K=2, seed=0)

print("method     acc    CH       DB")
for method in ("kmedoids", "kmeans", "agg"):
    rep = evaluate(X, cluster_features(method, X, cfg), bundle.labels)
    print(f"{method:9s}  {rep.accuracy:.3f}  {rep.calinski_harabasz:7.3f}  {rep.davies_bouldin:.3f}")

# PAM against exhaustive search on a small subset.
small = X[:12]
_, med = kmedoids(small, ClusteringConfig(restarts=20))
print("PAM cost", round(med.cost, 10), "optimum", round(brute_force_kmedoids(small, 2).cost, 10))
