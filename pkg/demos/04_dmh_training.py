# Training the four projection heads, then choosing lesion weights by grid search.
from dmhclust import dmh
from dmhclust.datastore import SyntheticSpec, generate_synthetic
from dmhclust.dmh import DMHConfig, grid_search_weights, train_dmh
from dmhclust.metrics import evaluate

bundle = generate_synthetic(SyntheticSpec(50, (16, 16, 16, 16), (0, 0, 4, 0), seed=0))

cfg = DMHConfig(epochs=20, p=16, seed=0)
state, assignment = train_dmh(bundle, cfg)
print("epoch  total    diversity  cluster")
for epoch, total, div, clu in state.history[::5]:
    print(f"{epoch:5d}  {total:.4f}  {div:.4f}     {clu:.4f}")
print("refreshes that raised the cluster loss:",
      sum(after > before for _, before, after in state.refresh_log))

F = dmh.embed(state, bundle.features)
print("unit weights accuracy:", round(evaluate(F, assignment, bundle.labels).accuracy, 3))

# The heads are trained once; each weight tuple only changes aggregation and clustering.
best, table = grid_search_weights(bundle, cfg)
print("grid size:", len(table), "best weights:", best.w)
top = sorted(table, key=lambda row: -row[1].accuracy)[:5]
for w, rep in top:
    print("  ", w, round(rep.accuracy, 3))
