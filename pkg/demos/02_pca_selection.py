# Choosing a PCA dimension by cumulative explained variance and
# reconstruction error together.
import numpy as np

from dmhclust.pca import dimension_table, fit_pca, reconstruction_error, select_dimension

rng = np.random.default_rng(0)
# 6 strong directions plus a little isotropic noise in 40 dimensions
X = rng.standard_normal((200, 6)) @ rng.standard_normal((6, 40)) * 3 + 0.3 * rng.standard_normal((200, 40))

print(" k  ratio   error")
for k, ratio, err in dimension_table(X, k_max=10):
    print(f"{k:2d}  {ratio:.4f}  {err:.4f}")

rep = select_dimension(X, variance_target=0.95, error_target=2.0)
print("selected k:", rep.k, "shortfall:", rep.shortfall)

# On the fitting data the error is exactly the variance left out.
m = fit_pca(X, rep.k)
print("error + captured  =", reconstruction_error(m, X) + m.explained_variance.sum())
print("total variance    =", m.total_variance)
