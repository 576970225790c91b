"""
Mixing matrices and their contraction factor
=============================================

Every node averages with its neighbours through a doubly stochastic matrix W.
How fast the network forgets disagreement is governed by eta, the largest
eigenvalue magnitude of W once the all-ones direction is removed.
"""

import numpy as np

from dget import graph

# A ring on four nodes.  Metropolis weights give each edge 1/(1 + max degree).
g = graph.ring(4)
w = graph.metropolis_weights(g)
print(np.round(w.w, 4))
print("ring-4 eta:", w.eta)

# Denser graphs mix faster; the complete graph averages in a single step.
for name in ("path", "ring", "star", "complete"):
    mix = graph.metropolis_weights(graph.make_topology(name, 8))
    print(f"{name:>9}  eta = {mix.eta:.4f}")

# Max-degree weights on an even ring are periodic: eta hits 1 and the
# constructor refuses the matrix.
try:
    graph.max_degree_weights(g)
except graph.MixingMatrixError as exc:
    print("rejected:", exc)

# A raw matrix can still be inspected without gating.
print(graph.validate_mixing(graph.weight_matrix(g, "maxdegree")))

# Powers of W shrink any zero-mean vector by roughly eta per step.
rng = np.random.default_rng(0)
u = rng.normal(size=8)
u -= u.mean()
w8 = graph.metropolis_weights(graph.ring(8))
for k in (1, 5, 20):
    shrink = np.linalg.norm(np.linalg.matrix_power(w8.w, k) @ u) / np.linalg.norm(u)
    print(f"after {k:>2} rounds: {shrink:.2e}  (eta^k = {w8.eta ** k:.2e})")
