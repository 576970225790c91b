"""
Online D-GET with noisy sample gradients
========================================

In the online setting a node cannot see its whole dataset; each draw returns
the local gradient plus Gaussian noise of variance sigma^2.  The outer batch
s1 controls how noisy each refresh is.
"""

import numpy as np

from dget import diagnostics, engine, graph, problems, theory
from dget.engine import AlgorithmConfig

prob = problems.make_problem("nonconvex-logistic", m=8, n=200, d=10, seed=0, online=True, sigma2=0.5)
mix = graph.metropolis_weights(graph.ring(8))

# Refresh variance falls as 1/s1.
x = np.zeros((8, 10))
for s1 in (4, 8, 16):
    rep = diagnostics.variance_bound_check(prob, x, s1, trials=2000)
    print(f"s1={s1:>3}  mean sq error {rep.mean_sq_error:.4f}  (m sigma^2 / s1 = {rep.bound:.4f})")

# Batch sizes chosen from the target accuracy.
plan = theory.theorem1_stepsize(prob.L, mix.eta)
consts = theory.potential_constants(plan.alpha, prob.L, plan.beta, mix.eta, prob.m)
s1, s2, q = theory.online_batch_plan(1e-1, prob.sigma2, consts.C0, plan.alpha, plan.beta)
print(f"plan for eps=0.1: s1={s1}, s2={s2}, q={q}")

# Those are large; a hand-picked plan shows the behaviour quickly.
cfg = AlgorithmConfig(alpha=0.3, T=600, q=20, s1=400, s2=20, mode="online", seed=2, diag_every=50)
trace = engine.run_dget(prob, mix, cfg)
for row in trace.rows():
    print(f"r={row['r']:>4}  h={row['h']:.3e}  estimator err={row['estimator_err']:.2e}")
