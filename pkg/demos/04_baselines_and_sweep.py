"""
Baselines, accuracy sweeps and comparisons
==========================================

The harness drives runs from a flat config.  Here we compare D-GET with
gradient tracking on fresh minibatches (GNSD) and plain decentralized
gradient descent (DGD), then sweep the target accuracy.
"""

from pathlib import Path

from dget import harness

cfg = harness.load_config(Path(__file__).with_name("logistic_ring8.cfg"))

# DGD carries a bias floor with a constant step, so it never reaches tight
# targets; GNSD pays minibatch noise at every iteration.
result = harness.compare(cfg.with_values(algorithm={"T": 1500}), ["dget", "gnsd", "dgd"], n_seeds=3, epsilon=1e-3)
print(result.to_csv())

# Communication to reach eps, swept over two decades.
sweep_cfg = cfg.with_values(algorithm={"alpha": "theorem1", "safety": 0.9, "T": 40000, "diag_every": 20})
sweep = harness.sweep(sweep_cfg, [5e-3, 2e-3, 1e-3, 5e-4, 2e-4])
print(sweep.to_csv())
print(f"log comm vs log(1/eps) slope: {sweep.slope:.3f}")
