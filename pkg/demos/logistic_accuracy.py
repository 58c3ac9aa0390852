"""
Decentralized logistic regression
=================================

Six agents classify synthetic data with minibatches of 32. We compare the
accuracy of connected agents with agents that never communicate, and with
the maximum a posteriori classifier fitted on the pooled data.
"""

import copy

import numpy as np

from gossip_langevin import harness
from gossip_langevin.metrics import accuracy, accuracy_curve
from gossip_langevin.samplers import run

for preset in ("logreg", "logreg-sghmc"):
    for kind in ("complete", "disconnected"):
        cfg = copy.deepcopy(harness.load_config(f"preset:{preset}"))
        cfg["topology"] = {"kind": kind}
        cfg["replicas"] = 30
        exp = harness.build_experiment(cfg)
        traces = run(exp.sampler, exp.mixing, exp.target, cfg["replicas"], seed=0)
        acc = [accuracy_curve(traces, exp.X, exp.y, i).tail_mean(0.1) for i in range(traces.n_agents)]
        print(f"{exp.sampler.algorithm:>8} {kind:>12}: mean {np.mean(acc):.4f}  worst agent {min(acc):.4f}")
    print(f"{'MAP':>21}: {accuracy(exp.X, exp.y, exp.target.x_star):.4f}\n")
