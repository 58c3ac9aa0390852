"""
Minibatch size and asymptotic error
===================================

Smaller minibatches add gradient noise on top of the injected Langevin
noise, so the chain settles further from the posterior.
"""

import copy

import numpy as np

from gossip_langevin import harness
from gossip_langevin.metrics import w2_curve
from gossip_langevin.samplers import run

base = harness.load_config("preset:linreg-small")

for batch in (5, 25, "full"):
    cfg = copy.deepcopy(base)
    cfg["sampler"]["batch"] = batch
    exp = harness.build_experiment(cfg)
    traces = run(exp.sampler, exp.mixing, exp.target, cfg["replicas"], seed=0)
    post = exp.target.posterior()
    per_agent = np.mean([w2_curve(traces, post, i).plateau(0.1) for i in range(traces.n_agents)])
    sigma2 = exp.target.constants(batch=None if batch == "full" else batch).sigma2
    print(f"batch {batch!s:>4}: sigma^2 = {sigma2:10.2f}   per-agent W2 plateau = {per_agent:.3f}")
