"""Decentralized Langevin sampling (DE-SGLD, DE-SGHMC) over gossip networks."""

from .errors import (
    ConfigurationError,
    DisconnectedGraphError,
    DomainError,
    GossipLangevinError,
    IntegrityError,
    NotPSDError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .metrics import accuracy_curve, consensus_error, fit_gaussian, w2_curve, w2_gaussian
from .models import DecomposedTarget, GaussianPosterior, ModelConstants, Shard, stochastic_grad
from .network import MixingMatrix, build_mixing, make_topology, metropolis_weights
from .numerics import RngStream, spd_sqrt, sym_eigen
from .samplers import SamplerConfig, TraceSet, run
from .theory import sgld_w2_bound, bound_inputs, sghmc_w2_bound, sghmc_bound_inputs

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DecomposedTarget",
    "DisconnectedGraphError",
    "DomainError",
    "GaussianPosterior",
    "GossipLangevinError",
    "IntegrityError",
    "MixingMatrix",
    "ModelConstants",
    "NotPSDError",
    "NumericError",
    "RngStream",
    "SamplerConfig",
    "ShapeError",
    "Shard",
    "TraceSet",
    "ValidationError",
    "accuracy_curve",
    "build_mixing",
    "consensus_error",
    "fit_gaussian",
    "make_topology",
    "metropolis_weights",
    "run",
    "spd_sqrt",
    "stochastic_grad",
    "sym_eigen",
    "sgld_w2_bound",
    "bound_inputs",
    "sghmc_w2_bound",
    "sghmc_bound_inputs",
    "w2_curve",
    "w2_gaussian",
]
