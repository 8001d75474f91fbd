"""Dynamic causal Bayesian optimisation and baseline benchmark harness."""
from .experiments import EXPERIMENTS, Experiment, builtin, list_experiments
from .graph import NodeId, TimeDag, compute_mis, load_graph
from .model import GaussianProcess, posterior_predict
from .optimizer import METHODS, CausalOptimizer, MethodConfig, Trace, run, run_abo, run_bo, run_cbo, run_dcbo
from .scm import Domain, Scm, true_objective

__all__ = [
    "EXPERIMENTS", "Experiment", "builtin", "list_experiments",
    "NodeId", "TimeDag", "compute_mis", "load_graph",
    "GaussianProcess", "posterior_predict",
    "METHODS", "CausalOptimizer", "MethodConfig", "Trace",
    "run", "run_abo", "run_bo", "run_cbo", "run_dcbo",
    "Domain", "Scm", "true_objective",
]
__version__ = "0.1.0"
