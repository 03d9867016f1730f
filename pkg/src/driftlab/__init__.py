"""driftlab: centralized, consensus and diffusion SGD on synthetic networks.

Simulation, exact moment propagation and closed-form escaping-efficiency
predictions for mini-batch stochastic gradient algorithms coupled through
doubly-stochastic combination matrices.
"""

from ._kernels import backend_name
from .dynamics import (ALGORITHMS, EnsembleStats, EscapeStats, NetworkState,
                       RunConfig, Trajectory, consensus_distance,
                       ensemble_excess_risk, escape_statistics,
                       replication_rng, run_short_term, run_trajectory,
                       run_unified)
from .exceptions import (ConfigError, DivergenceError, DriftLabError,
                         ModelError, NonConvergenceError, TopologyError)
from .moment_oracle import MomentState, OracleSeries, propagate, steady_state
from .risk_models import (DoubleWellNetwork, Flatness, LocalMinimumInfo,
                          QuadraticNetwork, estimate_noise_moments,
                          global_eval, make_double_well_network,
                          make_quadratic_network, minibatch_gradient,
                          minimizer_summary)
from .theory import (ERPrediction, TheoryInputs, e_n, f_n,
                     markov_stay_probability, predict_er,
                     predict_steady_state, upper_bound)
from .topology import (CombinationMatrix, Graph, SpectralDecomposition,
                       ValidationReport, build_combination_matrix,
                       metropolis_weights, perron_vector,
                       random_connected_graph, spectral_decompose, validate)

__version__ = "0.1.0"
