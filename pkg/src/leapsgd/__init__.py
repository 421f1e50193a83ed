"""Leap complexity and layerwise projected online SGD for two-layer networks
on sparse polynomial targets."""
from ._accel import backend_name
from .activations import (Activation, HermiteCoeffs, hermite_coeffs, make_activation,
                          make_shifted_sigmoid)
from .harness import (EscapeReport, ScalingFit, SweepSpec, detect_escapes, emit_trace,
                      fit_scaling, load_trace, run_config, run_sweep)
from .leap import LeapResult, leap, leap_feasible
from .network import TwoLayerNet, forward, init_net, loss_grads, population_risk_mc
from .oracle import (DriftMartingaleSplit, PopGradResult, correlation_bound_check,
                     drift_martingale_split, mc_pop_grad, pop_grad_nested, pop_grad_single,
                     sequence_bounds_check)
from .polynomial import (BasisKind, EmbeddedTarget, Monomial, SparsePolynomial, eval_poly,
                         format_target, hermite_eval, parse_target, sample_pair)
from .trainer import (Phase1Config, Phase2Config, ProjectionState, TrainingTrace,
                      phase1_step, phase2_step, project_step, run_algorithm1, run_vanilla_sgd,
                      spherical_grad, theory_hyperparams)

__version__ = "0.1.0"
