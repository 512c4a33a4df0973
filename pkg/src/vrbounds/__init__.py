"""Variance-reduced incremental gradient methods (SAG, SAGA, IAG) with
runtime checks of their delayed-gradient Lyapunov bounds."""

from .errors import (ConfigError, DivergenceError, HorizonExceeded, InsufficientTrace, InvalidArgument,
                     InvalidChain, InvalidCombination, NumericalFault, OutOfWindow, UncoverablePattern)
from .problems import (FiniteSumProblem, ProblemMetadata, check_gradients, full_gradient, make_logistic,
                       make_nonconvex, make_quadratic, problem_from_spec, two_well_quadratic)
from .samplers import Sampler, analyze_mixing, certified_delay, staleness_profile
from .optimizers import GradientMemory, RunConfig, RunTrace, estimate_gradient, run, saga_unbiasedness_oracle
from .concentration import bernstein_tail, monte_carlo_staleness, staleness_bound_iid, staleness_bound_markov
from .diagnostics import LyapunovState, check_burn_in, check_contraction, check_gradient_error, rate_envelope

__version__ = "0.1.0"
