"""Pulse-level quantum simulation of string-order melting in spin-1 chains.

The package designs analog control pulses for simulated transmon qutrits
(adaptive propagation of the controlled device dynamics with exact
parameter gradients, optimized by L-BFGS), extracts the resulting gates,
and composes them into Trotterized quench circuits whose string-order
observables are validated against exact diagonalization.
"""

from .spin1 import (
    ChainOperator,
    ChainState,
    Spin1Ops,
    StringSpec,
    aklt_ground_state,
    aklt_hamiltonian,
    basis_rotation,
    build_spin1_ops,
    exact_evolve,
    quench_hamiltonian,
    string_expectation_direct,
    string_expectation_sampled,
    string_operator,
)
from .device import (
    DeviceModel,
    TransmonParams,
    single_transmon_model,
    two_transmon_model,
)
from .controls import (
    ChannelAnsatz,
    ControlParameters,
    load_pulse_artifact,
    save_pulse_artifact,
)
from .goat import PropagationResult, infidelity, leakage_penalty, propagate
from .optimize import (
    LBFGSOptions,
    OptimizationProblem,
    build_problem,
    make_target,
    minimize,
    multi_start,
)

__version__ = "0.1.0"
