"""Pulse optimization: target unitaries, L-BFGS with backtracking line
search, and multi-start drivers for the four gate problems.

Problem labels:

* ``x_field``      - single-site transverse-field Trotter step exp(-i tau db Sx)
* ``zx_rotation``  - measurement basis change for x-direction strings
* ``zy_rotation``  - measurement basis change for y-direction strings
* ``xyz_bond``     - two-site Trotter step exp(-i tau [SxSx + SySy + lam SzSz])
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .controls import (
    ChannelAnsatz,
    ControlParameters,
    random_initial_parameters,
    standard_ansatz,
)
from .device import DeviceModel, single_transmon_model, two_transmon_model
from .goat import ObjectiveValue, gate_objective
from .spin1 import SPIN1, basis_rotation

__all__ = [
    "TARGET_LABELS",
    "make_target",
    "OptimizationProblem",
    "build_problem",
    "LBFGSOptions",
    "OptimizationTrace",
    "lbfgs",
    "minimize",
    "multi_start",
    "verified_infidelity",
    "worker_count",
]

TARGET_LABELS = ("x_field", "zx_rotation", "zy_rotation", "xyz_bond")


def _expm_hermitian(h: np.ndarray, scale: float) -> np.ndarray:
    """exp(1j * scale * h) for Hermitian h, by eigendecomposition."""
    evals, evecs = np.linalg.eigh(h)
    return (evecs * np.exp(1j * scale * evals)) @ evecs.conj().T


def make_target(
    label: str, lam: float = 0.2, delta_b: float = 0.2, tau: float = 0.1
) -> np.ndarray:
    """Computational-block target unitary for one of the four problems."""
    if label == "x_field":
        return _expm_hermitian(SPIN1.sx, -tau * delta_b)
    if label == "zx_rotation":
        return basis_rotation("x")
    if label == "zy_rotation":
        return basis_rotation("y")
    if label == "xyz_bond":
        h = (
            np.kron(SPIN1.sx, SPIN1.sx)
            + np.kron(SPIN1.sy, SPIN1.sy)
            + lam * np.kron(SPIN1.sz, SPIN1.sz)
        )
        return _expm_hermitian(h, -tau)
    raise ValueError(f"unknown target label {label!r}; expected one of {TARGET_LABELS}")


@dataclass(frozen=True)
class OptimizationProblem:
    """A gate-design problem: device, pulse shapes, and the target block."""

    label: str
    model: DeviceModel
    ansatz: list[ChannelAnsatz]
    target: np.ndarray
    d: int
    use_leakage_penalty: bool
    leakage_weight: float = 1.0
    lam: float = 0.2
    delta_b: float = 0.2
    tau: float = 0.1

    @property
    def n_params(self) -> int:
        return sum(a.n_params for a in self.ansatz)


def build_problem(
    label: str,
    tau: float = 0.1,
    lam: float = 0.2,
    delta_b: float = 0.2,
    levels: int = 5,
    saturation_mode: str = "tanh",
) -> OptimizationProblem:
    """Standard problem setup: single transmon with microwave drives for the
    3x3 targets (with leakage penalty), two coupled transmons with
    detuning + coupling controls for the two-site step (no penalty)."""
    if label not in TARGET_LABELS:
        raise ValueError(f"unknown target label {label!r}")
    target = make_target(label, lam=lam, delta_b=delta_b, tau=tau)
    if label == "xyz_bond":
        model = two_transmon_model()
        if levels != 5:
            model = two_transmon_model(
                params1=replace(model.transmons[0], levels=levels),
                params2=replace(model.transmons[1], levels=levels),
            )
        use_leak = False
        d = 9
    else:
        model = single_transmon_model()
        if levels != 5:
            model = single_transmon_model(
                params=replace(model.transmons[0], levels=levels)
            )
        use_leak = True
        d = 3
    ansatz = standard_ansatz(model, saturation_mode=saturation_mode)
    return OptimizationProblem(
        label=label,
        model=model,
        ansatz=ansatz,
        target=target,
        d=d,
        use_leakage_penalty=use_leak,
        lam=lam,
        delta_b=delta_b,
        tau=tau,
    )


@dataclass(frozen=True)
class LBFGSOptions:
    """Optimizer and propagation settings for one L-BFGS run."""

    max_iterations: int = 2000
    grad_tol: float = 1e-9
    rel_obj_tol: float = 1e-8
    memory: int = 10
    armijo_c1: float = 1e-4
    contraction: float = 0.5
    max_backtracks: int = 40
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    target_objective: float | None = None
    engine: str = "auto"


@dataclass
class OptimizationTrace:
    """Per-iteration record of one optimization run."""

    objectives: list = field(default_factory=list)
    stop_metrics: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    termination: str = "running"
    n_value_evals: int = 0
    n_gradient_evals: int = 0
    best_objective: float = np.inf
    best_stop_metric: float = np.inf

    def record(self, objective, stop_metric, grad_norm, step, wall):
        self.objectives.append(float(objective))
        self.stop_metrics.append(float(stop_metric))
        self.grad_norms.append(float(grad_norm))
        self.step_lengths.append(float(step))
        self.wall_times.append(float(wall))


def _two_loop(g, s_list, y_list, rho_list):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if s_list:
        gamma = np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
        q *= gamma
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        q += (a - rho * np.dot(y, q)) * s
    return q


def lbfgs(fun, x0: np.ndarray, options: LBFGSOptions) -> tuple[np.ndarray, OptimizationTrace]:
    """Limited-memory BFGS with a backtracking (Armijo) line search.

    fun(x, need_grad) must return (value, gradient-or-None, stop_metric);
    the stop metric is the quantity compared against target_objective (for
    pulse problems the gate infidelity, excluding the leakage penalty).
    Returns the best-seen iterate; accepted iterations never increase the
    objective.
    """
    t_start = time.perf_counter()
    x = np.array(x0, dtype=float)
    trace = OptimizationTrace()

    f, g, metric = fun(x, True)
    trace.n_value_evals += 1
    trace.n_gradient_evals += 1
    best_x, best_f = x.copy(), f
    trace.best_objective = best_f
    trace.best_stop_metric = metric
    trace.record(f, metric, np.abs(g).max(), 0.0, time.perf_counter() - t_start)

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []

    for it in range(1, options.max_iterations + 1):
        gnorm = np.abs(g).max()
        if gnorm < options.grad_tol:
            trace.termination = "gradient_norm"
            break
        if options.target_objective is not None and metric <= options.target_objective:
            trace.termination = "target_objective"
            break

        d = -_two_loop(g, s_list, y_list, rho_list)
        dg = np.dot(g, d)
        if dg >= 0.0:
            d = -g
            dg = -np.dot(g, g)
        step = 1.0 if s_list else min(1.0, 1.0 / max(gnorm, 1e-12))

        accepted = False
        for _ in range(options.max_backtracks):
            x_new = x + step * d
            f_new, _, metric_new = fun(x_new, False)
            trace.n_value_evals += 1
            if f_new <= f + options.armijo_c1 * step * dg:
                accepted = True
                break
            step *= options.contraction
        if not accepted:
            trace.termination = "line_search_failure"
            break

        _, g_new, metric_new = fun(x_new, True)
        trace.n_value_evals += 1
        trace.n_gradient_evals += 1

        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > options.memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)

        rel_change = abs(f - f_new) / max(abs(f), 1e-30)
        x, f, g, metric = x_new, f_new, g_new, metric_new
        if f < best_f:
            best_f, best_x = f, x.copy()
            trace.best_objective = best_f
            trace.best_stop_metric = metric
        trace.record(f, metric, np.abs(g).max(), step, time.perf_counter() - t_start)

        if rel_change < options.rel_obj_tol:
            trace.termination = "relative_objective_change"
            break
    else:
        trace.termination = "max_iterations"

    if trace.termination == "running":
        trace.termination = "max_iterations"
    return best_x, trace


def _objective_fn(problem: OptimizationProblem, options: LBFGSOptions):
    def fun(x, need_grad):
        value = gate_objective(
            problem.target,
            problem.model,
            problem.ansatz,
            x,
            use_leakage_penalty=problem.use_leakage_penalty,
            leakage_weight=problem.leakage_weight,
            abs_tol=options.abs_tol,
            rel_tol=options.rel_tol,
            derivatives="all" if need_grad else None,
            engine=options.engine,
        )
        return value.total, value.gradient, value.infidelity

    return fun


def minimize(
    problem: OptimizationProblem,
    initial_parameters,
    options: LBFGSOptions | None = None,
) -> tuple[ControlParameters, OptimizationTrace]:
    """Optimize the control parameters for one problem from a given start."""
    options = options or LBFGSOptions()
    if isinstance(initial_parameters, ControlParameters):
        x0 = initial_parameters.values
    else:
        x0 = np.asarray(initial_parameters, dtype=float)
    if x0.size != problem.n_params:
        raise ValueError(
            f"problem takes {problem.n_params} parameters, got {x0.size}"
        )
    best_x, trace = lbfgs(_objective_fn(problem, options), x0, options)
    return ControlParameters.for_channels(problem.ansatz, best_x), trace


def _run_seed(problem, child_seed, options):
    rng = np.random.default_rng(child_seed)
    x0 = random_initial_parameters(problem.ansatz, rng)
    return minimize(problem, x0, options)


def worker_count() -> int:
    """Worker pool size, from STRINGMELT_WORKERS (default 1)."""
    try:
        return max(1, int(os.environ.get("STRINGMELT_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class MultiStartResult:
    best_parameters: ControlParameters
    best_trace: OptimizationTrace
    best_seed_index: int
    traces: list


def multi_start(
    problem: OptimizationProblem,
    n_seeds: int,
    rng_seed: int,
    options: LBFGSOptions | None = None,
) -> MultiStartResult:
    """Independent seeded optimizations; returns the minimum-objective run.

    Seeds derive deterministically from rng_seed.  When the options carry a
    target objective, later seeds are skipped once a run reaches it.
    """
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    options = options or LBFGSOptions()
    child_seeds = np.random.SeedSequence(rng_seed).spawn(n_seeds)
    results = []
    workers = worker_count()
    if workers > 1 and n_seeds > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_seed, problem, seed, options)
                for seed in child_seeds
            ]
            results = [f.result() for f in futures]
    else:
        for seed in child_seeds:
            results.append(_run_seed(problem, seed, options))
            if (
                options.target_objective is not None
                and results[-1][1].best_objective <= options.target_objective
            ):
                break
    best_idx = int(
        np.argmin([trace.best_objective for _, trace in results])
    )
    best_params, best_trace = results[best_idx]
    return MultiStartResult(
        best_parameters=best_params,
        best_trace=best_trace,
        best_seed_index=best_idx,
        traces=[trace for _, trace in results],
    )


def verified_infidelity(
    problem: OptimizationProblem,
    parameters,
    options: LBFGSOptions | None = None,
    tighten: float = 10.0,
) -> ObjectiveValue:
    """Re-evaluate a result with an independent propagation at tighter
    integrator tolerance (default 10x)."""
    options = options or LBFGSOptions()
    return gate_objective(
        problem.target,
        problem.model,
        problem.ansatz,
        parameters.values if isinstance(parameters, ControlParameters) else parameters,
        use_leakage_penalty=problem.use_leakage_penalty,
        leakage_weight=problem.leakage_weight,
        abs_tol=options.abs_tol / tighten,
        rel_tol=options.rel_tol / tighten,
        derivatives=None,
        engine=options.engine,
    )


@dataclass
class PulseOptimizationOutcome:
    """Driver result: best parameters, verified quality, and run records."""

    parameters: ControlParameters
    objective: float
    verified_infidelity: float
    verified_leakage: float
    converged: bool
    infidelity_target: float | None
    rng_seed: int
    seeds_used: int
    stages: list
    traces: list


def optimize_pulse(
    problem: OptimizationProblem,
    rng_seed: int = 2021,
    n_seeds: int = 1,
    options: LBFGSOptions | None = None,
    coarse_options: LBFGSOptions | None = None,
    infidelity_target: float | None = None,
    initial: ControlParameters | None = None,
) -> PulseOptimizationOutcome:
    """Full pulse-design run: seeded descent at coarse integrator
    tolerance, refinement at the working tolerance from the best start,
    and an independent re-verification at 10x tighter tolerance.

    The two stages share the iteration budget of `options.max_iterations`.
    With `initial` given (warm start from another optimum), random seeds
    are skipped.
    """
    options = options or LBFGSOptions()
    if coarse_options is None:
        coarse_options = replace(
            options,
            abs_tol=max(options.abs_tol, 1e-6),
            rel_tol=max(options.rel_tol, 1e-6),
        )
    target_third = infidelity_target / 3.0 if infidelity_target else None
    coarse_budget = max(1, int(0.6 * options.max_iterations))
    coarse_stage = replace(
        coarse_options,
        max_iterations=coarse_budget,
        target_objective=max(target_third or 0.0, 3.0 * coarse_options.rel_tol),
    )

    stages = []
    traces = []
    if initial is not None:
        best_params, trace = minimize(problem, initial, coarse_stage)
        traces.append(trace)
        seeds_used = 0
    else:
        ms = multi_start(problem, n_seeds, rng_seed, coarse_stage)
        best_params, trace = ms.best_parameters, ms.best_trace
        traces.extend(ms.traces)
        seeds_used = len(ms.traces)
    used = sum(len(t.objectives) - 1 for t in traces)
    stages.append(
        {
            "stage": "coarse",
            "abs_tol": coarse_stage.abs_tol,
            "rel_tol": coarse_stage.rel_tol,
            "iterations": used,
            "objective": trace.best_objective,
            "termination": trace.termination,
        }
    )

    refine_budget = max(1, options.max_iterations - used)
    refine_stage = replace(
        options,
        max_iterations=refine_budget,
        target_objective=target_third,
    )
    best_params, trace = minimize(problem, best_params, refine_stage)
    traces.append(trace)
    stages.append(
        {
            "stage": "refine",
            "abs_tol": refine_stage.abs_tol,
            "rel_tol": refine_stage.rel_tol,
            "iterations": len(trace.objectives) - 1,
            "objective": trace.best_objective,
            "termination": trace.termination,
        }
    )

    verified = verified_infidelity(problem, best_params, options)
    converged = (
        True
        if infidelity_target is None
        else verified.infidelity <= infidelity_target
    )
    return PulseOptimizationOutcome(
        parameters=best_params,
        objective=float(trace.best_objective),
        verified_infidelity=float(verified.infidelity),
        verified_leakage=float(verified.leakage),
        converged=converged,
        infidelity_target=infidelity_target,
        rng_seed=rng_seed,
        seeds_used=seeds_used,
        stages=stages,
        traces=traces,
    )
