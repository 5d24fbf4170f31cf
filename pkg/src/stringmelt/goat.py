"""Joint propagation of a device propagator and its parameter derivatives
(GOAT equations of motion), with the gate-infidelity and leakage objectives.

The propagator runs in the idle rotating frame without rotating-wave
approximation.  Requested tolerances bound the accumulated (end-to-end)
integration error: the stepper controls error per unit step, so
``norm(U^dag U - 1)`` stays below the tolerance scale for any controls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernel
from .controls import (
    ChannelAnsatz,
    ControlParameters,
    SATURATION_MODES,
    field_gradient,
    field_value,
)
from .device import (
    DeviceModel,
    SubspaceProjectors,
    channel_operator_parts,
    computational_indices,
    computational_projector,
    drift_hamiltonian_rotating,
)

__all__ = [
    "PropagationResult",
    "PropagationError",
    "ObjectiveValue",
    "propagate",
    "infidelity",
    "leakage_penalty",
    "gate_objective",
    "unitarity_deficit",
]


class PropagationError(RuntimeError):
    """The adaptive integrator failed (step underflow or step budget)."""


@dataclass(frozen=True)
class PropagationResult:
    """Final-time propagator, derivative blocks, and the leakage integral."""

    u_final: np.ndarray
    du_final: np.ndarray | None
    deriv_indices: np.ndarray | None
    leakage_integral: float
    dleakage: np.ndarray | None
    control_time: float
    n_steps: int
    n_rejected: int
    abs_tol: float
    rel_tol: float
    step_sizes: np.ndarray | None = None


@dataclass(frozen=True)
class ObjectiveValue:
    """Infidelity g, leakage L, total J = g + weight L, and the gradient."""

    infidelity: float
    leakage: float
    total: float
    gradient: np.ndarray | None


def _check_setup(model: DeviceModel, ansatz: list[ChannelAnsatz]):
    if len(ansatz) != len(model.channels):
        raise ValueError("one ansatz per model channel is required")
    for a, ch in zip(ansatz, model.channels):
        if a.channel != ch:
            raise ValueError("ansatz channels must match the model's channels")
    tau_cs = {a.tau_c for a in ansatz}
    if len(tau_cs) != 1:
        raise ValueError("all channels must share one control time")
    modes = {a.saturation_mode for a in ansatz}
    if len(modes) != 1:
        raise ValueError("all channels must share one saturation mode")
    return tau_cs.pop(), modes.pop()


def _kernel_inputs(model: DeviceModel, ansatz: list[ChannelAnsatz]):
    n_ch = len(ansatz)
    dim = model.dim
    s_stack = np.zeros((n_ch, dim, dim), dtype=complex)
    a_stack = np.zeros((n_ch, dim, dim), dtype=complex)
    has_a = np.zeros(n_ch, dtype=np.int64)
    wfreq = np.zeros(n_ch)
    for c, a in enumerate(ansatz):
        static, raising, w = channel_operator_parts(model, a.channel)
        s_stack[c] = static
        a_stack[c] = raising
        has_a[c] = int(np.abs(raising).max() > 0)
        wfreq[c] = w
    carrier_ang = np.array([2.0 * np.pi * a.channel.carrier for a in ansatz])
    bound = np.array([a.channel.bound for a in ansatz])
    tau_r = np.array([a.tau_r for a in ansatz])
    omega_m = np.array([a.omega_m for a in ansatz])
    offsets = np.zeros(n_ch + 1, dtype=np.int64)
    for c, a in enumerate(ansatz):
        offsets[c + 1] = offsets[c] + a.n_params
    return s_stack, a_stack, has_a, wfreq, carrier_ang, bound, tau_r, omega_m, offsets


def _param_channel_map(offsets: np.ndarray, dpar: np.ndarray) -> np.ndarray:
    chan = np.searchsorted(offsets, dpar, side="right") - 1
    return chan.astype(np.int64)


def _resolve_derivatives(derivatives, n_params: int) -> np.ndarray | None:
    if derivatives is None:
        return None
    if isinstance(derivatives, str):
        if derivatives == "all":
            return np.arange(n_params, dtype=np.int64)
        if derivatives == "none":
            return None
        raise ValueError(f"unknown derivative selector {derivatives!r}")
    idx = np.asarray(derivatives, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_params):
        raise ValueError("derivative index out of range")
    return idx


def propagate(
    model: DeviceModel,
    ansatz: list[ChannelAnsatz],
    params,
    abs_tol: float = 1e-8,
    rel_tol: float = 1e-8,
    derivatives="all",
    compute_leakage: bool | None = None,
    engine: str = "auto",
    max_steps: int = 20_000_000,
    record_steps: bool = False,
    replay_steps: np.ndarray | None = None,
) -> PropagationResult:
    """Propagate U(0)=1 to the control time with derivative co-propagation.

    derivatives: "all", "none"/None, or an index array selecting the batch
    of parameters whose derivative matrices are co-propagated.  The
    accepted time grid depends only on U, so any batching returns
    identical values for the blocks it propagates.

    engine: "dense" integrates the full matrix; "blocks" splits the
    integration over total-excitation blocks (valid whenever every channel
    conserves excitation number, i.e. no microwave channels); "numpy" is a
    slow reference implementation; "auto" picks blocks when valid.

    record_steps stores the accepted step sequence in the result;
    replay_steps walks a previously recorded sequence instead of adapting
    (dense engine only), which pins the grid for finite-difference work.
    """
    if abs_tol <= 0 or rel_tol <= 0:
        raise ValueError("tolerances must be positive")
    tau_c, sat_mode_name = _check_setup(model, ansatz)
    if isinstance(params, ControlParameters):
        params = params.values
    params = np.ascontiguousarray(params, dtype=float)
    n_params = sum(a.n_params for a in ansatz)
    if params.shape != (n_params,):
        raise ValueError(f"expected {n_params} parameters, got {params.shape}")
    dpar = _resolve_derivatives(derivatives, n_params)

    conserving = all(ch.kind in ("detuning", "coupling") for ch in model.channels)
    if compute_leakage is None:
        compute_leakage = model.n_transmons == 1
    if engine == "auto":
        engine = "blocks" if (conserving and not compute_leakage) else "dense"
    if engine == "blocks" and not conserving:
        raise ValueError("block engine requires excitation-conserving channels")
    if engine == "blocks" and compute_leakage:
        raise ValueError("leakage accumulation requires the dense engine")

    sat_mode = SATURATION_MODES.index(sat_mode_name)
    inputs = _kernel_inputs(model, ansatz)
    s_stack, a_stack, has_a, wfreq, carrier_ang, bound, tau_r, omega_m, offsets = inputs
    h0 = tau_c * 1e-4

    projectors = computational_projector(model)
    pd_diag = np.real(np.diag(projectors.p_d))
    pd_idx = np.flatnonzero(pd_diag > 0).astype(np.int64)
    pd_val = pd_diag[pd_idx]
    comp_idx = projectors.comp_indices.astype(np.int64)

    nd = 0 if dpar is None else dpar.size
    dpar_arr = np.zeros(0, dtype=np.int64) if dpar is None else dpar
    dpar_channel = _param_channel_map(offsets, dpar_arr)

    if engine == "numpy":
        y, leak, status, acc, rej = _numpy_propagate(
            drift_hamiltonian_rotating(model), inputs, model, ansatz, params,
            dpar_arr, int(compute_leakage), pd_idx, pd_val, comp_idx,
            tau_c, rel_tol, abs_tol, h0,
        )
        return _package(
            y, leak, status, acc, rej, model.dim, nd, dpar_arr,
            compute_leakage, tau_c, abs_tol, rel_tol,
        )

    c_nodes, a_tab, b5, e_tab = _kernel.butcher_tables()
    replay = (
        np.zeros(0) if replay_steps is None
        else np.ascontiguousarray(replay_steps, dtype=float)
    )
    if replay.size and engine != "dense":
        raise ValueError("step replay is supported by the dense engine only")
    record_buf = np.zeros(4_000_000 if record_steps else 0)

    if engine == "dense":
        y, leak, status, acc, rej = _kernel.dp5_propagate(
            np.ascontiguousarray(drift_hamiltonian_rotating(model)),
            s_stack, a_stack, has_a, wfreq, params, offsets, carrier_ang,
            bound, tau_r, float(tau_c), omega_m, sat_mode, dpar_arr,
            dpar_channel, int(compute_leakage), pd_idx, pd_val, comp_idx,
            float(tau_c), rel_tol, abs_tol, h0, max_steps,
            c_nodes, a_tab, b5, e_tab, replay, record_buf,
        )
        return _package(
            y, leak, status, acc, rej, model.dim, nd, dpar_arr,
            compute_leakage, tau_c, abs_tol, rel_tol,
            step_sizes=record_buf[:acc].copy() if record_steps else None,
        )

    # block engine: integrate each total-excitation block independently
    dim = model.dim
    ntot = model.total_number_diagonal()
    h_drift = drift_hamiltonian_rotating(model)
    u = np.zeros((dim, dim), dtype=complex)
    du = np.zeros((nd, dim, dim), dtype=complex) if nd else None
    total_acc = total_rej = 0
    for m in range(int(ntot.max()) + 1):
        idx = np.flatnonzero(ntot == m)
        sub = np.ix_(idx, idx)
        y, leak, status, acc, rej = _kernel.dp5_propagate(
            np.ascontiguousarray(h_drift[sub]),
            np.ascontiguousarray(s_stack[:, idx][:, :, idx]),
            np.ascontiguousarray(a_stack[:, idx][:, :, idx]),
            has_a, wfreq, params, offsets, carrier_ang, bound, tau_r,
            float(tau_c), omega_m, sat_mode, dpar_arr, dpar_channel,
            0, pd_idx[:0], pd_val[:0], comp_idx[:0],
            float(tau_c), rel_tol, abs_tol, h0, max_steps,
            c_nodes, a_tab, b5, e_tab, np.zeros(0), np.zeros(0),
        )
        _raise_on_failure(status, acc, rej)
        d_b = idx.size
        u[sub] = y[:, :d_b]
        for b in range(nd):
            du[b][sub] = y[:, (1 + b) * d_b : (2 + b) * d_b]
        total_acc += acc
        total_rej += rej
    return PropagationResult(
        u_final=u,
        du_final=du,
        deriv_indices=dpar_arr.copy() if nd else None,
        leakage_integral=0.0,
        dleakage=np.zeros(nd) if nd else None,
        control_time=tau_c,
        n_steps=total_acc,
        n_rejected=total_rej,
        abs_tol=abs_tol,
        rel_tol=rel_tol,
    )


def _raise_on_failure(status: int, acc: int, rej: int):
    if status == _kernel.STATUS_STEP_UNDERFLOW:
        raise PropagationError(
            f"step size underflow after {acc} accepted / {rej} rejected steps"
        )
    if status == _kernel.STATUS_MAX_STEPS:
        raise PropagationError(
            f"step budget exhausted ({acc} accepted / {rej} rejected steps)"
        )
    if status == _kernel.STATUS_RECORD_OVERFLOW:
        raise PropagationError("step-record buffer overflow")


def _package(
    y, leak, status, acc, rej, dim, nd, dpar, with_leak, tau_c, atol, rtol,
    step_sizes=None,
):
    _raise_on_failure(status, acc, rej)
    u = np.ascontiguousarray(y[:, :dim])
    du = None
    dleak = None
    if nd:
        du = np.empty((nd, dim, dim), dtype=complex)
        for b in range(nd):
            du[b] = y[:, (1 + b) * dim : (2 + b) * dim]
        dleak = leak[1:] / tau_c if with_leak else np.zeros(nd)
    return PropagationResult(
        u_final=u,
        du_final=du,
        deriv_indices=dpar.copy() if nd else None,
        leakage_integral=float(leak[0]) / tau_c if with_leak else 0.0,
        dleakage=dleak,
        control_time=tau_c,
        n_steps=int(acc),
        n_rejected=int(rej),
        abs_tol=atol,
        rel_tol=rtol,
        step_sizes=step_sizes,
    )


def _numpy_propagate(
    h_drift, inputs, model, ansatz, params, dpar, do_leak, pd_idx, pd_val,
    comp_idx, t_end, rtol, atol, h0,
):
    """Reference integrator in plain numpy; same scheme as the kernel."""
    s_stack, a_stack, has_a, wfreq, carrier_ang, bound, tau_r, omega_m, offsets = inputs
    dim = h_drift.shape[0]
    nd = dpar.size
    width = (1 + nd) * dim
    c_nodes, a_tab, b5, e_tab = _kernel.butcher_tables()
    n_ch = len(ansatz)

    def fields(t):
        f = np.empty(n_ch)
        grads = []
        for c, a in enumerate(ansatz):
            p = params[offsets[c] : offsets[c + 1]]
            f[c] = field_value(a, p, min(max(t, 0.0), a.tau_c))
            grads.append(field_gradient(a, p, min(max(t, 0.0), a.tau_c)))
        return f, np.concatenate(grads)

    def rhs(t, y):
        f, g = fields(t)
        ops = np.empty((n_ch, dim, dim), dtype=complex)
        for c in range(n_ch):
            ph = np.exp(1j * wfreq[c] * t)
            ops[c] = s_stack[c] + ph * a_stack[c] + (ph * a_stack[c]).conj().T
        h = h_drift + np.tensordot(f, ops, axes=1)
        dy = -1j * (h @ y)
        u = y[:, :dim]
        dl = np.zeros(1 + nd)
        if do_leak:
            uc = u[np.ix_(pd_idx, comp_idx)]
            dl[0] = float(np.sum(pd_val[:, None] * np.abs(uc) ** 2))
        for b in range(nd):
            p = dpar[b]
            c = int(np.searchsorted(offsets, p, side="right") - 1)
            ou = ops[c] @ u
            dy[:, (1 + b) * dim : (2 + b) * dim] += -1j * g[p] * ou
            if do_leak:
                dub = y[np.ix_(pd_idx, comp_idx + (1 + b) * dim)]
                uc = u[np.ix_(pd_idx, comp_idx)]
                dl[1 + b] = 2.0 * float(
                    np.sum(pd_val[:, None] * (uc.conj() * dub).real)
                )
        return dy, dl

    y = np.zeros((dim, width), dtype=complex)
    y[:, :dim] = np.eye(dim)
    leak = np.zeros(1 + nd)
    t, h = 0.0, h0
    k = [None] * 7
    kl = np.zeros((7, 1 + nd))
    k[0], kl[0] = rhs(t, y)
    acc = rej = 0
    status = _kernel.STATUS_OK
    while t < t_end * (1 - 1e-14):
        h = min(h, t_end - t)
        if h < 1e-13 * t_end:
            status = _kernel.STATUS_STEP_UNDERFLOW
            break
        for s in range(1, 7):
            ytmp = y.copy()
            for j in range(s):
                if a_tab[s, j]:
                    ytmp += h * a_tab[s, j] * k[j]
            k[s], kl[s] = rhs(t + c_nodes[s] * h, ytmp)
        y5 = y + h * sum(b * k[s] for s, b in enumerate(b5) if b)
        leak5 = leak + h * (b5 @ kl)
        err = h * sum(e * k[s][:, :dim] for s, e in enumerate(e_tab) if e)
        sc = (atol + rtol * np.maximum(np.abs(y[:, :dim]), np.abs(y5[:, :dim]))) * (
            h / t_end
        )
        enorm = float(np.sqrt(np.mean((np.abs(err) / sc) ** 2)))
        if enorm <= 1.0:
            t += h
            y, leak = y5, leak5
            k[0], kl[0] = k[6], kl[6].copy()
            acc += 1
        else:
            rej += 1
        fac = 0.9 * enorm**-0.25 if enorm > 1e-30 else 5.0
        h *= min(5.0, max(0.2, fac))
    return y, leak, status, acc, rej


def unitarity_deficit(u: np.ndarray) -> float:
    """Frobenius distance of U^dag U from the identity."""
    d = u.shape[0]
    return float(np.linalg.norm(u.conj().T @ u - np.eye(d)))


def infidelity(
    u_target: np.ndarray,
    result: PropagationResult,
    projectors: SubspaceProjectors,
    d: int,
) -> ObjectiveValue:
    """Projective-SU gate infidelity on the computational block.

    g = 1 - |Tr(U_T^dag P_c U P_c)|^2 / d^2, with the exact gradient
    dg/dp = -(2/d^2) Re[conj(Tr(U_T^dag P_c U P_c)) Tr(U_T^dag P_c dU_p P_c)].
    """
    comp = projectors.comp_indices
    if u_target.shape != (d, d) or comp.size != d:
        raise ValueError("target dimension does not match the computational block")
    u_block = result.u_final[np.ix_(comp, comp)]
    m = u_target.conj().T
    overlap = np.trace(m @ u_block)
    g = 1.0 - (abs(overlap) ** 2) / d**2
    grad = None
    if result.du_final is not None:
        du_blocks = result.du_final[:, comp[:, None], comp[None, :]]
        d_overlap = np.einsum("ik,nki->n", m, du_blocks)
        grad = -(2.0 / d**2) * np.real(np.conj(overlap) * d_overlap)
    return ObjectiveValue(
        infidelity=float(g), leakage=0.0, total=float(g), gradient=grad
    )


def leakage_penalty(result: PropagationResult, weight: float = 1.0) -> ObjectiveValue:
    """Time-averaged weighted leakage accumulated during the propagation."""
    grad = None
    if result.dleakage is not None:
        grad = weight * result.dleakage
    return ObjectiveValue(
        infidelity=0.0,
        leakage=float(result.leakage_integral),
        total=weight * float(result.leakage_integral),
        gradient=grad,
    )


def objective_from_result(
    u_target: np.ndarray,
    result: PropagationResult,
    projectors: SubspaceProjectors,
    d: int,
    use_leakage_penalty: bool,
    leakage_weight: float = 1.0,
) -> ObjectiveValue:
    """Combine infidelity and (optionally) leakage from one propagation."""
    fid = infidelity(u_target, result, projectors, d)
    if not use_leakage_penalty:
        return fid
    leak = leakage_penalty(result, leakage_weight)
    grad = None
    if fid.gradient is not None:
        grad = fid.gradient + leak.gradient
    return ObjectiveValue(
        infidelity=fid.infidelity,
        leakage=leak.leakage,
        total=fid.total + leak.total,
        gradient=grad,
    )


def gate_objective(
    u_target: np.ndarray,
    model: DeviceModel,
    ansatz: list[ChannelAnsatz],
    params,
    use_leakage_penalty: bool,
    leakage_weight: float = 1.0,
    abs_tol: float = 1e-8,
    rel_tol: float = 1e-8,
    derivatives="all",
    engine: str = "auto",
) -> ObjectiveValue:
    """Full control objective J = g + weight * L and its gradient."""
    result = propagate(
        model,
        ansatz,
        params,
        abs_tol=abs_tol,
        rel_tol=rel_tol,
        derivatives=derivatives,
        compute_leakage=use_leakage_penalty,
        engine=engine,
    )
    projectors = computational_projector(model)
    return objective_from_result(
        u_target, result, projectors, model.computational_dim,
        use_leakage_penalty, leakage_weight,
    )


def finite_difference_gradient(
    u_target: np.ndarray,
    model: DeviceModel,
    ansatz: list[ChannelAnsatz],
    params,
    indices,
    step: float = 1e-6,
    abs_tol: float = 1e-11,
    rel_tol: float = 1e-11,
    use_leakage_penalty: bool = False,
    leakage_weight: float = 1.0,
) -> np.ndarray:
    """Central finite differences of the objective for selected parameters.

    The time grid is recorded once at the base point and replayed for every
    shifted evaluation, so the integration error varies smoothly with the
    parameters and cancels in the difference quotient.
    """
    params = np.asarray(params, dtype=float)
    base = propagate(
        model, ansatz, params, abs_tol=abs_tol, rel_tol=rel_tol,
        derivatives=None, compute_leakage=use_leakage_penalty,
        engine="dense", record_steps=True,
    )
    grid = base.step_sizes
    projectors = computational_projector(model)
    d = model.computational_dim
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        side = []
        for sign in (1.0, -1.0):
            shifted = params.copy()
            shifted[i] += sign * step
            r = propagate(
                model, ansatz, shifted, abs_tol=abs_tol, rel_tol=rel_tol,
                derivatives=None, compute_leakage=use_leakage_penalty,
                engine="dense", replay_steps=grid,
            )
            side.append(
                objective_from_result(
                    u_target, r, projectors, d, use_leakage_penalty,
                    leakage_weight,
                ).total
            )
        out[j] = (side[0] - side[1]) / (2.0 * step)
    return out
