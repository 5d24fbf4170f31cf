"""Transmon device models: truncated Duffing oscillators with controls.

Frequencies and anharmonicities are stored as ordinary frequencies in GHz
(omega/2pi); Hamiltonians are built in angular units of rad/ns.  Times are
in ns.  The spin chain's local kets (-, 0, +) map onto oscillator levels
(0, 1, 2) by index identification, so computational-subspace matrices need
no reordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TransmonParams",
    "ControlChannel",
    "DeviceModel",
    "SubspaceProjectors",
    "single_transmon_model",
    "two_transmon_model",
    "hamiltonian_at",
    "rotating_frame_generator",
    "rotating_frame_hamiltonian",
    "channel_operator_parts",
    "drift_hamiltonian_rotating",
    "computational_projector",
    "computational_indices",
    "embed_target",
    "extract_block",
    "excitation_block_check",
    "DEFAULT_TRANSMON_1",
    "DEFAULT_TRANSMON_2",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TransmonParams:
    """Idle frequency and anharmonicity (GHz) of one transmon."""

    frequency: float
    anharmonicity: float
    levels: int = 5

    def __post_init__(self):
        if self.levels < 3:
            raise ValueError("need at least 3 oscillator levels for a qutrit")
        if self.anharmonicity >= 0:
            raise ValueError("anharmonicity must be negative")


# Hardware defaults for the tunable-transmon architecture.
DEFAULT_TRANSMON_1 = TransmonParams(frequency=5.634, anharmonicity=-0.266)
DEFAULT_TRANSMON_2 = TransmonParams(frequency=5.447, anharmonicity=-0.270)


@dataclass(frozen=True)
class ControlChannel:
    """One control line: kind, target transmon(s), carrier and bound in GHz."""

    kind: str
    target: tuple[int, ...]
    carrier: float
    bound: float

    def __post_init__(self):
        if self.kind not in ("microwave", "detuning", "coupling"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.bound <= 0:
            raise ValueError("channel bound must be positive")


def _lowering(levels: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1.0, levels)), 1).astype(complex)


@dataclass(frozen=True)
class DeviceModel:
    """One or two coupled transmons plus their control channels."""

    transmons: tuple[TransmonParams, ...]
    channels: tuple[ControlChannel, ...]
    _ops: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.transmons) not in (1, 2):
            raise ValueError("model supports 1 or 2 transmons")
        kinds = {c.kind for c in self.channels}
        if len(self.transmons) == 1 and kinds - {"microwave"}:
            raise ValueError("single-transmon model takes only microwave channels")
        if len(self.transmons) == 2 and "microwave" in kinds:
            raise ValueError("two-transmon model omits microwave channels")
        self._build_ops()

    def _build_ops(self):
        levels = [t.levels for t in self.transmons]
        eyes = [np.eye(l, dtype=complex) for l in levels]
        lowers = []
        numbers = []
        for i, l in enumerate(levels):
            a = _lowering(l)
            factors_a = list(eyes)
            factors_a[i] = a
            factors_n = list(eyes)
            factors_n[i] = np.diag(np.arange(l, dtype=float)).astype(complex)
            if len(levels) == 1:
                lowers.append(factors_a[0])
                numbers.append(factors_n[0])
            else:
                lowers.append(np.kron(factors_a[0], factors_a[1]))
                numbers.append(np.kron(factors_n[0], factors_n[1]))
        self._ops["lower"] = lowers
        self._ops["number"] = numbers
        if len(levels) == 2:
            self._ops["hop"] = lowers[0].conj().T @ lowers[1]

    @property
    def dim(self) -> int:
        d = 1
        for t in self.transmons:
            d *= t.levels
        return d

    @property
    def n_transmons(self) -> int:
        return len(self.transmons)

    @property
    def computational_dim(self) -> int:
        return 3 ** len(self.transmons)

    def number_op(self, i: int) -> np.ndarray:
        return self._ops["number"][i]

    def lowering_op(self, i: int) -> np.ndarray:
        return self._ops["lower"][i]

    def hop_op(self) -> np.ndarray:
        """a_1^dag a_2, defined for the two-transmon model."""
        return self._ops["hop"]

    def total_number_diagonal(self) -> np.ndarray:
        diag = np.zeros(self.dim)
        for i in range(self.n_transmons):
            diag += np.real(np.diag(self.number_op(i)))
        return np.rint(diag).astype(int)


def single_transmon_model(
    params: TransmonParams = DEFAULT_TRANSMON_1,
    microwave_bound: float = 0.08,
) -> DeviceModel:
    """Transmon with two microwave drives at the 0-1 and 1-2 transitions."""
    w01 = params.frequency
    w12 = params.frequency + params.anharmonicity
    channels = (
        ControlChannel("microwave", (0,), carrier=w01, bound=microwave_bound),
        ControlChannel("microwave", (0,), carrier=w12, bound=microwave_bound),
    )
    return DeviceModel(transmons=(params,), channels=channels)


def two_transmon_model(
    params1: TransmonParams = DEFAULT_TRANSMON_1,
    params2: TransmonParams = DEFAULT_TRANSMON_2,
    detuning_bound: float = 0.5,
    coupling_bound: float = 0.01,
) -> DeviceModel:
    """Two tunable transmons with frequency-detuning and coupling controls."""
    channels = (
        ControlChannel("detuning", (0,), carrier=0.0, bound=detuning_bound),
        ControlChannel("detuning", (1,), carrier=0.0, bound=detuning_bound),
        ControlChannel("coupling", (0, 1), carrier=0.0, bound=coupling_bound),
    )
    return DeviceModel(transmons=(params1, params2), channels=channels)


def _duffing_drift(model: DeviceModel, include_idle: bool) -> np.ndarray:
    h = np.zeros((model.dim, model.dim), dtype=complex)
    for i, t in enumerate(model.transmons):
        n = model.number_op(i)
        if include_idle:
            h += TWO_PI * t.frequency * n
        h += TWO_PI * t.anharmonicity / 2.0 * (n @ n - n)
    return h


def _lab_channel_operator(model: DeviceModel, channel: ControlChannel) -> np.ndarray:
    if channel.kind == "microwave":
        a = model.lowering_op(channel.target[0])
        return TWO_PI * (a + a.conj().T)
    if channel.kind == "detuning":
        return TWO_PI * model.number_op(channel.target[0])
    hop = model.hop_op()
    return TWO_PI * (hop + hop.conj().T)


def hamiltonian_at(model: DeviceModel, control_values, t: float = 0.0) -> np.ndarray:
    """Lab-frame device Hamiltonian (rad/ns) for given channel values (GHz)."""
    values = np.asarray(control_values, dtype=float)
    if values.shape != (len(model.channels),):
        raise ValueError(
            f"expected {len(model.channels)} control values, got {values.shape}"
        )
    h = _duffing_drift(model, include_idle=True)
    for value, channel in zip(values, model.channels):
        if value != 0.0:
            h += value * _lab_channel_operator(model, channel)
    return h


def rotating_frame_generator(model: DeviceModel) -> np.ndarray:
    """Diagonal generator sum_i omega_i n_i (rad/ns) of the idle frame."""
    g = np.zeros((model.dim, model.dim), dtype=complex)
    for i, t in enumerate(model.transmons):
        g += TWO_PI * t.frequency * model.number_op(i)
    return g


def channel_operator_parts(
    model: DeviceModel, channel: ControlChannel
) -> tuple[np.ndarray, np.ndarray, float]:
    """Rotating-frame channel operator as (static, raising, frequency).

    The operator at time t is  static + exp(i w t) raising + h.c. of the
    raising part.  Detuning channels are frame-invariant; microwave and
    coupling operators pick up idle-frequency phases.
    """
    if channel.kind == "detuning":
        return TWO_PI * model.number_op(channel.target[0]), np.zeros(
            (model.dim, model.dim), dtype=complex
        ), 0.0
    if channel.kind == "microwave":
        i = channel.target[0]
        raising = TWO_PI * model.lowering_op(i).conj().T
        return np.zeros((model.dim, model.dim), dtype=complex), raising, TWO_PI * model.transmons[i].frequency
    # coupling: a1^dag a2 rotates at omega_1 - omega_2
    raising = TWO_PI * model.hop_op()
    w = TWO_PI * (model.transmons[0].frequency - model.transmons[1].frequency)
    return np.zeros((model.dim, model.dim), dtype=complex), raising, w


def drift_hamiltonian_rotating(model: DeviceModel) -> np.ndarray:
    """Rotating-frame drift: the idle terms cancel, anharmonicity remains."""
    return _duffing_drift(model, include_idle=False)


def rotating_frame_hamiltonian(
    model: DeviceModel, control_values, t: float
) -> np.ndarray:
    """H^R(t) = i (d_t R) R^dag + R H R^dag, assembled analytically."""
    values = np.asarray(control_values, dtype=float)
    if values.shape != (len(model.channels),):
        raise ValueError(
            f"expected {len(model.channels)} control values, got {values.shape}"
        )
    h = drift_hamiltonian_rotating(model)
    for value, channel in zip(values, model.channels):
        if value == 0.0:
            continue
        static, raising, w = channel_operator_parts(model, channel)
        term = static + np.exp(1j * w * t) * raising
        if channel.kind != "detuning":
            term = term + (np.exp(1j * w * t) * raising).conj().T
        h += value * term
    return h


@dataclass(frozen=True)
class SubspaceProjectors:
    """Computational projector and the diagonal leakage-weight operator."""

    p_c: np.ndarray
    p_d: np.ndarray
    comp_indices: np.ndarray


def computational_indices(model: DeviceModel) -> np.ndarray:
    """Full-space indices of the per-transmon levels {0,1,2}."""
    if model.n_transmons == 1:
        return np.arange(3)
    l2 = model.transmons[1].levels
    idx = [n1 * l2 + n2 for n1 in range(3) for n2 in range(3)]
    return np.asarray(idx)


def computational_projector(model: DeviceModel) -> SubspaceProjectors:
    """P_c onto per-transmon levels {0,1,2}; P_d weights leakage levels.

    Leakage weights per transmon: 0.1 on level 3 and 1.0 on every level
    above, summed over transmons for the two-transmon model.
    """
    dim = model.dim
    comp = computational_indices(model)
    p_c = np.zeros((dim, dim), dtype=complex)
    p_c[comp, comp] = 1.0

    def weights(levels: int) -> np.ndarray:
        w = np.zeros(levels)
        if levels > 3:
            w[3] = 0.1
        if levels > 4:
            w[4:] = 1.0
        return w

    if model.n_transmons == 1:
        p_d_diag = weights(model.transmons[0].levels)
    else:
        l1, l2 = (t.levels for t in model.transmons)
        p_d_diag = np.add.outer(weights(l1), weights(l2)).reshape(-1)
    return SubspaceProjectors(
        p_c=p_c, p_d=np.diag(p_d_diag).astype(complex), comp_indices=comp
    )


def embed_target(target: np.ndarray, model: DeviceModel) -> np.ndarray:
    """Place a computational-block unitary into the full device space."""
    d = model.computational_dim
    if target.shape != (d, d):
        raise ValueError(f"target must be {d}x{d} for this model")
    full = np.zeros((model.dim, model.dim), dtype=complex)
    comp = computational_indices(model)
    full[np.ix_(comp, comp)] = target
    return full


def extract_block(matrix: np.ndarray, model: DeviceModel) -> np.ndarray:
    """Computational block of a full-space matrix, in spin-label ordering."""
    comp = computational_indices(model)
    return matrix[np.ix_(comp, comp)].copy()


def excitation_block_check(matrix: np.ndarray, model: DeviceModel) -> float:
    """Largest matrix element connecting different total-excitation blocks."""
    if model.n_transmons != 2:
        raise ValueError("excitation blocks are defined for the two-transmon model")
    ntot = model.total_number_diagonal()
    off_block = ntot[:, None] != ntot[None, :]
    return float(np.abs(matrix[off_block]).max())
