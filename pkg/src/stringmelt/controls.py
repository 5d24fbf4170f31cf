"""Analytic control pulses: windowed, saturated sums of sinusoids.

Each control channel's field is

    f(t) = window(t) * cos(2 pi carrier t) * saturate(h(t)),
    h(t) = sum_n  a_{n,1} sin(a_{n,2} t + a_{n,3}),

with a flat-top cosine window and a bounded odd saturation keeping the
field inside +-bound.  Amplitudes a_{n,1} are in GHz, frequencies a_{n,2}
in rad/ns, phases a_{n,3} in rad.  All parameter derivatives are analytic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .device import ControlChannel, DeviceModel, TransmonParams

__all__ = [
    "ChannelAnsatz",
    "ControlParameters",
    "window",
    "window_derivative",
    "saturation",
    "saturation_derivative",
    "field_value",
    "field_gradient",
    "standard_ansatz",
    "random_initial_parameters",
    "sample_field",
    "field_spectrum",
    "save_pulse_artifact",
    "load_pulse_artifact",
    "ArtifactError",
    "PulseArtifact",
]

SATURATION_MODES = ("tanh", "logistic-printed")


class ArtifactError(RuntimeError):
    """A pulse artifact is missing, malformed, or fails its integrity hash."""


@dataclass(frozen=True)
class ChannelAnsatz:
    """Fixed pulse-shape metadata for one control channel."""

    channel: ControlChannel
    n_terms: int
    tau_r: float
    tau_c: float
    omega_m: float = 1.0
    saturation_mode: str = "tanh"

    def __post_init__(self):
        if self.n_terms < 1:
            raise ValueError("need at least one basis term")
        if not 0.0 < self.tau_r <= self.tau_c / 2.0:
            raise ValueError("require 0 < tau_r <= tau_c / 2")
        if self.saturation_mode not in SATURATION_MODES:
            raise ValueError(f"unknown saturation mode {self.saturation_mode!r}")

    @property
    def n_params(self) -> int:
        return 3 * self.n_terms


@dataclass(frozen=True)
class ControlParameters:
    """Concatenated parameter vector over an ordered list of channels."""

    values: np.ndarray
    offsets: tuple[int, ...]

    @classmethod
    def for_channels(cls, ansatz: list[ChannelAnsatz], values) -> "ControlParameters":
        offsets = [0]
        for a in ansatz:
            offsets.append(offsets[-1] + a.n_params)
        values = np.asarray(values, dtype=float)
        if values.shape != (offsets[-1],):
            raise ValueError(
                f"expected {offsets[-1]} parameters for these channels, "
                f"got {values.shape}"
            )
        return cls(values=values, offsets=tuple(offsets))

    def channel_slice(self, i: int) -> np.ndarray:
        return self.values[self.offsets[i] : self.offsets[i + 1]]

    def __len__(self) -> int:
        return self.values.size


def window(t, tau_r: float, tau_c: float, omega_m: float = 1.0):
    """Flat-top cosine envelope: ramp up over tau_r, flat, ramp down."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -1e-12) or np.any(t_arr > tau_c + 1e-12):
        raise ValueError("window evaluated outside [0, tau_c]")
    t_arr = np.clip(t_arr, 0.0, tau_c)
    out = np.full_like(t_arr, omega_m)
    up = t_arr <= tau_r
    down = t_arr >= tau_c - tau_r
    out = np.where(up, 0.5 * (1 - np.cos(np.pi * t_arr / tau_r)) * omega_m, out)
    out = np.where(
        down, 0.5 * (1 - np.cos(np.pi * (tau_c - t_arr) / tau_r)) * omega_m, out
    )
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


def window_derivative(t, tau_r: float, tau_c: float, omega_m: float = 1.0):
    """Time derivative of the flat-top window (continuous at the joins)."""
    t_arr = np.clip(np.asarray(t, dtype=float), 0.0, tau_c)
    out = np.zeros_like(t_arr)
    up = t_arr <= tau_r
    down = t_arr >= tau_c - tau_r
    out = np.where(
        up, 0.5 * np.pi / tau_r * np.sin(np.pi * t_arr / tau_r) * omega_m, out
    )
    out = np.where(
        down,
        -0.5 * np.pi / tau_r * np.sin(np.pi * (tau_c - t_arr) / tau_r) * omega_m,
        out,
    )
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


def saturation(x, bound: float, mode: str = "tanh"):
    """Bounded saturation of the raw basis sum.

    The default is the odd, pole-free form  B tanh(2x/B), bounded by +-B
    with slope 2 at the origin.  The "logistic-printed" variant
    -B - 2B / (1 - 3 exp(-4x/B)) reproduces the published formula
    verbatim; note it has a pole at x = (B/4) ln 3 and asymptotes -B and
    -3B, so it cannot actually confine a pulse, and is kept only for
    comparison.
    """
    x = np.asarray(x, dtype=float)
    if mode == "tanh":
        out = bound * np.tanh(2.0 * x / bound)
    elif mode == "logistic-printed":
        out = -bound - 2.0 * bound / (1.0 - 3.0 * np.exp(-4.0 * x / bound))
    else:
        raise ValueError(f"unknown saturation mode {mode!r}")
    return float(out) if out.ndim == 0 else out


def saturation_derivative(x, bound: float, mode: str = "tanh"):
    x = np.asarray(x, dtype=float)
    if mode == "tanh":
        th = np.tanh(2.0 * x / bound)
        out = 2.0 * (1.0 - th * th)
    elif mode == "logistic-printed":
        e = np.exp(-4.0 * x / bound)
        out = 24.0 * e / (1.0 - 3.0 * e) ** 2
    else:
        raise ValueError(f"unknown saturation mode {mode!r}")
    return float(out) if out.ndim == 0 else out


def _basis_sum(params: np.ndarray, t: float) -> tuple[float, np.ndarray, np.ndarray]:
    a = params.reshape(-1, 3)
    arg = a[:, 1] * t + a[:, 2]
    s = np.sin(arg)
    c = np.cos(arg)
    return float(a[:, 0] @ s), s, c


def field_value(ansatz: ChannelAnsatz, params: np.ndarray, t: float) -> float:
    """Channel field (GHz) at time t in [0, tau_c]."""
    if not -1e-12 <= t <= ansatz.tau_c + 1e-12:
        raise ValueError("field evaluated outside [0, tau_c]")
    params = np.asarray(params, dtype=float)
    if params.size != ansatz.n_params:
        raise ValueError("parameter count does not match the ansatz")
    h, _, _ = _basis_sum(params, t)
    w = window(t, ansatz.tau_r, ansatz.tau_c, ansatz.omega_m)
    carrier = np.cos(2.0 * np.pi * ansatz.channel.carrier * t)
    return w * carrier * saturation(h, ansatz.channel.bound, ansatz.saturation_mode)


def field_gradient(ansatz: ChannelAnsatz, params: np.ndarray, t: float) -> np.ndarray:
    """Analytic gradient of the field w.r.t. the 3N channel parameters."""
    if not -1e-12 <= t <= ansatz.tau_c + 1e-12:
        raise ValueError("field evaluated outside [0, tau_c]")
    params = np.asarray(params, dtype=float)
    a = params.reshape(-1, 3)
    h, s, c = _basis_sum(params, t)
    w = window(t, ansatz.tau_r, ansatz.tau_c, ansatz.omega_m)
    carrier = np.cos(2.0 * np.pi * ansatz.channel.carrier * t)
    prefac = (
        w
        * carrier
        * saturation_derivative(h, ansatz.channel.bound, ansatz.saturation_mode)
    )
    grad = np.empty(params.size)
    grad[0::3] = prefac * s
    grad[1::3] = prefac * a[:, 0] * t * c
    grad[2::3] = prefac * a[:, 0] * c
    return grad


def standard_ansatz(
    model: DeviceModel,
    saturation_mode: str = "tanh",
    ramp_fraction: float = 0.3,
) -> list[ChannelAnsatz]:
    """Conventional pulse shapes: 50 ns / N=10 for microwave channels,
    100 ns / N=7 for detuning and coupling channels, ramp = 0.3 tau_c."""
    out = []
    for ch in model.channels:
        if ch.kind == "microwave":
            tau_c, n_terms = 50.0, 10
        else:
            tau_c, n_terms = 100.0, 7
        out.append(
            ChannelAnsatz(
                channel=ch,
                n_terms=n_terms,
                tau_r=ramp_fraction * tau_c,
                tau_c=tau_c,
                saturation_mode=saturation_mode,
            )
        )
    taus = {a.tau_c for a in out}
    if len(taus) != 1:
        raise ValueError("all channels of one model must share a control time")
    return out


def random_initial_parameters(
    ansatz: list[ChannelAnsatz], rng: np.random.Generator
) -> ControlParameters:
    """Random seed: small amplitudes, slow frequencies, uniform phases."""
    chunks = []
    for a in ansatz:
        n = a.n_terms
        block = np.empty((n, 3))
        block[:, 0] = rng.uniform(-0.1 * a.channel.bound, 0.1 * a.channel.bound, n)
        block[:, 1] = rng.uniform(0.0, 2.0 * np.pi * 0.1, n)
        block[:, 2] = rng.uniform(0.0, 2.0 * np.pi, n)
        chunks.append(block.reshape(-1))
    return ControlParameters.for_channels(ansatz, np.concatenate(chunks))


def sample_field(
    ansatz: ChannelAnsatz, params: np.ndarray, dt: float = 0.01
) -> tuple[np.ndarray, np.ndarray]:
    """Field time series on a uniform grid (for inspection and spectra)."""
    times = np.arange(0.0, ansatz.tau_c + dt / 2, dt)
    values = np.array([field_value(ansatz, params, float(t)) for t in times])
    return times, values


def field_spectrum(
    ansatz: ChannelAnsatz, params: np.ndarray, dt: float = 0.01
) -> tuple[np.ndarray, np.ndarray]:
    """One-sided power spectrum (GHz axis) of the sampled field."""
    _, values = sample_field(ansatz, params, dt)
    power = np.abs(np.fft.rfft(values)) ** 2
    freqs = np.fft.rfftfreq(values.size, d=dt)
    return freqs, power


# ---------------------------------------------------------------------------
# Pulse artifacts: JSON files holding everything needed to rebuild a pulse.

ARTIFACT_FORMAT = "stringmelt-pulse/1"


@dataclass(frozen=True)
class PulseArtifact:
    label: str
    model: DeviceModel
    ansatz: list[ChannelAnsatz]
    parameters: np.ndarray
    infidelity: float
    leakage: float
    metadata: dict
    sha256: str


def _canonical_payload(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def _payload_from_artifact(
    label: str,
    model: DeviceModel,
    ansatz: list[ChannelAnsatz],
    parameters: np.ndarray,
    infidelity: float,
    leakage: float,
    metadata: dict,
) -> dict:
    return {
        "format": ARTIFACT_FORMAT,
        "label": label,
        "transmons": [
            {
                "frequency": t.frequency,
                "anharmonicity": t.anharmonicity,
                "levels": t.levels,
            }
            for t in model.transmons
        ],
        "channels": [
            {
                "kind": a.channel.kind,
                "target": list(a.channel.target),
                "carrier": a.channel.carrier,
                "bound": a.channel.bound,
                "n_terms": a.n_terms,
                "tau_r": a.tau_r,
                "tau_c": a.tau_c,
                "omega_m": a.omega_m,
                "saturation_mode": a.saturation_mode,
            }
            for a in ansatz
        ],
        "parameters": [float(v) for v in parameters],
        "infidelity": float(infidelity),
        "leakage": float(leakage),
        "metadata": metadata,
    }


def save_pulse_artifact(
    path,
    label: str,
    model: DeviceModel,
    ansatz: list[ChannelAnsatz],
    parameters: np.ndarray,
    infidelity: float,
    leakage: float,
    metadata: dict | None = None,
) -> str:
    """Write a pulse artifact; returns its integrity hash."""
    payload = _payload_from_artifact(
        label, model, ansatz, parameters, infidelity, leakage, metadata or {}
    )
    digest = hashlib.sha256(_canonical_payload(payload)).hexdigest()
    payload["sha256"] = digest
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return digest


def load_pulse_artifact(path) -> PulseArtifact:
    """Load and integrity-check a pulse artifact."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"pulse artifact not found: {path}")
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"pulse artifact {path} is not valid JSON: {exc}")
    if payload.get("format") != ARTIFACT_FORMAT:
        raise ArtifactError(f"unsupported artifact format in {path}")
    stored_hash = payload.pop("sha256", None)
    digest = hashlib.sha256(_canonical_payload(payload)).hexdigest()
    if stored_hash != digest:
        raise ArtifactError(f"integrity hash mismatch for {path}")

    transmons = tuple(
        TransmonParams(
            frequency=t["frequency"],
            anharmonicity=t["anharmonicity"],
            levels=t["levels"],
        )
        for t in payload["transmons"]
    )
    channels = tuple(
        ControlChannel(
            kind=c["kind"],
            target=tuple(c["target"]),
            carrier=c["carrier"],
            bound=c["bound"],
        )
        for c in payload["channels"]
    )
    model = DeviceModel(transmons=transmons, channels=channels)
    ansatz = [
        ChannelAnsatz(
            channel=ch,
            n_terms=c["n_terms"],
            tau_r=c["tau_r"],
            tau_c=c["tau_c"],
            omega_m=c["omega_m"],
            saturation_mode=c["saturation_mode"],
        )
        for ch, c in zip(channels, payload["channels"])
    ]
    return PulseArtifact(
        label=payload["label"],
        model=model,
        ansatz=ansatz,
        parameters=np.array(payload["parameters"], dtype=float),
        infidelity=payload["infidelity"],
        leakage=payload["leakage"],
        metadata=payload["metadata"],
        sha256=stored_hash,
    )
