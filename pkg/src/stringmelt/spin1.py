"""Spin-1 chains: operators, AKLT and quench Hamiltonians, string order.

Conventions used throughout the package:

* Local basis kets are ordered (-, 0, +), i.e. index 0 is the Sz = -1
  eigenstate, matching the oscillator-level identification |-> -> |0>,
  |0> -> |1>, |+> -> |2>.
* A chain of N sites is stored as a dense complex vector of length 3**N.
  Site 1 is the most significant base-3 digit of the basis index, so
  basis index  sum_i d_i 3**(N-i)  carries local digits d_i in {0,1,2}
  with spin label s_i = d_i - 1.
* hbar = 1; model couplings and times are dimensionless.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import reduce

import numpy as np

__all__ = [
    "Spin1Ops",
    "ChainOperator",
    "ChainState",
    "StringSpec",
    "build_spin1_ops",
    "site_operator",
    "bond_operator",
    "aklt_hamiltonian",
    "quench_hamiltonian",
    "aklt_ground_state",
    "symmetry_group_elements",
    "string_operator",
    "string_weights",
    "basis_rotation",
    "exact_evolve",
    "string_expectation_direct",
    "string_expectation_sampled",
    "product_state",
    "total_sz_diagonal",
]

_SQRT2 = np.sqrt(2.0)


class InternalConsistencyError(RuntimeError):
    """An internal invariant (e.g. a real expectation value) was violated."""


@dataclass(frozen=True)
class Spin1Ops:
    """The 3x3 spin-1 matrices in the z eigenbasis ordered (-, 0, +)."""

    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    splus: np.ndarray
    sminus: np.ndarray

    def component(self, direction: str) -> np.ndarray:
        return {"x": self.sx, "y": self.sy, "z": self.sz}[direction]


def build_spin1_ops() -> Spin1Ops:
    """Standard spin-1 matrices; sz is diag(-1, 0, +1)."""
    splus = np.zeros((3, 3), dtype=complex)
    splus[1, 0] = _SQRT2
    splus[2, 1] = _SQRT2
    sminus = splus.conj().T
    sx = (splus + sminus) / 2.0
    sy = (splus - sminus) / 2.0j
    sz = np.diag([-1.0, 0.0, 1.0]).astype(complex)
    return Spin1Ops(sx=sx, sy=sy, sz=sz, splus=splus, sminus=sminus)


SPIN1 = build_spin1_ops()


@dataclass(frozen=True)
class ChainOperator:
    """A dense operator on an N-site spin-1 chain."""

    n_sites: int
    matrix: np.ndarray

    def __post_init__(self):
        dim = 3 ** self.n_sites
        if self.matrix.shape != (dim, dim):
            raise ValueError(
                f"operator for {self.n_sites} sites must be {dim}x{dim}, "
                f"got {self.matrix.shape}"
            )

    def expectation(self, state: "ChainState") -> complex:
        return complex(np.vdot(state.amplitudes, self.matrix @ state.amplitudes))


@dataclass(frozen=True)
class ChainState:
    """Complex amplitudes over the z-product basis of an N-site chain.

    States produced by non-unitary gate application may carry norm < 1;
    nothing in this module renormalizes silently.
    """

    n_sites: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (3 ** self.n_sites,):
            raise ValueError("amplitude vector length must be 3**n_sites")

    @classmethod
    def normalized(cls, n_sites: int, amplitudes: np.ndarray) -> "ChainState":
        """Construct a state that is required to be normalized to 1e-12."""
        amplitudes = np.asarray(amplitudes, dtype=complex)
        norm = np.linalg.norm(amplitudes)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state norm {norm} deviates from 1 by more than 1e-12")
        return cls(n_sites=n_sites, amplitudes=amplitudes)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def overlap(self, other: "ChainState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class StringSpec:
    """String operator anchors: sites k < l (1-based) and a direction."""

    k: int
    l: int
    direction: str

    def __post_init__(self):
        if self.direction not in ("x", "y", "z"):
            raise ValueError(f"direction must be x, y or z, got {self.direction!r}")
        if self.k < 1 or self.l <= self.k:
            raise ValueError(f"need 1 <= k < l, got k={self.k}, l={self.l}")

    def validate(self, n_sites: int):
        if self.l > n_sites:
            raise ValueError(f"l={self.l} exceeds chain length {n_sites}")

    @property
    def length(self) -> int:
        return self.l - self.k + 1


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Embed a 3x3 operator acting on `site` (1-based) into the chain."""
    if not 1 <= site <= n_sites:
        raise ValueError(f"site {site} outside 1..{n_sites}")
    factors = [np.eye(3, dtype=complex)] * n_sites
    factors[site - 1] = op
    return reduce(np.kron, factors)


def bond_operator(op9: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Embed a 9x9 operator acting on sites (site, site+1) into the chain."""
    if not 1 <= site <= n_sites - 1:
        raise ValueError(f"bond {site} outside 1..{n_sites - 1}")
    left = np.eye(3 ** (site - 1), dtype=complex)
    right = np.eye(3 ** (n_sites - site - 1), dtype=complex)
    return np.kron(np.kron(left, op9), right)


def _pair_projector_spin2() -> np.ndarray:
    """Projector of two spin-1 sites onto total spin 2, built spectrally.

    (S_1 + S_2)^2 has eigenvalues J(J+1) in {0, 2, 6}; the projector keeps
    the eigenvalue-6 quintet.
    """
    total_sq = np.zeros((9, 9), dtype=complex)
    for a in (SPIN1.sx, SPIN1.sy, SPIN1.sz):
        pair = np.kron(a, np.eye(3)) + np.kron(np.eye(3), a)
        total_sq += pair @ pair
    evals, evecs = np.linalg.eigh(total_sq)
    keep = np.abs(evals - 6.0) < 1e-9
    vecs = evecs[:, keep]
    proj = vecs @ vecs.conj().T
    # spectral construction is self-validating: idempotent and rank 5
    assert np.abs(proj @ proj - proj).max() < 1e-12
    assert abs(np.trace(proj).real - 5.0) < 1e-10
    return proj


def aklt_hamiltonian(n_sites: int) -> ChainOperator:
    """Sum of two-site spin-2 projectors over the N-1 bonds of an open chain."""
    if n_sites < 2:
        raise ValueError("AKLT chain needs at least 2 sites")
    proj = _pair_projector_spin2()
    dim = 3 ** n_sites
    h = np.zeros((dim, dim), dtype=complex)
    for bond in range(1, n_sites):
        h += bond_operator(proj, bond, n_sites)
    return ChainOperator(n_sites=n_sites, matrix=h)


def quench_hamiltonian(n_sites: int, lam: float, b: float) -> ChainOperator:
    """Spin-1 XXZ-type Hamiltonian with a transverse x field, open boundaries.

    H = sum_bonds (SxSx + SySy + lam SzSz) + b sum_sites Sx.
    """
    if n_sites < 2:
        raise ValueError("chain needs at least 2 sites")
    bond9 = (
        np.kron(SPIN1.sx, SPIN1.sx)
        + np.kron(SPIN1.sy, SPIN1.sy)
        + lam * np.kron(SPIN1.sz, SPIN1.sz)
    )
    dim = 3 ** n_sites
    h = np.zeros((dim, dim), dtype=complex)
    for bond in range(1, n_sites):
        h += bond_operator(bond9, bond, n_sites)
    if b != 0.0:
        for site in range(1, n_sites + 1):
            h += b * site_operator(SPIN1.sx, site, n_sites)
    return ChainOperator(n_sites=n_sites, matrix=h)


def _site_digits(n_sites: int) -> np.ndarray:
    """(3**N, N) array of base-3 digits; column 0 is site 1."""
    idx = np.arange(3 ** n_sites)
    digits = np.empty((idx.size, n_sites), dtype=np.int64)
    for j in range(n_sites):
        digits[:, j] = (idx // 3 ** (n_sites - 1 - j)) % 3
    return digits


def total_sz_diagonal(n_sites: int) -> np.ndarray:
    """Diagonal of sum_i Sz_i in the product basis."""
    return (_site_digits(n_sites) - 1).sum(axis=1)


def aklt_ground_state(n_sites: int) -> ChainState:
    """A deterministic member of the open-chain AKLT ground space.

    The open chain has a 4-fold degenerate zero-energy ground space; this
    diagonalizes the total-Sz = 0 block and resolves the residual
    degeneracy by choosing the eigenvector whose largest-magnitude
    amplitude sits at the smallest basis index, with that amplitude made
    real positive.
    """
    ham = aklt_hamiltonian(n_sites)
    jz = total_sz_diagonal(n_sites)
    block_idx = np.flatnonzero(jz == 0)
    block = ham.matrix[np.ix_(block_idx, block_idx)]
    evals, evecs = np.linalg.eigh(block)
    ground = np.flatnonzero(evals < evals[0] + 1e-9)
    best = None
    best_key = None
    for col in ground:
        vec = evecs[:, col]
        jmax_local = int(np.argmax(np.abs(vec)))
        key = int(block_idx[jmax_local])
        if best_key is None or key < best_key:
            best, best_key, jmax = vec, key, jmax_local
    phase = best[jmax] / abs(best[jmax])
    vec = best / phase
    full = np.zeros(3 ** n_sites, dtype=complex)
    full[block_idx] = vec
    return ChainState.normalized(n_sites, full)


def _pi_rotation(direction: str) -> np.ndarray:
    """exp(i pi S_a) = 1 - 2 S_a^2 for spin 1 (eigenvalues -1, +1, -1)."""
    s = SPIN1.component(direction)
    return np.eye(3, dtype=complex) - 2.0 * (s @ s)


def symmetry_group_elements(n_sites: int) -> list[np.ndarray]:
    """The dihedral group {1, exp(i pi sum Sx), ..y, ..z} on the chain."""
    elems = [np.eye(3 ** n_sites, dtype=complex)]
    for direction in ("x", "y", "z"):
        u = _pi_rotation(direction)
        elems.append(reduce(np.kron, [u] * n_sites))
    return elems


def string_operator(spec: StringSpec, n_sites: int) -> ChainOperator:
    """S^a_k [prod_{n=k+1}^{l-1} exp(i pi S^a_n)] S^a_l on the chain."""
    spec.validate(n_sites)
    s = SPIN1.component(spec.direction)
    rot = _pi_rotation(spec.direction)
    factors = [np.eye(3, dtype=complex)] * n_sites
    factors[spec.k - 1] = s
    factors[spec.l - 1] = s
    for n in range(spec.k + 1, spec.l):
        factors[n - 1] = rot
    return ChainOperator(n_sites=n_sites, matrix=reduce(np.kron, factors))


def string_weights(spec: StringSpec, n_sites: int) -> np.ndarray:
    """Measurement weight s_k [prod (-1)^{s_n}] s_l for every z-basis string."""
    spec.validate(n_sites)
    spins = _site_digits(n_sites) - 1
    w = spins[:, spec.k - 1].astype(float) * spins[:, spec.l - 1]
    for n in range(spec.k + 1, spec.l):
        w *= np.where(spins[:, n - 1] == 0, 1.0, -1.0)
    return w


# Basis-change unitaries mapping a-basis eigenstates onto z-basis kets,
# written in the (-, 0, +) ordering.  The x form is the flat-top of the
# published pair; the y form has its +-/+ rows exchanged relative to the
# published matrix, which swaps the +-1 eigenvalue labels (the published
# row assignment conjugates Sy onto -Sz).  The swap leaves every string
# measurement unchanged because the weights are invariant under a global
# flip of the outcome labels.
_U_ZX = np.array(
    [
        [0.5, -_SQRT2 / 2, 0.5],
        [1 / _SQRT2, 0.0, -1 / _SQRT2],
        [0.5, _SQRT2 / 2, 0.5],
    ],
    dtype=complex,
)

_U_ZY = np.array(
    [
        [0.5, -1j * _SQRT2 / 2, -0.5],
        [1 / _SQRT2, 0.0, 1 / _SQRT2],
        [0.5, 1j * _SQRT2 / 2, -0.5],
    ],
    dtype=complex,
)


def basis_rotation(direction: str) -> np.ndarray:
    """3x3 unitary u with u S_a u^dag = S_z; identity for a = z."""
    if direction == "x":
        return _U_ZX.copy()
    if direction == "y":
        return _U_ZY.copy()
    if direction == "z":
        return np.eye(3, dtype=complex)
    raise ValueError(f"direction must be x, y or z, got {direction!r}")


def apply_single_site_everywhere(state: ChainState, op: np.ndarray) -> ChainState:
    """Apply the same 3x3 operator to every site of the chain."""
    amps = state.amplitudes
    n = state.n_sites
    for site in range(n):
        shaped = amps.reshape(3 ** site, 3, 3 ** (n - site - 1))
        amps = np.einsum("ab,ibj->iaj", op, shaped).reshape(-1)
    return ChainState(n_sites=n, amplitudes=amps)


_EIG_CACHE: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
_EIG_CACHE_MAX = 16


def _eigendecomposition(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    key = hashlib.sha1(np.ascontiguousarray(matrix).tobytes()).digest()
    hit = _EIG_CACHE.get(key)
    if hit is None:
        evals, evecs = np.linalg.eigh(matrix)
        if len(_EIG_CACHE) >= _EIG_CACHE_MAX:
            _EIG_CACHE.pop(next(iter(_EIG_CACHE)))
        _EIG_CACHE[key] = hit = (evals, evecs)
    return hit


def exact_evolve(state: ChainState, hamiltonian: ChainOperator, t: float) -> ChainState:
    """exp(-i H t) |psi> through a cached full eigendecomposition."""
    h = hamiltonian.matrix
    if np.abs(h - h.conj().T).max() > 1e-10:
        raise ValueError("Hamiltonian must be Hermitian")
    evals, evecs = _eigendecomposition(h)
    coeff = evecs.conj().T @ state.amplitudes
    coeff *= np.exp(-1j * evals * t)
    return ChainState(n_sites=state.n_sites, amplitudes=evecs @ coeff)


def string_expectation_direct(state: ChainState, spec: StringSpec) -> float:
    """<psi| O^a_{k,l} |psi>, checked to be real."""
    op = string_operator(spec, state.n_sites)
    val = op.expectation(state)
    if abs(val.imag) > 1e-8:
        raise InternalConsistencyError(
            f"string expectation has imaginary part {val.imag:.3e}"
        )
    return float(val.real)


def measured_string_average(
    rotated: ChainState, spec: StringSpec, shots: int, rng_seed: int
) -> tuple[float, float]:
    """Sample z-basis strings from an already-rotated state and average the
    string weights.  Returns (estimate, standard error), both scaled by the
    squared norm so that the infinite-shot limit matches the direct
    expectation on the un-normalized state."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    spec.validate(rotated.n_sites)
    weights = string_weights(spec, rotated.n_sites)
    prob = np.abs(rotated.amplitudes) ** 2
    total = prob.sum()
    prob = prob / total
    rng = np.random.default_rng(rng_seed)
    counts = rng.multinomial(shots, prob)
    m1 = float(counts @ weights) / shots
    m2 = float(counts @ weights**2) / shots
    if shots > 1:
        var = max(m2 - m1 * m1, 0.0) * shots / (shots - 1)
    else:
        var = 0.0
    scale = float(total)
    return m1 * scale, np.sqrt(var / shots) * scale


def string_expectation_sampled(
    state: ChainState, spec: StringSpec, shots: int, rng_seed: int
) -> tuple[float, float]:
    """Shot-sampled string expectation via the z-basis measurement circuit.

    Rotates every site with the direction's basis-change unitary, samples
    z-basis outcome strings, and averages the string weights.
    """
    rotated = apply_single_site_everywhere(state, basis_rotation(spec.direction))
    return measured_string_average(rotated, spec, shots, rng_seed)


def product_state(labels: str | list[int]) -> ChainState:
    """Build |s_1 ... s_N> from labels like "-0+" or digit lists (0,1,2)."""
    if isinstance(labels, str):
        digits = ["-0+".index(c) for c in labels]
    else:
        digits = list(labels)
    n = len(digits)
    idx = 0
    for d in digits:
        idx = idx * 3 + int(d)
    amps = np.zeros(3 ** n, dtype=complex)
    amps[idx] = 1.0
    return ChainState(n_sites=n, amplitudes=amps)
