"""State preparation: exact eigenstates, variational circuits, heated quenches,
and reduced density matrices.

Magnetization sectors are labeled by M = N_up - N_down (total sigma_z, an
integer of the same parity as N).  Dense diagonalization is used for chains
of up to 12 sites, sector-restricted Lanczos (ARPACK) for 13..16.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse
import scipy.sparse.linalg

from .errors import DeflationError, NumericalFailureError, ValidationError
from .pauli import AXIS_ROTATIONS, hermiticity_defect, rotate_state, site_bits
from .spinmodel import CouplingMatrix, SpinModel, dense_hamiltonian_real, xy_pairs

DENSE_MAX_SITES = 12
LANCZOS_MAX_SITES = 16
PARTIAL_TRACE_CAP = 12

STATE_MAGIC = b"EHTSTATE1"


@dataclass(frozen=True)
class PureState:
    n_sites: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.shape != (2**self.n_sites,):
            raise ValidationError(f"amplitude vector length {amp.shape} for n={self.n_sites}")
        norm = float(np.linalg.norm(amp))
        if abs(norm - 1.0) > 1e-10:
            raise ValidationError(f"state norm {norm} deviates from 1")
        object.__setattr__(self, "amplitudes", amp)


@dataclass(frozen=True)
class DensityMatrix:
    n_sites: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        dim = 2**self.n_sites
        if m.shape != (dim, dim):
            raise ValidationError(f"density matrix shape {m.shape} for n={self.n_sites}")
        if hermiticity_defect(m) > 1e-10:
            raise ValidationError("density matrix not Hermitian within 1e-10")
        tr = float(np.real(np.trace(m)))
        if abs(tr - 1.0) > 1e-10:
            raise ValidationError(f"density matrix trace {tr} deviates from 1")
        object.__setattr__(self, "matrix", m)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def validate_psd(self, tol: float = 1e-9) -> None:
        ev = self.eigenvalues()
        if np.min(ev) < -tol:
            raise ValidationError(f"density matrix has eigenvalue {np.min(ev)}")


@dataclass(frozen=True)
class CircuitParams:
    """Alternating-layer parameters: thetas[0] drives an XY evolution,
    thetas[1] a staggered Z rotation, and so on.  An optional heating quench
    of duration ``heating_theta`` is applied to the initial state before the
    circuit."""

    thetas: tuple[float, ...]
    heating_theta: float | None = None

    def __post_init__(self):
        if len(self.thetas) < 1:
            raise ValidationError("need at least one circuit parameter")
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))


def neel_state(n: int) -> PureState:
    """|down up down up ...> product state."""
    if n < 1:
        raise ValidationError("need n >= 1")
    bits = "01" * (n // 2) + ("0" if n % 2 else "")
    amp = np.zeros(2**n, dtype=complex)
    amp[int(bits, 2)] = 1.0
    return PureState(n, amp)


@lru_cache(maxsize=64)
def sector_basis(n: int, n_up: int) -> np.ndarray:
    """Ascending basis-state indices with exactly n_up bits set."""
    pop = site_bits(n).sum(axis=1)
    return np.flatnonzero(pop == n_up)


def magnetization_to_nup(n: int, sector: int) -> int:
    if (n + sector) % 2 != 0 or abs(sector) > n:
        raise ValidationError(f"magnetization {sector} not attainable for {n} sites")
    return (n + sector) // 2


def sector_hamiltonian(model: SpinModel, n_up: int) -> scipy.sparse.csr_matrix:
    """XXZ Hamiltonian restricted to a fixed-magnetization sector (sparse, real)."""
    n = model.n_sites
    basis = sector_basis(n, n_up)
    lookup = {int(s): k for k, s in enumerate(basis)}
    m = len(basis)
    j, delta = model.coupling_j, model.anisotropy_delta
    bits = (basis[:, None] >> (n - 1 - np.arange(n))) & 1
    z = 2.0 * bits - 1.0
    diag = np.zeros(m)
    rows, cols, vals = [], [], []
    for i in range(n - 1):
        diag += 0.25 * j * delta * z[:, i] * z[:, i + 1]
        mask = (1 << (n - 1 - i)) | (1 << (n - 2 - i))
        movable = np.flatnonzero(bits[:, i] != bits[:, i + 1])
        for k in movable:
            target = lookup[int(basis[k]) ^ mask]
            rows.append(k)
            cols.append(target)
            vals.append(0.5 * j)
    h = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(m, m))
    return (h + scipy.sparse.diags(diag)).tocsr()


def _embed_sector(vec: np.ndarray, basis: np.ndarray, n: int) -> np.ndarray:
    full = np.zeros(2**n, dtype=complex)
    full[basis] = vec
    return full


def _lowest_sector_pair(model: SpinModel, n_up: int) -> tuple[float, np.ndarray]:
    """Lowest eigenpair within one magnetization sector."""
    h = sector_hamiltonian(model, n_up)
    m = h.shape[0]
    if m <= 256 or model.n_sites <= DENSE_MAX_SITES:
        w, v = scipy.linalg.eigh(h.toarray(), subset_by_index=(0, 0))
        return float(w[0]), v[:, 0]
    v0 = np.random.default_rng(0xE47).standard_normal(m)
    try:
        w, v = scipy.sparse.linalg.eigsh(h, k=1, which="SA", v0=v0)
    except scipy.sparse.linalg.ArpackNoConvergence as exc:  # pragma: no cover
        raise NumericalFailureError(
            "sector Lanczos did not converge", residual=float(np.nan)
        ) from exc
    residual = float(np.linalg.norm(h @ v[:, 0] - w[0] * v[:, 0]))
    if residual > 1e-8:
        raise NumericalFailureError("sector Lanczos residual too large", residual=residual)
    return float(w[0]), v[:, 0]


def ground_state(model: SpinModel, sector: int | None = None) -> tuple[float, PureState]:
    """Lowest eigenpair of the chain, optionally restricted to a magnetization
    sector.  Chains beyond 12 sites require the sector-restricted solver or
    scan all sectors up to 16 sites."""
    n = model.n_sites
    if n > LANCZOS_MAX_SITES:
        raise ValidationError(f"ground_state supports up to {LANCZOS_MAX_SITES} sites")
    if sector is not None:
        n_up = magnetization_to_nup(n, sector)
        energy, vec = _lowest_sector_pair(model, n_up)
        return energy, PureState(n, _embed_sector(vec, sector_basis(n, n_up), n))
    if n <= DENSE_MAX_SITES:
        h = dense_hamiltonian_real(model)
        w, v = scipy.linalg.eigh(h, subset_by_index=(0, 0))
        return float(w[0]), PureState(n, v[:, 0].astype(complex))
    best: tuple[float, np.ndarray, int] | None = None
    for n_up in range(n + 1):
        energy, vec = _lowest_sector_pair(model, n_up)
        if best is None or energy < best[0]:
            best = (energy, vec, n_up)
    energy, vec, n_up = best
    return energy, PureState(n, _embed_sector(vec, sector_basis(n, n_up), n))


def excited_states(
    model: SpinModel, count: int, weight: float | None = None
) -> list[tuple[float, PureState]]:
    """Lowest ``count`` eigenpairs by deflation: repeatedly find the ground
    state of H + w * sum_q |phi_q><phi_q| over the states found so far."""
    n = model.n_sites
    if n > DENSE_MAX_SITES:
        raise ValidationError(f"excited_states supports up to {DENSE_MAX_SITES} sites")
    if count < 1 or count > 2**n:
        raise ValidationError(f"count {count} out of range for {n} sites")
    h = dense_hamiltonian_real(model)
    if weight is None:
        # 10x the spectral range estimated from the extremal eigenvalues
        lo = scipy.linalg.eigh(h, eigvals_only=True, subset_by_index=(0, 0))[0]
        hi = scipy.linalg.eigh(h, eigvals_only=True, subset_by_index=(2**n - 1, 2**n - 1))[0]
        weight = 10.0 * float(hi - lo)
    elif weight <= 0:
        raise ValidationError("deflation weight must be positive")
    deflated = h.copy()
    found = np.empty((0, 2**n))
    out: list[tuple[float, PureState]] = []
    prev = -np.inf
    for _ in range(count):
        w, v = scipy.linalg.eigh(deflated, subset_by_index=(0, 0))
        vec = v[:, 0]
        energy = float(vec @ (h @ vec))
        # An insufficient weight shows up as a revisited state (overlap with
        # an earlier vector) or an energy below an earlier level.
        if found.size:
            overlap = float(np.max(np.abs(found @ vec)))
            if overlap > 1e-6:
                raise DeflationError(
                    "deflated solve revisited an earlier state; increase the weight",
                    residual=overlap,
                )
        if energy < prev - 1e-9 * max(1.0, abs(prev)):
            raise DeflationError(
                "energy fell below a previously found level; increase the weight",
                residual=prev - energy,
            )
        prev = max(prev, energy)
        out.append((energy, PureState(n, vec.astype(complex))))
        found = np.vstack([found, vec])
        deflated += weight * np.outer(vec, vec)
    return out


def _xy_sparse(couplings: CouplingMatrix) -> scipy.sparse.csr_matrix:
    """Sparse flip-flop Hamiltonian sum_{i<j} J_ij (s+_i s-_j + h.c.)."""
    n = couplings.n_sites
    dim = 2**n
    idx = np.arange(dim)
    rows, cols, vals = [], [], []
    for i, j, v in xy_pairs(couplings):
        bi = (idx >> (n - i)) & 1
        bj = (idx >> (n - j)) & 1
        sel = idx[bi != bj]
        mask = (1 << (n - i)) | (1 << (n - j))
        rows.append(sel)
        cols.append(sel ^ mask)
        vals.append(np.full(len(sel), v))
    if not rows:
        return scipy.sparse.csr_matrix((dim, dim))
    return scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()


def apply_xy_evolution(state: PureState, couplings: CouplingMatrix, theta: float) -> PureState:
    """exp(-i theta H_XY) |psi>; norm and magnetization distribution preserved."""
    if couplings.n_sites != state.n_sites:
        raise ValidationError("coupling matrix and state size differ")
    if theta == 0.0:
        return state
    h = _xy_sparse(couplings)
    amp = scipy.sparse.linalg.expm_multiply((-1j * theta) * h, state.amplitudes)
    amp = amp / np.linalg.norm(amp)
    return PureState(state.n_sites, amp)


def _staggered_z_values(n: int) -> np.ndarray:
    """sum over even sites of the sigma_z eigenvalue, per basis state."""
    bits = site_bits(n)
    even = np.arange(1, n + 1) % 2 == 0
    return (2.0 * bits[:, even] - 1.0).sum(axis=1)


def apply_z_rotation(state: PureState, theta: float) -> PureState:
    """Staggered rotation exp(-i theta/2 sum_{even sites} sigma_z)."""
    phases = np.exp(-0.5j * theta * _staggered_z_values(state.n_sites))
    return PureState(state.n_sites, phases * state.amplitudes)


def run_circuit(
    initial: PureState, params: CircuitParams, couplings: CouplingMatrix
) -> PureState:
    """Alternating XY / staggered-Z circuit, with an optional heating quench
    applied to the initial state before the first layer."""
    psi = initial
    if params.heating_theta is not None:
        psi = apply_xy_evolution(psi, couplings, params.heating_theta)
    for k, theta in enumerate(params.thetas):
        if k % 2 == 0:
            psi = apply_xy_evolution(psi, couplings, theta)
        else:
            psi = apply_z_rotation(psi, theta)
    return psi


def estimate_energy(
    state: PureState,
    model: SpinModel,
    shots_per_basis: int | None,
    rng: np.random.Generator | None = None,
) -> float:
    """Chain energy from global X, Y, Z basis measurements.

    With ``shots_per_basis`` falsy the exact per-basis expectation values are
    used (infinite-shot limit); otherwise each basis is sampled.
    """
    n = model.n_sites
    z = 2.0 * site_bits(n) - 1.0
    total = 0.0
    for axis in "XYZ":
        psi = state.amplitudes
        if axis != "Z":
            psi = rotate_state(psi, axis * n)
        p = np.abs(psi) ** 2
        if shots_per_basis:
            if rng is None:
                raise ValidationError("sampled energy estimation needs an RNG")
            counts = rng.multinomial(shots_per_basis, p / p.sum())
            p = counts / shots_per_basis
        corr = np.einsum("s,si,sj->ij", p, z, z)
        nn = sum(corr[i, i + 1] for i in range(n - 1))
        scale = model.coupling_j * (model.anisotropy_delta if axis == "Z" else 1.0)
        total += 0.25 * scale * nn
    return float(total)


def _warm_start_thetas(
    model: SpinModel, couplings: CouplingMatrix, layers: int, starts: int = 8
) -> np.ndarray:
    """Derivative-free exact-energy optimization on a small chain of the same
    parity, used to seed the stochastic search.  The circuit landscape has
    local minima, so a fixed set of deterministic starting points is tried."""
    n = model.n_sites
    warm_n = n if n <= 8 else (8 if n % 2 == 0 else 7)
    warm_model = SpinModel(
        warm_n, model.coupling_j, model.anisotropy_delta,
        tuple(lt for lt in model.links if lt.site_pair[1] <= warm_n),
    )
    warm_coup = couplings.submatrix(warm_n)
    psi0 = neel_state(warm_n)

    def objective(thetas):
        psi = run_circuit(psi0, CircuitParams(tuple(thetas)), warm_coup)
        return estimate_energy(psi, warm_model, None)

    start_rng = np.random.default_rng(0x7A51)
    x0s = [np.tile([0.5, 0.3], layers)]
    x0s += [start_rng.uniform(-1.5, 1.5, 2 * layers) for _ in range(starts - 1)]
    best_x, best_f = None, np.inf
    for x0 in x0s:
        res = scipy.optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={"maxiter": 400 * layers, "xatol": 1e-7, "fatol": 1e-11},
        )
        if res.fun < best_f:
            best_f, best_x = res.fun, res.x
    return np.asarray(best_x, dtype=float)


def vqe_optimize(
    model: SpinModel,
    couplings: CouplingMatrix,
    layers: int,
    shots_per_basis: int | None,
    seed: int,
    iterations: int = 120,
    a_gain: float = 0.15,
    c_gain: float = 0.1,
    init: np.ndarray | None = None,
) -> tuple[CircuitParams, np.ndarray]:
    """SPSA minimization of the measured chain energy over circuit parameters.

    Gains follow a_k = a/(k+1+A)^0.602 and c_k = c/(k+1)^0.101 with A set to
    10% of the iteration budget.  Deterministic for a fixed seed.  Returns the
    best parameters seen and the per-iteration energy trace.
    """
    if layers < 1:
        raise ValidationError("need at least one circuit layer")
    rng = np.random.default_rng([int(seed), 0x5B5A])
    theta = (
        np.asarray(init, dtype=float).copy()
        if init is not None
        else _warm_start_thetas(model, couplings, layers)
    )
    if theta.shape != (2 * layers,):
        raise ValidationError(f"need {2 * layers} parameters, got {theta.shape}")
    psi0 = neel_state(model.n_sites)

    def energy(th):
        psi = run_circuit(psi0, CircuitParams(tuple(th)), couplings)
        return estimate_energy(psi, model, shots_per_basis, rng)

    stability = 0.1 * max(iterations, 1)
    trace = []
    best_theta, best_e = theta.copy(), energy(theta)
    for k in range(iterations):
        ak = a_gain / (k + 1 + stability) ** 0.602
        ck = c_gain / (k + 1) ** 0.101
        delta = rng.integers(0, 2, size=theta.size) * 2.0 - 1.0
        e_plus = energy(theta + ck * delta)
        e_minus = energy(theta - ck * delta)
        theta = theta - ak * (e_plus - e_minus) / (2.0 * ck) * delta
        e_now = energy(theta)
        trace.append(e_now)
        if e_now < best_e:
            best_e, best_theta = e_now, theta.copy()
    return CircuitParams(tuple(best_theta)), np.asarray(trace)


def reduced_density_matrix(state: PureState, sites) -> DensityMatrix:
    """Partial trace of |psi><psi| onto ``sites`` (1-based, any subset)."""
    sites = tuple(sorted(sites))
    n = state.n_sites
    if not sites or any(s < 1 or s > n for s in sites) or len(set(sites)) != len(sites):
        raise ValidationError(f"invalid site set {sites}")
    if len(sites) > PARTIAL_TRACE_CAP:
        raise ValidationError(f"partial trace capped at {PARTIAL_TRACE_CAP} sites")
    keep = [s - 1 for s in sites]
    rest = [ax for ax in range(n) if ax not in keep]
    t = state.amplitudes.reshape((2,) * n)
    t = np.transpose(t, keep + rest)
    m = t.reshape(2 ** len(sites), 2 ** len(rest))
    rho = m @ m.conj().T
    return DensityMatrix(len(sites), rho)


def partial_trace_dm(rho: DensityMatrix, keep_positions) -> DensityMatrix:
    """Partial trace of a density matrix onto the given axis positions
    (0-based, relative to the matrix's own register)."""
    n = rho.n_sites
    keep = sorted(keep_positions)
    if not keep or any(p < 0 or p >= n for p in keep):
        raise ValidationError(f"invalid positions {keep_positions}")
    rest = [ax for ax in range(n) if ax not in keep]
    t = rho.matrix.reshape((2,) * (2 * n))
    perm = keep + rest
    t = np.transpose(t, perm + [p + n for p in perm])
    k, r = len(keep), len(rest)
    t = t.reshape(2**k, 2**r, 2**k, 2**r)
    return DensityMatrix(k, np.einsum("arbr->ab", t))


def symmetrized_rdm(rho: DensityMatrix) -> DensityMatrix:
    """Average with the global spin-flip conjugate: (rho + P rho P)/2.

    Flipping every bit reverses the basis-index order, so the conjugation is
    an index reversal on both axes.
    """
    flipped = rho.matrix[::-1, ::-1]
    return DensityMatrix(rho.n_sites, 0.5 * (rho.matrix + flipped))


def magnetization_sector_norms(state: PureState) -> dict[int, float]:
    """Squared norm per magnetization sector M = N_up - N_down."""
    n = state.n_sites
    pop = site_bits(n).sum(axis=1)
    w = np.abs(state.amplitudes) ** 2
    return {
        int(2 * k - n): float(w[pop == k].sum())
        for k in range(n + 1)
        if w[pop == k].sum() > 0
    }


def save_state(state: PureState, path) -> None:
    """Binary state file: magic, u32 LE site count, then (re, im) f64 LE pairs
    in bitstring-ascending order."""
    with open(path, "wb") as fh:
        fh.write(STATE_MAGIC)
        fh.write(struct.pack("<I", state.n_sites))
        inter = np.empty(2 * state.amplitudes.size, dtype="<f8")
        inter[0::2] = state.amplitudes.real
        inter[1::2] = state.amplitudes.imag
        fh.write(inter.tobytes())


def load_state(path) -> PureState:
    with open(path, "rb") as fh:
        magic = fh.read(len(STATE_MAGIC))
        if magic != STATE_MAGIC:
            raise ValidationError(f"bad state file magic {magic!r}")
        (n,) = struct.unpack("<I", fh.read(4))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != 2 ** (n + 1):
        raise ValidationError("state file length does not match site count")
    return PureState(int(n), raw[0::2] + 1j * raw[1::2])
