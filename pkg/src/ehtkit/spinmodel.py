"""XXZ chain construction, link decomposition, and long-range XY couplings.

The chain Hamiltonian is a sum of two-site link terms

    h_j = (J/2) (S+_j S-_{j+1} + S-_j S+_{j+1}) + J * Delta * Sz_j Sz_{j+1}

for j = 1..N-1 with open boundaries.  Long-range flip-flop couplings J_ij are
available either as an exact power law J0/|i-j|^alpha or from the transverse
normal modes of a linear ion chain driven by a three-tone laser field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.constants

from .errors import InstabilityError, NumericalFailureError, ValidationError
from .pauli import SMINUS, SPLUS, SX, SY, SZ, embed_operator, hermiticity_defect

DENSE_SITE_CAP = 14  # hard cap for dense operator assembly (2^14 = 16384)


def heisenberg_link_block(j: float, delta: float) -> np.ndarray:
    """4x4 two-site link matrix in the basis (dd, du, ud, uu)."""
    flip = 0.5 * j * (np.kron(SPLUS, SMINUS) + np.kron(SMINUS, SPLUS))
    ising = j * delta * np.kron(SZ, SZ)
    return flip + ising


@dataclass(frozen=True)
class LinkTerm:
    site_pair: tuple[int, int]
    matrix: np.ndarray


@dataclass(frozen=True)
class SpinModel:
    n_sites: int
    coupling_j: float
    anisotropy_delta: float
    links: tuple[LinkTerm, ...]

    def hamiltonian(self) -> np.ndarray:
        """Full dense Hamiltonian (sum of embedded link terms)."""
        return assemble_operator(
            self.n_sites,
            [(1.0, lt.site_pair, lt.matrix) for lt in self.links],
        )

    def to_json(self) -> str:
        return json.dumps({"n": self.n_sites, "j": self.coupling_j, "delta": self.anisotropy_delta})

    @staticmethod
    def from_json(text: str) -> "SpinModel":
        d = json.loads(text)
        return build_xxz(d["n"], d["j"], d["delta"])


@dataclass(frozen=True)
class CouplingMatrix:
    n_sites: int
    values: np.ndarray  # symmetric, zero diagonal, angular-frequency units

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.n_sites, self.n_sites):
            raise ValidationError(f"coupling matrix shape {v.shape} for n={self.n_sites}")
        if np.max(np.abs(v - v.T)) > 1e-12 * max(1.0, np.max(np.abs(v))):
            raise ValidationError("coupling matrix must be symmetric")
        if np.max(np.abs(np.diag(v))) > 0:
            raise ValidationError("coupling matrix must have zero diagonal")
        object.__setattr__(self, "values", v)

    def submatrix(self, n: int) -> "CouplingMatrix":
        return CouplingMatrix(n, self.values[:n, :n].copy())

    def to_json(self) -> str:
        return json.dumps({"n": self.n_sites, "values": [float(x) for x in self.values.ravel()]})

    @staticmethod
    def from_json(text: str) -> "CouplingMatrix":
        d = json.loads(text)
        n = d["n"]
        return CouplingMatrix(n, np.array(d["values"], dtype=float).reshape(n, n))


@dataclass(frozen=True)
class TrapParams:
    """Linear-trap and laser parameters for the normal-mode coupling sum.

    Frequencies are angular (rad/s).  Rabi-frequency arrays have one entry
    per ion and per tone: blue, red, and the light-shift compensation tone.
    """

    n_ions: int
    omega_axial: float
    omega_transverse: float
    detuning_blue: float
    detuning_red: float
    detuning_comp: float
    rabi_blue: np.ndarray
    rabi_red: np.ndarray
    rabi_comp: np.ndarray
    wavenumber: float = 2.0 * np.pi / 729e-9
    ion_mass: float = 40 * scipy.constants.atomic_mass
    omega_transverse_2: float | None = None  # second branch; defaults to the first

    def __post_init__(self):
        if self.n_ions < 1:
            raise ValidationError("n_ions must be >= 1")
        for name in ("omega_axial", "omega_transverse"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("rabi_blue", "rabi_red", "rabi_comp"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.n_ions,):
                raise ValidationError(f"{name} must have length n_ions")
            object.__setattr__(self, name, arr)


def build_xxz(n: int, j: float, delta: float) -> SpinModel:
    """Open-boundary XXZ chain with N-1 nearest-neighbor link terms."""
    if n < 2:
        raise ValidationError(f"chain needs at least 2 sites, got {n}")
    block = heisenberg_link_block(j, delta)
    links = tuple(LinkTerm((k, k + 1), block.copy()) for k in range(1, n))
    return SpinModel(n, j, delta, links)


def assemble_operator(n_sites: int, terms) -> np.ndarray:
    """Sum of coefficient-weighted blocks embedded at their sites.

    ``terms`` is an iterable of (coefficient, sites, block) with ``sites``
    1-based and ``block`` of dimension 2^len(sites).
    """
    if n_sites > DENSE_SITE_CAP:
        raise ValidationError(f"dense assembly capped at {DENSE_SITE_CAP} sites, got {n_sites}")
    dim = 2**n_sites
    out = np.zeros((dim, dim), dtype=complex)
    for coeff, sites, block in terms:
        out += coeff * embed_operator(np.asarray(block, dtype=complex), tuple(sites), n_sites)
    if hermiticity_defect(out) > 1e-12 * max(1.0, float(np.max(np.abs(out)))):
        raise ValidationError("assembled operator is not Hermitian")
    return out


def power_law_couplings(n: int, j0: float, alpha: float) -> CouplingMatrix:
    """J_ij = J0 / |i-j|^alpha, exactly."""
    if n < 2:
        raise ValidationError("need n >= 2")
    if j0 <= 0:
        raise ValidationError("j0 must be positive")
    if alpha < 0:
        raise ValidationError("alpha must be >= 0")
    dist = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float)
    with np.errstate(divide="ignore"):
        vals = j0 / dist**alpha
    np.fill_diagonal(vals, 0.0)
    return CouplingMatrix(n, vals)


def equilibrium_positions(n: int, max_iter: int = 200, tol: float = 1e-12) -> np.ndarray:
    """Dimensionless axial equilibrium positions of a linear Coulomb chain.

    Length unit (e^2 / 4 pi eps0 m omega_axial^2)^(1/3); solved by damped
    Newton iteration on the force equations, converged at max |force| < tol.
    """
    if n == 1:
        return np.zeros(1)
    # quasi-uniform initial guess; spacing shrinks slowly with N
    u = (np.arange(n) - (n - 1) / 2.0) * 2.0 * n**-0.56

    def force(u):
        d = np.subtract.outer(u, u)
        np.fill_diagonal(d, np.inf)
        return u - np.sum(np.sign(d) / d**2, axis=1)

    def jacobian(u):
        d = np.abs(np.subtract.outer(u, u))
        np.fill_diagonal(d, np.inf)
        off = -2.0 / d**3
        jac = off.copy()
        np.fill_diagonal(jac, 1.0 - off.sum(axis=1))
        return jac

    f = force(u)
    for _ in range(max_iter):
        if np.max(np.abs(f)) < tol:
            return u
        step = np.linalg.solve(jacobian(u), -f)
        lam = 1.0
        while lam > 1e-6:
            trial = u + lam * step
            if np.all(np.diff(trial) > 0):
                f_trial = force(trial)
                if np.max(np.abs(f_trial)) < np.max(np.abs(f)) or lam < 1e-3:
                    u, f = trial, f_trial
                    break
            lam *= 0.5
        else:
            break
    f = force(u)
    if np.max(np.abs(f)) >= tol:
        raise NumericalFailureError(
            "equilibrium position solve did not converge", residual=float(np.max(np.abs(f)))
        )
    return u


def transverse_modes(positions: np.ndarray, trap_ratio: float) -> tuple[np.ndarray, np.ndarray]:
    """Normal modes of one transverse branch.

    Returns (lambdas, modes) with lambdas the eigenvalues of the dimensionless
    Hessian (omega_n = omega_axial * sqrt(lambda_n), descending) and modes the
    orthonormal amplitude matrix, column n = mode n.
    """
    n = len(positions)
    d = np.abs(np.subtract.outer(positions, positions))
    np.fill_diagonal(d, np.inf)
    inv3 = 1.0 / d**3
    hess = inv3.copy()
    np.fill_diagonal(hess, trap_ratio**2 - inv3.sum(axis=1))
    lam, vec = np.linalg.eigh(hess)
    order = np.argsort(lam)[::-1]
    return lam[order], vec[:, order]


def mode_sum_couplings(trap: TrapParams) -> CouplingMatrix:
    """Flip-flop coupling matrix from the full transverse normal-mode sum.

    Sums the blue and red tones plus the compensation tone at half weight
    over all 2N transverse modes (both branches):

        J_ij = (hbar k^2 / 4 m) sum_n M_i^n M_j^n [ Ob_i Ob_j / (wb^2 - wn^2)
               + Or_i Or_j / (wr^2 - wn^2) + (1/2) Oc_i Oc_j / (wc^2 - wn^2) ]
    """
    n = trap.n_ions
    u = equilibrium_positions(n)
    ratios = [
        trap.omega_transverse / trap.omega_axial,
        (trap.omega_transverse_2 or trap.omega_transverse) / trap.omega_axial,
    ]
    freqs, amps = [], []
    for r in ratios:
        lam, vec = transverse_modes(u, r)
        if np.min(lam) <= 0:
            raise InstabilityError(
                "transverse branch unstable for this trap", residual=float(np.min(lam))
            )
        freqs.append(trap.omega_axial * np.sqrt(lam))
        amps.append(vec)
    omega_n = np.concatenate(freqs)  # 2N mode frequencies
    modes = np.concatenate(amps, axis=1)  # (N, 2N)

    prefac = scipy.constants.hbar * trap.wavenumber**2 / (4.0 * trap.ion_mass)
    vals = np.zeros((n, n))
    tones = [
        (trap.rabi_blue, trap.detuning_blue, 1.0),
        (trap.rabi_red, trap.detuning_red, 1.0),
        (trap.rabi_comp, trap.detuning_comp, 0.5),
    ]
    for rabi, det, weight in tones:
        denom = det**2 - omega_n**2
        if np.any(np.abs(denom) < 1e-30):
            raise NumericalFailureError("laser tone resonant with a motional mode")
        # sum_n M_i^n M_j^n / denom_n, scaled by the per-ion Rabi frequencies
        kernel = (modes / denom) @ modes.T
        vals += weight * np.outer(rabi, rabi) * kernel
    vals *= prefac
    np.fill_diagonal(vals, 0.0)
    vals = 0.5 * (vals + vals.T)  # symmetrize roundoff
    return CouplingMatrix(n, vals)


def xy_pairs(couplings: CouplingMatrix) -> list[tuple[int, int, float]]:
    """Nonzero (i, j, J_ij) pairs, 1-based, i < j."""
    out = []
    n = couplings.n_sites
    for i in range(n):
        for j in range(i + 1, n):
            v = couplings.values[i, j]
            if v != 0.0:
                out.append((i + 1, j + 1, float(v)))
    return out


def xy_hamiltonian(couplings: CouplingMatrix) -> np.ndarray:
    """Dense H_XY = sum_{i<j} J_ij (s+_i s-_j + s-_i s+_j)."""
    block = np.kron(SPLUS, SMINUS) + np.kron(SMINUS, SPLUS)
    return assemble_operator(
        couplings.n_sites, [(v, (i, j), block) for i, j, v in xy_pairs(couplings)]
    )


def magnetization_operator(n: int) -> np.ndarray:
    """Dense total-Sz operator."""
    return assemble_operator(n, [(1.0, (k,), SZ) for k in range(1, n + 1)])


def spin_flip_operator(n: int) -> np.ndarray:
    """Dense global spin-flip (x)_j sigma^x_j."""
    flip = np.zeros((2**n, 2**n))
    idx = np.arange(2**n)
    flip[idx[::-1], idx] = 1.0
    return flip


def dense_hamiltonian_real(model: SpinModel) -> np.ndarray:
    """Real symmetric dense Hamiltonian (XXZ link blocks are real)."""
    return np.ascontiguousarray(model.hamiltonian().real)
