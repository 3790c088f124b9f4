"""Entanglement-Hamiltonian tomography: parametrized ansatz families, Gibbs
states, the least-squares cost over Pauli-basis outcome frequencies, and its
quasi-Newton minimization with an analytic spectral gradient.

The fitted operator is H(beta) = sum_t beta_t h_t with two-site Heisenberg
blocks h_t = Sx Sx + Sy Sy + Delta Sz Sz on subsystem links (and, for
disjoint geometries, optional cross pairs).  The model state is
rho(beta) = exp(-H) / Z and the cost compares its (optionally
channel-corrupted) outcome distributions against the data, setting by
setting and bitstring by bitstring.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from threadpoolctl import threadpool_limits

from .errors import ValidationError
from .measurement import MeasurementDataset, ProbabilityTables, empirical_probabilities
from .noise import NoiseParams, apply_adjoint_channel_matrix, apply_channel_matrix
from .pauli import AXIS_ROTATIONS, conjugate_single_site, embed_operator, hermiticity_defect
from .spinmodel import heisenberg_link_block
from .statekit import DensityMatrix

GIBBS_SITE_CAP = 12

VARIANTS = ("local-links", "polynomial-profile", "bilocal-pairs")


def _contiguous_runs(sites: tuple[int, ...]) -> list[tuple[int, ...]]:
    runs, current = [], [sites[0]]
    for s in sites[1:]:
        if s == current[-1] + 1:
            current.append(s)
        else:
            runs.append(tuple(current))
            current = [s]
    runs.append(tuple(current))
    return runs


@dataclass(frozen=True)
class EHAnsatz:
    """Parametrized entanglement-Hamiltonian family on a subsystem.

    local-links        one coefficient per nearest-neighbor link
    polynomial-profile three coefficients (q0, q1, q2), link j gets
                       q0 + q1 j + q2 j^2 with j = 1..L-1
    bilocal-pairs      per-link coefficients inside each interval plus,
                       optionally, one coefficient per cross pair
    """

    variant: str
    sites: tuple[int, ...]
    anisotropy_delta: float = 1.0
    include_cross_links: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown ansatz variant {self.variant!r}")
        sites = tuple(sorted(self.sites))
        if len(sites) < 2 or len(set(sites)) != len(sites):
            raise ValidationError("geometry needs at least two distinct sites")
        object.__setattr__(self, "sites", sites)
        runs = _contiguous_runs(sites)
        if self.variant == "bilocal-pairs":
            if len(runs) != 2:
                raise ValidationError("bilocal ansatz needs exactly two disjoint intervals")
        elif len(runs) != 1:
            raise ValidationError(f"{self.variant} ansatz needs a contiguous geometry")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def intervals(self) -> list[tuple[int, ...]]:
        return _contiguous_runs(self.sites)

    def term_pairs(self) -> list[tuple[int, int]]:
        """Global site pairs carrying one Heisenberg block each.  Intra-interval
        nearest-neighbor links come first, then cross pairs."""
        runs = self.intervals()
        pairs = [(run[k], run[k + 1]) for run in runs for k in range(len(run) - 1)]
        if self.variant == "bilocal-pairs" and self.include_cross_links:
            a, b = runs
            pairs += list(itertools.product(a, b))
        return pairs

    @property
    def n_cross_pairs(self) -> int:
        if self.variant != "bilocal-pairs" or not self.include_cross_links:
            return 0
        a, b = self.intervals()
        return len(a) * len(b)

    @property
    def n_parameters(self) -> int:
        if self.variant == "polynomial-profile":
            return 3
        return len(self.term_pairs())

    def coefficient_jacobian(self) -> np.ndarray:
        """(n_terms, n_parameters) map from parameters to link coefficients."""
        n_terms = len(self.term_pairs())
        if self.variant == "polynomial-profile":
            j = np.arange(1, n_terms + 1, dtype=float)
            return np.stack([np.ones_like(j), j, j**2], axis=1)
        return np.eye(n_terms)

    def link_coefficients(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_parameters,):
            raise ValidationError(
                f"{self.variant} ansatz takes {self.n_parameters} parameters, got {params.shape}"
            )
        return self.coefficient_jacobian() @ params

    def default_init(self) -> np.ndarray:
        """Discrete parabola j(L-j), scaled to peak at 1; cross links start 0."""
        if self.variant == "polynomial-profile":
            length = self.n_sites
            peak = (length / 2.0) ** 2 if length % 2 == 0 else (length**2 - 1) / 4.0
            return np.array([0.0, length / peak, -1.0 / peak])
        init = []
        for run in self.intervals():
            ln = len(run)
            js = np.arange(1, ln)
            if len(js):
                prof = js * (ln - js)
                init.extend(prof / prof.max())
        init.extend([0.0] * self.n_cross_pairs)
        return np.asarray(init, dtype=float)


def build_eh(ansatz: EHAnsatz, params) -> np.ndarray:
    """Assemble sum_t beta_t h_t on the subsystem register (sorted sites)."""
    coeffs = ansatz.link_coefficients(np.asarray(params, dtype=float))
    pos = {s: k + 1 for k, s in enumerate(ansatz.sites)}
    block = heisenberg_link_block(1.0, ansatz.anisotropy_delta)
    dim = 2**ansatz.n_sites
    out = np.zeros((dim, dim), dtype=complex)
    for beta, (i, j) in zip(coeffs, ansatz.term_pairs()):
        out += beta * embed_operator(block, (pos[i], pos[j]), ansatz.n_sites)
    return out


@dataclass(frozen=True)
class GibbsState:
    """rho = exp(-H)/Z with the eigendecomposition of H cached."""

    eh_matrix: np.ndarray
    rho: DensityMatrix
    log_partition: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sites: tuple[int, ...] | None = None
    data_tag: tuple | None = None


def gibbs_state(
    eh: np.ndarray, sites: tuple[int, ...] | None = None, data_tag: tuple | None = None
) -> GibbsState:
    """Eigendecompose H and build exp(-H)/Z with a max-shift for overflow
    safety; ``log_partition`` refers to the unshifted definition."""
    eh = np.asarray(eh)
    dim = eh.shape[0]
    if dim > 2**GIBBS_SITE_CAP:
        raise ValidationError(f"Gibbs construction capped at 2^{GIBBS_SITE_CAP}")
    if hermiticity_defect(eh) > 1e-10:
        raise ValidationError("entanglement Hamiltonian must be Hermitian within 1e-10")
    lam, vec = scipy.linalg.eigh(eh)
    shifted = np.exp(-(lam - lam[0]))
    z_shift = shifted.sum()
    rho = (vec * (shifted / z_shift)) @ vec.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    n = int(np.log2(dim))
    return GibbsState(
        eh_matrix=eh,
        rho=DensityMatrix(n, rho),
        log_partition=float(np.log(z_shift) - lam[0]),
        eigenvalues=lam,
        eigenvectors=vec,
        sites=sites,
        data_tag=data_tag,
    )


def entanglement_spectrum(gibbs: GibbsState) -> np.ndarray:
    """xi_a = eigenvalues of H + log Z, ascending; sum exp(-xi) = 1."""
    return np.sort(gibbs.eigenvalues + gibbs.log_partition)


def _exp_divided_differences(mu: np.ndarray) -> np.ndarray:
    """Kernel F_mn = (e^{-mu_m} - e^{-mu_n}) / (mu_m - mu_n), with the
    diagonal limit -e^{-mu_m}; evaluated stably via sinh."""
    half = 0.5 * np.subtract.outer(mu, mu)
    mid = 0.5 * np.add.outer(mu, mu)
    small = np.abs(half) < 1e-9
    safe = np.where(small, 1.0, half)
    sinhc = np.where(small, 1.0, np.sinh(safe) / safe)
    return -np.exp(-mid) * sinhc


class _Objective:
    """Cost and analytic gradient for one (ansatz, data, noise) triple.

    Setting unitaries are precomputed when the register is small enough;
    larger registers fall back to site-by-site rotations.
    """

    _PRECOMPUTE_DIM = 256

    def __init__(self, ansatz: EHAnsatz, tables: ProbabilityTables, noise: NoiseParams | None):
        if tuple(tables.sites) != ansatz.sites:
            raise ValidationError("probability tables do not cover the ansatz geometry")
        self.ansatz = ansatz
        self.tables = tables
        self.noise = noise if noise is not None and not noise.is_trivial else None
        self.jacobian = ansatz.coefficient_jacobian()
        pos = {s: k + 1 for k, s in enumerate(ansatz.sites)}
        block = heisenberg_link_block(1.0, ansatz.anisotropy_delta)
        n = ansatz.n_sites
        self.n_sites = n
        self.terms = [
            embed_operator(block, (pos[i], pos[j]), n) for i, j in ansatz.term_pairs()
        ]
        self.unitaries = None
        if 2**n <= self._PRECOMPUTE_DIM:
            stack = np.empty((len(tables.axes), 2**n, 2**n), dtype=complex)
            for k, axes in enumerate(tables.axes):
                u = np.array([[1.0]], dtype=complex)
                for ax in axes:
                    u = np.kron(u, AXIS_ROTATIONS[ax])
                stack[k] = u
            self.unitaries = stack
            # flattened copies so every evaluation is a single GEMM
            self._u_flat = stack.reshape(-1, 2**n)
            self._u_flat_conj = self._u_flat.conj()
        self.evaluations = 0

    def _rotated_diagonals(self, mat: np.ndarray) -> np.ndarray:
        """diag(U mat U^dagger) for every setting, rows aligned with tables."""
        if self.unitaries is not None:
            n_set, dim, _ = self.unitaries.shape
            left = self._u_flat @ mat
            return np.real((left * self._u_flat_conj).sum(axis=1)).reshape(n_set, dim)
        out = np.empty_like(self.tables.probs)
        for k, axes in enumerate(self.tables.axes):
            rotated = mat
            for site, ax in enumerate(axes, start=1):
                if ax != "Z":
                    rotated = conjugate_single_site(
                        rotated, AXIS_ROTATIONS[ax], site, self.n_sites
                    )
            out[k] = np.real(np.diag(rotated))
        return out

    def _pulled_back_residuals(self, resid: np.ndarray) -> np.ndarray:
        """B = sum_k U_k^dag diag(2 r_k) U_k."""
        if self.unitaries is not None:
            weighted = 2.0 * resid.reshape(-1)[:, None] * self._u_flat
            return self._u_flat_conj.T @ weighted
        dim = 2**self.n_sites
        b = np.zeros((dim, dim), dtype=complex)
        for k, axes in enumerate(self.tables.axes):
            contrib = np.diag(2.0 * resid[k]).astype(complex)
            for site, ax in enumerate(axes, start=1):
                if ax != "Z":
                    contrib = conjugate_single_site(
                        contrib, AXIS_ROTATIONS[ax].conj().T, site, self.n_sites
                    )
            b += contrib
        return b

    def __call__(self, params: np.ndarray, need_grad: bool = True):
        self.evaluations += 1
        coeffs = self.jacobian @ params
        h = np.zeros_like(self.terms[0])
        for c, t in zip(coeffs, self.terms):
            h += c * t
        lam, vec = scipy.linalg.eigh(h)
        mu = lam - lam[0]
        wexp = np.exp(-mu)
        z_shift = wexp.sum()
        rho = (vec * (wexp / z_shift)) @ vec.conj().T
        rho_fwd = apply_channel_matrix(rho, self.noise) if self.noise else rho

        q = self._rotated_diagonals(rho_fwd)
        resid = q - self.tables.probs
        chi2 = float(np.sum(resid**2))
        if not need_grad:
            return chi2, None

        # Pull the residuals back through the rotations and the adjoint
        # channel; gradient terms follow from the divided-difference
        # derivative of exp(-H).
        b = self._pulled_back_residuals(resid)
        w_op = apply_adjoint_channel_matrix(b, self.noise) if self.noise else b
        w_tilde = vec.conj().T @ w_op @ vec
        kernel = _exp_divided_differences(mu)
        c_mat = kernel * w_tilde.T
        trace_rho_w = np.real(np.sum(rho * w_op.T))
        dim = rho.shape[0]
        c_mat[np.diag_indices(dim)] -= trace_rho_w * np.diag(kernel)
        grad_terms = np.empty(len(self.terms))
        for t, h_t in enumerate(self.terms):
            m_t = vec.conj().T @ h_t @ vec
            grad_terms[t] = np.real(np.sum(m_t * c_mat)) / z_shift
        return chi2, self.jacobian.T @ grad_terms


def chi_squared(params, data, ansatz: EHAnsatz, noise: NoiseParams | None = None) -> float:
    """Least-squares cost of the ansatz against data at the given parameters."""
    tables = _as_tables(data, ansatz)
    obj = _Objective(ansatz, tables, noise)
    with threadpool_limits(limits=1):  # small matrices; avoid BLAS thread churn
        value, _ = obj(np.asarray(params, dtype=float), need_grad=False)
    return value


def chi_squared_gradient(params, data, ansatz: EHAnsatz, noise: NoiseParams | None = None):
    """(cost, analytic gradient) pair; the gradient is exact for the forward
    model, using the spectral derivative of exp(-H)."""
    tables = _as_tables(data, ansatz)
    obj = _Objective(ansatz, tables, noise)
    with threadpool_limits(limits=1):
        return obj(np.asarray(params, dtype=float), need_grad=True)


def _as_tables(data, ansatz: EHAnsatz) -> ProbabilityTables:
    if isinstance(data, ProbabilityTables):
        if tuple(data.sites) != ansatz.sites:
            raise ValidationError("probability tables do not match the ansatz geometry")
        return data
    if isinstance(data, MeasurementDataset):
        return empirical_probabilities(data, ansatz.sites)
    raise ValidationError(f"cannot fit against {type(data).__name__}")


def check_window_completeness(tables: ProbabilityTables, ansatz: EHAnsatz, window: int = 5):
    """Require every contiguous window (of up to ``window`` sites) inside each
    geometry interval to see all 3^w restricted axis combinations."""
    site_to_col = {s: k for k, s in enumerate(tables.sites)}
    for run in ansatz.intervals():
        w = min(window, len(run))
        for start in range(len(run) - w + 1):
            cols = [site_to_col[s] for s in run[start : start + w]]
            seen = {"".join(ax[c] for c in cols) for ax in tables.axes}
            if len(seen) < 3**w:
                raise ValidationError(
                    f"settings are not tomographically complete on sites "
                    f"{run[start : start + w]} ({len(seen)} of {3**w} combinations)"
                )


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    chi2: float
    iterations: int
    gradient_norm: float
    noise: NoiseParams
    entanglement_spectrum: np.ndarray
    converged: bool
    ansatz: EHAnsatz
    gibbs: GibbsState = field(repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "variant": self.ansatz.variant,
                "geometry": list(self.ansatz.sites),
                "beta": [float(b) for b in self.beta],
                "chi2": self.chi2,
                "noise": {"p1": self.noise.p1, "p2": self.noise.p2},
                "xi": [float(x) for x in self.entanglement_spectrum],
                "iterations": self.iterations,
                "gradient_norm": self.gradient_norm,
                "converged": self.converged,
            },
            sort_keys=True,
        )


def minimize_bfgs(objective, x0: np.ndarray, gtol: float = 1e-8, max_iter: int = 500):
    """BFGS with Armijo backtracking.  ``objective(x, need_grad)`` returns
    (value, gradient-or-None).  Returns (x, f, g, iterations, converged)."""
    x = np.asarray(x0, dtype=float).copy()
    f, g = objective(x, True)
    dim = x.size
    h_inv = np.eye(dim)
    identity = np.eye(dim)
    iterations = 0
    while iterations < max_iter and np.linalg.norm(g) > gtol:
        direction = -h_inv @ g
        slope = float(g @ direction)
        if slope >= 0:
            h_inv = np.eye(dim)
            direction = -g
            slope = float(g @ direction)
        step = 1.0
        f_trial = objective(x + step * direction, False)[0]
        while f_trial > f + 1e-4 * step * slope and step > 1e-16:
            step *= 0.5
            f_trial = objective(x + step * direction, False)[0]
        if step <= 1e-16:
            break
        x_new = x + step * direction
        f_new, g_new = objective(x_new, True)
        s = step * direction
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho_bfgs = 1.0 / sy
            left = identity - rho_bfgs * np.outer(s, y)
            h_inv = left @ h_inv @ left.T + rho_bfgs * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        iterations += 1
    return x, f, g, iterations, bool(np.linalg.norm(g) <= gtol)


def fit_eh(
    data,
    ansatz: EHAnsatz,
    noise: NoiseParams | None = None,
    init: np.ndarray | None = None,
    seed: int = 0,
    gtol: float = 1e-8,
    max_iter: int = 500,
    restarts: int = 2,
) -> FitResult:
    """Fit the ansatz to measured outcome frequencies.

    Minimizes the per-setting, per-bitstring squared deviation by BFGS with
    the analytic spectral gradient, starting from the discrete parabola.  If
    the line search stalls before reaching ``gtol``, a small seeded
    perturbation of the best point is retried.  The returned Gibbs state is
    the noiseless rho(beta); the channel enters only the forward model.
    """
    if ansatz.n_sites > GIBBS_SITE_CAP:
        raise ValidationError(f"fit capped at {GIBBS_SITE_CAP} sites")
    tables = _as_tables(data, ansatz)
    check_window_completeness(tables, ansatz)
    noise_used = noise if noise is not None else NoiseParams(0.0, 0.0)
    obj = _Objective(ansatz, tables, noise_used)
    x0 = np.asarray(init, dtype=float) if init is not None else ansatz.default_init()
    if x0.shape != (ansatz.n_parameters,):
        raise ValidationError(f"init must have {ansatz.n_parameters} entries")
    rng = np.random.default_rng([int(seed), 0xF17])
    best = None
    total_iters = 0
    start = x0
    with threadpool_limits(limits=1):  # small matrices; avoid BLAS thread churn
        for attempt in range(restarts + 1):
            x, f, g, iters, converged = minimize_bfgs(obj, start, gtol=gtol, max_iter=max_iter)
            total_iters += iters
            if best is None or f < best[1]:
                best = (x, f, g, converged)
            if converged:
                break
            start = best[0] + rng.normal(scale=1e-3, size=x0.size)
    x, f, g, converged = best
    tag = data.tag if isinstance(data, MeasurementDataset) else None
    gibbs = gibbs_state(build_eh(ansatz, x), sites=ansatz.sites, data_tag=tag)
    return FitResult(
        beta=x,
        chi2=f,
        iterations=total_iters,
        gradient_norm=float(np.linalg.norm(g)),
        noise=noise_used,
        entanglement_spectrum=entanglement_spectrum(gibbs),
        converged=converged,
        ansatz=ansatz,
        gibbs=gibbs,
    )
