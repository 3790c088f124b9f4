"""Entropies, fidelities (exact and sample-based), reference temperature
profiles, entropy scaling, and Schmidt-vector energy densities.

Entropies are in nats; the area/volume classifier converts its thresholds
from log 2 units internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .eht import FitResult, GibbsState
from .measurement import (
    MeasurementDataset,
    ProbabilityTables,
    born_tables,
    empirical_probabilities,
    split_dataset,
)
from .pauli import embed_operator
from .spinmodel import SpinModel, heisenberg_link_block
from .statekit import DensityMatrix, PureState, partial_trace_dm, reduced_density_matrix

LOG2 = float(np.log(2.0))

AREA_SLOPE_NATS = 0.05 * LOG2
VOLUME_SLOPE_NATS = 0.5 * LOG2


def vn_entropy(rho: DensityMatrix) -> float:
    """-Tr(rho log rho), eigenvalues below 1e-14 skipped."""
    ev = np.linalg.eigvalsh(rho.matrix)
    ev = ev[ev > 1e-14]
    return float(-(ev * np.log(ev)).sum())


def entropy_from_eh(gibbs: GibbsState) -> float:
    """Tr(rho H) + log Z; equals the von Neumann entropy of rho."""
    expect = float(np.real(np.sum(gibbs.rho.matrix * gibbs.eh_matrix.T)))
    return expect + gibbs.log_partition


def mutual_information(rho_ab: DensityMatrix, rho_a: DensityMatrix, rho_b: DensityMatrix) -> float:
    """S_A + S_B - S_AB for consistent reduced states."""
    if rho_a.n_sites + rho_b.n_sites != rho_ab.n_sites:
        raise ValidationError("subsystem sizes do not add up")
    return vn_entropy(rho_a) + vn_entropy(rho_b) - vn_entropy(rho_ab)


def uhlmann_fidelity(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    """(Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)))^2, via eigendecompositions."""
    if rho1.matrix.shape != rho2.matrix.shape:
        raise ValidationError("density matrices must have equal dimension")
    w, v = np.linalg.eigh(rho1.matrix)
    sq = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T
    middle = sq @ rho2.matrix @ sq
    mu = np.clip(np.linalg.eigvalsh(middle), 0.0, None)
    # eigenvalues at the round-off floor would add sqrt-noise to the result
    mu[mu < 1e-14 * max(mu.max(), 1e-300)] = 0.0
    return float(min(np.sqrt(mu).sum() ** 2, 1.0))


def purity(rho: DensityMatrix) -> float:
    return float(np.sum(np.abs(rho.matrix) ** 2))


_HAMMING_SITE = np.array([[1.0, -0.5], [-0.5, 1.0]])


def _hamming_transform(q: np.ndarray, m: int) -> np.ndarray:
    """Apply the site-factorized (-2)^{-D} kernel to an outcome distribution."""
    out = q
    for site in range(m):
        da, db = 2**site, 2 ** (m - site - 1)
        out = np.einsum("pq,aqb->apb", _HAMMING_SITE, out.reshape(da, 2, db)).reshape(-1)
    return out


def _hamming_contributions(p1: ProbabilityTables, p2: ProbabilityTables) -> np.ndarray:
    """Per-setting values 2^m * sum_{s,s'} (-2)^{-D} p1(s) p2(s'); their mean
    over settings estimates Tr(rho1 rho2)."""
    if p1.axes != p2.axes:
        raise ValidationError("probability tables use different settings")
    m = p1.n_sites
    scale = float(2**m)
    out = np.empty(len(p1.axes))
    for k in range(len(p1.axes)):
        out[k] = scale * float(p1.probs[k] @ _hamming_transform(p2.probs[k], m))
    return out


def hs_overlap_from_samples(
    p1: ProbabilityTables, p2: ProbabilityTables, n_sites: int | None = None
) -> float:
    """Hilbert-Schmidt overlap Tr(rho1 rho2) from per-setting outcome tables
    via the Hamming-distance kernel."""
    if n_sites is not None and n_sites != p1.n_sites:
        raise ValidationError("n_sites does not match the tables")
    return float(_hamming_contributions(p1, p2).mean())


def hs_fidelities(t11: float, t22: float, t12: float) -> tuple[float, float]:
    """(maximum, geometric-mean) overlap fidelities from purities and overlap."""
    if t11 <= 0 or t22 <= 0:
        raise ValidationError("purities must be positive")
    return t12 / max(t11, t22), t12 / np.sqrt(t11 * t22)


def _jackknife(f, contribs: dict[str, np.ndarray]) -> tuple[float, float]:
    """Value and delete-one-setting jackknife error of f(means-of-contribs)."""
    n = len(next(iter(contribs.values())))
    full = f({k: float(v.mean()) for k, v in contribs.items()})
    if n < 2:
        return full, 0.0
    loo = np.empty(n)
    for i in range(n):
        loo[i] = f(
            {k: float((v.sum() - v[i]) / (n - 1)) for k, v in contribs.items()}
        )
    return full, float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


@dataclass(frozen=True)
class WindowFidelity:
    sites: tuple[int, ...]
    f_max: float
    f_mean: float
    err_max: float
    err_mean: float


def windowed_fidelity(
    fitted: GibbsState,
    holdout: MeasurementDataset,
    window: int = 5,
    split_seed: int = 0,
) -> tuple[float, float, list[WindowFidelity]]:
    """Average fidelity between the fitted state and holdout data over all
    contiguous sub-windows of the geometry.

    Model marginals come from partial traces of the fitted state; the data
    purity uses the holdout split into two halves so the cross term is
    unbiased.  Error bars are delete-one-setting jackknives.
    """
    if fitted.sites is None:
        raise ValidationError("fitted state carries no geometry information")
    if fitted.data_tag is not None and tuple(fitted.data_tag) == tuple(holdout.tag):
        raise ValidationError(
            "holdout dataset matches the fitting dataset (same seed and source); "
            "verification needs independent data"
        )
    runs = []
    current = [fitted.sites[0]]
    for s in fitted.sites[1:]:
        if s == current[-1] + 1:
            current.append(s)
        else:
            runs.append(current)
            current = [s]
    runs.append(current)

    half_a, half_b = split_dataset(holdout, seed=split_seed)
    pos = {s: k for k, s in enumerate(fitted.sites)}
    results = []
    for run in runs:
        w = min(window, len(run))
        for start in range(len(run) - w + 1):
            win = tuple(run[start : start + w])
            p_exp = empirical_probabilities(holdout, win)
            p_a = empirical_probabilities(half_a, win)
            p_b = empirical_probabilities(half_b, win)
            rho_win = partial_trace_dm(fitted.rho, [pos[s] for s in win])
            q_model = born_tables(rho_win, p_exp.axes)
            contribs = {
                "t12": _hamming_contributions(p_exp, q_model),
                "t11": _hamming_contributions(p_a, p_b),
            }
            t22 = purity(rho_win)

            def f_max_of(c):
                return hs_fidelities(c["t11"], t22, c["t12"])[0]

            def f_mean_of(c):
                return hs_fidelities(c["t11"], t22, c["t12"])[1]

            fmax, err_max = _jackknife(f_max_of, contribs)
            fmean, err_mean = _jackknife(f_mean_of, contribs)
            results.append(WindowFidelity(win, fmax, fmean, err_max, err_mean))
    f_max_avg = float(np.mean([r.f_max for r in results]))
    f_mean_avg = float(np.mean([r.f_mean for r in results]))
    return f_max_avg, f_mean_avg, results


PROFILE_KINDS = (
    "bw-half-space",
    "cft-ball",
    "dirac-two-interval-local",
    "dirac-two-interval-bilocal",
)


@dataclass(frozen=True)
class ReferenceProfile:
    kind: str
    geometry: dict
    coords: np.ndarray
    values: np.ndarray
    conjugate_points: np.ndarray | None = None


def _two_interval_local(x: np.ndarray, a: float, b: float) -> np.ndarray:
    inside = (np.abs(x) > a) & (np.abs(x) < b)
    vals = np.zeros_like(x)
    xx = x[inside]
    vals[inside] = (b**2 - xx**2) * (xx**2 - a**2) / (2.0 * (b - a) * (a * b + xx**2))
    return vals


def reference_profile(kind: str, geometry: dict, coords) -> ReferenceProfile:
    """Analytic inverse-temperature profiles.

    bw-half-space             beta(x) = 2 pi x for x > 0 (zero at/behind the cut)
    cft-ball                  beta(x) = 2 pi (R^2 - x^2) / 2R inside |x| <= R
    dirac-two-interval-local  local weight for two intervals (a, b) on a line
    dirac-two-interval-bilocal  weight of the coupling to the conjugate point
    """
    x = np.asarray(coords, dtype=float)
    conj = None
    if kind == "bw-half-space":
        values = 2.0 * np.pi * np.clip(x, 0.0, None)
    elif kind == "cft-ball":
        radius = float(geometry["R"])
        if radius <= 0:
            raise ValidationError("ball radius must be positive")
        values = np.where(np.abs(x) <= radius, np.pi * (radius**2 - x**2) / radius, 0.0)
    elif kind in ("dirac-two-interval-local", "dirac-two-interval-bilocal"):
        a, b = float(geometry["a"]), float(geometry["b"])
        if not 0 < a < b:
            raise ValidationError("two-interval geometry needs 0 < a < b")
        values = _two_interval_local(x, a, b)
        if kind == "dirac-two-interval-bilocal":
            with np.errstate(divide="ignore", invalid="ignore"):
                factor = np.where(x != 0, a * b / (x * (a * b + x**2)), 0.0)
                conj = np.where(x != 0, -a * b / x, 0.0)
            values = factor * values
    else:
        raise ValidationError(f"unknown profile kind {kind!r}; choose from {PROFILE_KINDS}")
    return ReferenceProfile(kind, dict(geometry), x, values, conj)


def lattice_parabola(n_links: int) -> np.ndarray:
    """Discrete ball profile j (L - j) on links j = 1..L-1 of an L-site window."""
    j = np.arange(1, n_links + 1, dtype=float)
    return j * (n_links + 1 - j)


@dataclass(frozen=True)
class SchmidtEnergyProfile:
    links: tuple[tuple[int, int], ...]
    weights: np.ndarray           # Schmidt probabilities e^{-xi}, descending
    global_density: np.ndarray    # <h_j> in the global state, per link
    vector_densities: np.ndarray  # (n_vectors, n_links)
    differences: np.ndarray       # |vector - global|


def schmidt_energy_profile(
    state: PureState, model: SpinModel, subsystem, n_vectors: int
) -> SchmidtEnergyProfile:
    """Link energy densities of the leading Schmidt vectors of a subsystem,
    next to the same densities in the global state."""
    subsystem = tuple(sorted(subsystem))
    rho = reduced_density_matrix(state, subsystem)
    ev, vec = np.linalg.eigh(rho.matrix)
    order = np.argsort(ev)[::-1]
    ev, vec = ev[order], vec[:, order]
    n_vectors = min(n_vectors, len(ev))

    block = heisenberg_link_block(model.coupling_j, model.anisotropy_delta)
    links = [
        (s, s + 1) for s in subsystem if s + 1 in subsystem
    ]
    if not links:
        raise ValidationError("subsystem has no internal links")
    pos = {s: k + 1 for k, s in enumerate(subsystem)}
    embedded = [
        embed_operator(block, (pos[i], pos[j]), len(subsystem)) for i, j in links
    ]
    global_density = np.array(
        [
            float(
                np.real(
                    np.sum(reduced_density_matrix(state, (i, j)).matrix * block.T)
                )
            )
            for i, j in links
        ]
    )
    vec_dens = np.empty((n_vectors, len(links)))
    for alpha in range(n_vectors):
        phi = vec[:, alpha]
        for li, op in enumerate(embedded):
            vec_dens[alpha, li] = float(np.real(phi.conj() @ (op @ phi)))
    return SchmidtEnergyProfile(
        links=tuple(links),
        weights=ev[:n_vectors],
        global_density=global_density,
        vector_densities=vec_dens,
        differences=np.abs(vec_dens - global_density[None, :]),
    )


@dataclass(frozen=True)
class ScalingResult:
    sizes: np.ndarray
    entropies: np.ndarray
    slope: float
    intercept: float
    classification: str


def _entry_entropy(value) -> float:
    if isinstance(value, GibbsState):
        return entropy_from_eh(value)
    if isinstance(value, FitResult):
        xi = value.entanglement_spectrum
        return float(np.sum(np.exp(-xi) * xi))
    return float(value)


def entropy_scaling(entries) -> ScalingResult:
    """Least-squares slope of S versus subsystem size with an area/volume
    classification: area-like below 0.05 log 2 per site, volume-like above
    0.5 log 2 per site."""
    if isinstance(entries, dict):
        items = sorted(entries.items())
    else:
        items = sorted(entries)
    if len(items) < 3:
        raise ValidationError("entropy scaling needs at least 3 subsystem sizes")
    sizes = np.array([float(k) for k, _ in items])
    ents = np.array([_entry_entropy(v) for _, v in items])
    slope, intercept = np.polyfit(sizes, ents, 1)
    if slope <= AREA_SLOPE_NATS:
        label = "area-like"
    elif slope >= VOLUME_SLOPE_NATS:
        label = "volume-like"
    else:
        label = "intermediate"
    return ScalingResult(sizes, ents, float(slope), float(intercept), label)
