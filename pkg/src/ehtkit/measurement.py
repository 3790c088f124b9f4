"""Pauli measurement settings, projective sampling, Z2 data post-processing,
and empirical probability tables.

A setting is a string over {X, Y, Z}, one axis per register site.  The
window-pattern scheme extends each of the 3^w axis combinations of a w-site
window periodically over the whole register, so that the restriction to any
contiguous w-site range enumerates all 3^w combinations exactly once.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .noise import NoiseParams, apply_channel
from .pauli import born_probabilities
from .statekit import DensityMatrix, PureState

DM_SITE_CAP = 12


def validate_axes(axes: str, register_size: int) -> None:
    if len(axes) != register_size:
        raise ValidationError(f"setting {axes!r} does not match register size {register_size}")
    if set(axes) - set("XYZ"):
        raise ValidationError(f"setting {axes!r} has characters outside X/Y/Z")


def window_settings(n_sites: int, window: int = 5) -> list[str]:
    """All 3^window settings, each a periodic extension of one window pattern."""
    if window < 1 or window > n_sites:
        raise ValidationError(f"window {window} out of range for {n_sites} sites")
    out = []
    for pattern in itertools.product("XYZ", repeat=window):
        out.append("".join(pattern[i % window] for i in range(n_sites)))
    return out


@dataclass(frozen=True)
class MeasurementDataset:
    """Shot histograms grouped by measurement setting.

    ``counts[k]`` maps observed bitstrings to multiplicities for setting
    ``settings[k]``.  ``shots`` is the per-setting total; ``uniform_shots``
    is False when settings carry unequal totals (e.g. after splitting an odd
    number of shots).
    """

    register: tuple[int, ...]
    settings: tuple[str, ...]
    counts: tuple[dict[str, int], ...]
    shots: int
    seed: int | None = None
    source: str = "sim"
    uniform_shots: bool = True

    def __post_init__(self):
        m = len(self.register)
        if len(set(self.register)) != m or m == 0:
            raise ValidationError("register must be a non-empty set of distinct sites")
        if len(self.settings) != len(self.counts):
            raise ValidationError("settings and counts length mismatch")
        totals = []
        for axes, hist in zip(self.settings, self.counts):
            validate_axes(axes, m)
            for s, c in hist.items():
                if len(s) != m or set(s) - {"0", "1"}:
                    raise ValidationError(f"bad bitstring {s!r}")
                if c < 1:
                    raise ValidationError(f"count {c} for {s!r} must be >= 1")
            totals.append(sum(hist.values()))
        if self.uniform_shots and any(t != self.shots for t in totals):
            raise ValidationError("per-setting totals differ from the declared shot count")

    @property
    def tag(self) -> tuple[int | None, str]:
        return (self.seed, self.source)

    def total_shots(self, k: int) -> int:
        return sum(self.counts[k].values())


@dataclass(frozen=True)
class ProbabilityTables:
    """Per-setting outcome distributions restricted to a subsystem.

    Settings are kept distinct even when their restricted axes coincide.
    Row k of ``probs`` is the distribution over the 2^m subsystem bitstrings
    for original setting k.
    """

    sites: tuple[int, ...]
    axes: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(self.axes), 2 ** len(self.sites)):
            raise ValidationError(f"probability table shape {p.shape} is inconsistent")
        object.__setattr__(self, "probs", p)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def frequency(self, setting_index: int, bits: str) -> float:
        return float(self.probs[setting_index, int(bits, 2)])

    def to_mapping(self) -> dict[tuple[int, str], float]:
        m = len(self.sites)
        return {
            (k, format(s, f"0{m}b")): float(self.probs[k, s])
            for k in range(len(self.axes))
            for s in range(2**m)
        }


def _source_matrix_or_vector(source, noise: NoiseParams | None):
    if isinstance(source, PureState):
        if noise is None:
            return source.amplitudes, source.n_sites
        if source.n_sites > DM_SITE_CAP:
            raise ValidationError(
                f"noisy sampling needs a density matrix; capped at {DM_SITE_CAP} sites"
            )
        rho = np.outer(source.amplitudes, source.amplitudes.conj())
        return apply_channel(DensityMatrix(source.n_sites, rho), noise).matrix, source.n_sites
    if isinstance(source, DensityMatrix):
        mat = source.matrix if noise is None else apply_channel(source, noise).matrix
        return mat, source.n_sites
    raise ValidationError(f"cannot sample from {type(source).__name__}")


def sample_dataset(
    source,
    settings,
    shots: int,
    noise: NoiseParams | None = None,
    seed: int = 0,
    register: tuple[int, ...] | None = None,
    source_label: str = "sim",
) -> MeasurementDataset:
    """Draw ``shots`` Born-rule bitstrings per setting.

    Each setting uses an independent RNG stream derived from (seed, setting
    index), so results do not depend on evaluation order.
    """
    if shots < 1:
        raise ValidationError("shots must be >= 1")
    state, n = _source_matrix_or_vector(source, noise)
    if register is None:
        register = tuple(range(1, n + 1))
    if len(register) > n:
        raise ValidationError("register larger than the source's site count")
    if len(register) != n:
        raise ValidationError("register must cover the sampled source exactly")
    hists = []
    for k, axes in enumerate(settings):
        validate_axes(axes, n)
        p = born_probabilities(state, axes)
        rng = np.random.default_rng([int(seed), k])
        draw = rng.multinomial(shots, p)
        hists.append(
            {format(s, f"0{n}b"): int(c) for s, c in enumerate(draw) if c > 0}
        )
    return MeasurementDataset(
        register=tuple(register),
        settings=tuple(settings),
        counts=tuple(hists),
        shots=shots,
        seed=seed,
        source=source_label,
    )


def z2_symmetrize_dataset(data: MeasurementDataset) -> MeasurementDataset:
    """Mix each record with its global spin-flip image.

    Conjugation by (x)_j sigma^x_j fixes X-axis outcomes and negates Y and Z
    outcomes, so the image of a bitstring flips the bits at every Y/Z site.
    Counts land on both the original and the image; when every resulting
    count is even the whole dataset is halved so totals are preserved.
    """
    m = len(data.register)
    new_hists = []
    for axes, hist in zip(data.settings, data.counts):
        mask = int("".join("0" if ax == "X" else "1" for ax in axes), 2)
        acc: dict[int, int] = {}
        for s, c in hist.items():
            si = int(s, 2)
            acc[si] = acc.get(si, 0) + c
            acc[si ^ mask] = acc.get(si ^ mask, 0) + c
        new_hists.append(acc)
    all_even = all(c % 2 == 0 for hist in new_hists for c in hist.values())
    divisor = 2 if all_even else 1
    out_hists = tuple(
        {format(s, f"0{m}b"): c // divisor for s, c in sorted(hist.items())}
        for hist in new_hists
    )
    return MeasurementDataset(
        register=data.register,
        settings=data.settings,
        counts=out_hists,
        shots=data.shots * 2 // divisor,
        seed=data.seed,
        source=data.source,
        uniform_shots=data.uniform_shots,
    )


def split_dataset(
    data: MeasurementDataset, seed: int = 0
) -> tuple[MeasurementDataset, MeasurementDataset]:
    """Randomly partition every setting's shots into two halves (without
    replacement), for unbiased purity estimation."""
    m = len(data.register)
    h1, h2 = [], []
    for k, hist in enumerate(data.counts):
        keys = sorted(hist)
        counts = np.array([hist[s] for s in keys], dtype=np.int64)
        total = int(counts.sum())
        rng = np.random.default_rng([int(seed or 0), 0x5B17, k])
        take = rng.multivariate_hypergeometric(counts, total // 2)
        rest = counts - take
        h1.append({s: int(c) for s, c in zip(keys, take) if c > 0})
        h2.append({s: int(c) for s, c in zip(keys, rest) if c > 0})
    kw = dict(register=data.register, settings=data.settings, seed=data.seed)
    return (
        MeasurementDataset(
            counts=tuple(h1), shots=data.shots // 2,
            source=data.source + "/a", uniform_shots=data.uniform_shots, **kw,
        ),
        MeasurementDataset(
            counts=tuple(h2), shots=data.shots - data.shots // 2,
            source=data.source + "/b", uniform_shots=data.uniform_shots, **kw,
        ),
    )


def _restriction(data: MeasurementDataset, subsystem: tuple[int, ...]) -> tuple[list[int], ...]:
    positions = []
    for s in subsystem:
        if s not in data.register:
            raise ValidationError(f"site {s} not in the dataset register")
        positions.append(data.register.index(s))
    return positions


def empirical_probabilities(
    data: MeasurementDataset, subsystem
) -> ProbabilityTables:
    """Marginal relative frequencies on a subsystem, one row per original
    setting (settings with coinciding restrictions are kept separate)."""
    subsystem = tuple(sorted(subsystem))
    if not subsystem:
        raise ValidationError("subsystem must be non-empty")
    positions = _restriction(data, subsystem)
    m = len(subsystem)
    axes_out = []
    probs = np.zeros((len(data.settings), 2**m))
    for k, (axes, hist) in enumerate(zip(data.settings, data.counts)):
        axes_out.append("".join(axes[p] for p in positions))
        total = 0
        for s, c in hist.items():
            sub = int("".join(s[p] for p in positions), 2)
            probs[k, sub] += c
            total += c
        probs[k] /= total
    return ProbabilityTables(sites=subsystem, axes=tuple(axes_out), probs=probs)


def born_tables(source, axes_list, noise: NoiseParams | None = None) -> ProbabilityTables:
    """Exact outcome distributions of a state or density matrix for each
    setting, optionally through the error channel."""
    state, n = _source_matrix_or_vector(source, noise)
    probs = np.zeros((len(axes_list), 2**n))
    for k, axes in enumerate(axes_list):
        validate_axes(axes, n)
        probs[k] = born_probabilities(state, axes)
    return ProbabilityTables(sites=tuple(range(1, n + 1)), axes=tuple(axes_list), probs=probs)


def born_marginal_tables(source, settings, subsystem) -> ProbabilityTables:
    """Exact subsystem marginals of full-register settings: the infinite-shot
    limit of sampling the source and computing empirical probabilities."""
    state, n = _source_matrix_or_vector(source, None)
    subsystem = tuple(sorted(subsystem))
    if any(s < 1 or s > n for s in subsystem) or not subsystem:
        raise ValidationError(f"invalid subsystem {subsystem}")
    positions = [s - 1 for s in subsystem]
    rest = [ax for ax in range(n) if ax not in positions]
    m = len(subsystem)
    axes_out, rows = [], []
    for axes in settings:
        validate_axes(axes, n)
        p_full = born_probabilities(state, axes).reshape((2,) * n)
        marg = np.transpose(p_full, positions + rest).reshape(2**m, -1).sum(axis=1)
        rows.append(marg)
        axes_out.append("".join(axes[p] for p in positions))
    return ProbabilityTables(sites=subsystem, axes=tuple(axes_out), probs=np.array(rows))


def save_dataset(data: MeasurementDataset, path) -> None:
    """JSON-lines: one header line, then one line per setting."""
    with open(path, "w") as fh:
        header = {
            "register": list(data.register),
            "shots": data.shots,
            "seed": data.seed,
            "source": data.source,
        }
        if not data.uniform_shots:
            header["uniform_shots"] = False
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for axes, hist in zip(data.settings, data.counts):
            fh.write(
                json.dumps({"axes": axes, "counts": dict(sorted(hist.items()))}, sort_keys=True)
                + "\n"
            )


def load_dataset(path) -> MeasurementDataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        settings, counts = [], []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            settings.append(rec["axes"])
            counts.append({s: int(c) for s, c in rec["counts"].items()})
    return MeasurementDataset(
        register=tuple(header["register"]),
        settings=tuple(settings),
        counts=tuple(counts),
        shots=int(header["shots"]),
        seed=header.get("seed"),
        source=header.get("source", "sim"),
        uniform_shots=header.get("uniform_shots", True),
    )
