"""Single-site error channel (depolarizing + spontaneous decay) and its
calibration from Z-basis magnetization statistics.

The channel applies five Kraus operators per site:

    E0 = sqrt(1 - 3 p1/4) |d><d| + sqrt(1 - 3 p1/4 - p2) |u><u|
    E1..E3 = sqrt(p1/4) sigma_{x,y,z}
    E4 = sqrt(p2) |d><u|

which is trace preserving exactly.  In the Z basis it acts as independent
bit flips: a down site flips up with probability p1/2, an up site flips down
with probability p1/2 + p2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, ValidationError
from .pauli import SIGMA_X, SIGMA_Y, SIGMA_Z


@dataclass(frozen=True)
class NoiseParams:
    p1: float
    p2: float

    def __post_init__(self):
        if self.p1 < 0 or self.p2 < 0:
            raise ValidationError("noise rates must be non-negative")
        if 1.0 - 0.75 * self.p1 - self.p2 < -1e-12:
            raise ValidationError(
                f"(p1, p2) = ({self.p1}, {self.p2}) leaves 1 - 3p1/4 - p2 negative"
            )

    @property
    def is_trivial(self) -> bool:
        return self.p1 == 0.0 and self.p2 == 0.0

    def to_json(self) -> str:
        return json.dumps({"p1": self.p1, "p2": self.p2})

    @staticmethod
    def from_json(text: str) -> "NoiseParams":
        d = json.loads(text)
        return NoiseParams(float(d["p1"]), float(d["p2"]))


def kraus_operators(params: NoiseParams) -> list[np.ndarray]:
    p1, p2 = params.p1, params.p2
    e0 = np.array(
        [[np.sqrt(1.0 - 0.75 * p1), 0.0], [0.0, np.sqrt(max(1.0 - 0.75 * p1 - p2, 0.0))]],
        dtype=complex,
    )
    s = np.sqrt(p1 / 4.0)
    e4 = np.array([[0.0, np.sqrt(p2)], [0.0, 0.0]], dtype=complex)  # |down><up|
    return [e0, s * SIGMA_X, s * SIGMA_Y, s * SIGMA_Z, e4]


def _apply_site_kraus(mat: np.ndarray, ops, site: int, n: int, adjoint: bool) -> np.ndarray:
    da, db = 2 ** (site - 1), 2 ** (n - site)
    t = mat.reshape(da, 2, db, da, 2, db)
    out = np.zeros_like(t)
    for e in ops:
        k = e.conj().T if adjoint else e
        out += np.einsum("pq,aqbcsd,ts->apbctd", k, t, k.conj())
    return out.reshape(mat.shape)


def apply_channel_matrix(mat: np.ndarray, params: NoiseParams) -> np.ndarray:
    """Site-wise channel on a raw 2^n x 2^n matrix."""
    n = int(np.log2(mat.shape[0]))
    if params.is_trivial:
        return mat
    ops = kraus_operators(params)
    out = mat
    for site in range(1, n + 1):
        out = _apply_site_kraus(out, ops, site, n, adjoint=False)
    return out


def apply_adjoint_channel_matrix(mat: np.ndarray, params: NoiseParams) -> np.ndarray:
    """Adjoint (Heisenberg-picture) channel, sum_k E_k^dag X E_k per site."""
    n = int(np.log2(mat.shape[0]))
    if params.is_trivial:
        return mat
    ops = kraus_operators(params)
    out = mat
    for site in range(1, n + 1):
        out = _apply_site_kraus(out, ops, site, n, adjoint=True)
    return out


def apply_channel(rho, params: NoiseParams):
    """Channel on a DensityMatrix; trace and positivity preserved."""
    from .statekit import DensityMatrix  # local import to avoid a cycle

    return DensityMatrix(rho.n_sites, apply_channel_matrix(rho.matrix, params))


def flip_probabilities(params: NoiseParams) -> tuple[float, float]:
    """(P(up->down), P(down->up)) for Z-basis outcomes."""
    return params.p1 / 2.0 + params.p2, params.p1 / 2.0


def magnetization_moments(n_sites: int, ideal_m: int, p1: float, p2: float) -> tuple[float, float]:
    """Mean and variance of the measured total magnetization (N_up - N_down)
    when the ideal state has every Z outcome at magnetization ``ideal_m`` and
    each site passes through the channel independently."""
    n_up = (n_sites + ideal_m) / 2.0
    n_dn = (n_sites - ideal_m) / 2.0
    q_up = p1 / 2.0 + p2
    q_dn = p1 / 2.0
    mean = n_up * (1.0 - 2.0 * q_up) - n_dn * (1.0 - 2.0 * q_dn)
    var = 4.0 * n_up * q_up * (1.0 - q_up) + 4.0 * n_dn * q_dn * (1.0 - q_dn)
    return mean, var


def calibrate_noise(z_data, ideal_magnetization: int) -> NoiseParams:
    """Solve the two magnetization moment-matching equations for (p1, p2).

    ``z_data`` must contain at least one all-Z setting; its shots provide the
    sample mean and variance of N_up - N_down.  Newton iteration in (p1, p2);
    failure to land in the valid parameter region raises CalibrationError.
    """
    n = len(z_data.register)
    if (n + ideal_magnetization) % 2 != 0 or abs(ideal_magnetization) > n:
        raise ValidationError(f"magnetization {ideal_magnetization} invalid for {n} sites")
    if abs(ideal_magnetization) == n:
        raise ValidationError("calibration needs both up and down populations")
    values, weights = [], []
    for axes, hist in zip(z_data.settings, z_data.counts):
        if set(axes) != {"Z"}:
            continue
        for s, c in hist.items():
            values.append(2 * s.count("1") - n)
            weights.append(c)
    if not values:
        raise ValidationError("dataset contains no all-Z settings")
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    mean = float((weights * values).sum() / total)
    var = float((weights * (values - mean) ** 2).sum() / total)

    x = np.array([0.01, 0.01])
    target = np.array([mean, var])
    for _ in range(60):
        model = np.array(magnetization_moments(n, ideal_magnetization, x[0], x[1]))
        resid = model - target
        if np.max(np.abs(resid)) < 1e-12:
            break
        eps = 1e-7
        jac = np.empty((2, 2))
        for col in range(2):
            dx = x.copy()
            dx[col] += eps
            jac[:, col] = (
                np.array(magnetization_moments(n, ideal_magnetization, dx[0], dx[1])) - model
            ) / eps
        try:
            step = np.linalg.solve(jac, -resid)
        except np.linalg.LinAlgError as exc:
            raise CalibrationError("singular Jacobian in moment matching") from exc
        x = x + np.clip(step, -0.25, 0.25)
    model = np.array(magnetization_moments(n, ideal_magnetization, x[0], x[1]))
    residual = float(np.max(np.abs(model - target)))
    if residual > 1e-8 * max(1.0, abs(var)):
        raise CalibrationError("moment matching did not converge", residual=residual)
    p1, p2 = (0.0 if abs(v) < 1e-9 else float(v) for v in x)
    if p1 < 0 or p2 < 0 or 1.0 - 0.75 * p1 - p2 < -1e-9:
        raise CalibrationError(
            f"solution ({x[0]:.4g}, {x[1]:.4g}) outside the valid region", residual=residual
        )
    return NoiseParams(max(p1, 0.0), max(p2, 0.0))
