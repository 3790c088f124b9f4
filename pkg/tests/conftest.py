"""Shared fixtures and independent oracle implementations.

Oracles deliberately avoid the package's operator-assembly code paths: they
build everything from plain np.kron chains and explicit index loops, in the
same global conventions (site 1 = leftmost bit, bit 1 = spin up).
"""

from __future__ import annotations

import numpy as np
import pytest

# single-site operators in the (down, up) basis, defined independently
SX_O = np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex)
SY_O = np.array([[0.0, 0.5j], [-0.5j, 0.0]], dtype=complex)
SZ_O = np.array([[-0.5, 0.0], [0.0, 0.5]], dtype=complex)
ID_O = np.eye(2, dtype=complex)


def kron_chain(factors):
    out = np.array([[1.0]], dtype=complex)
    for f in factors:
        out = np.kron(out, f)
    return out


def one_site_oracle(op, site, n):
    return kron_chain([op if k == site else ID_O for k in range(1, n + 1)])


def two_site_oracle(op_i, i, op_j, j, n):
    return kron_chain(
        [op_i if k == i else (op_j if k == j else ID_O) for k in range(1, n + 1)]
    )


def xxz_dense_oracle(n, j, delta):
    """Independent XXZ Hamiltonian via explicit kron chains."""
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    for k in range(1, n):
        h += j * (
            two_site_oracle(SX_O, k, SX_O, k + 1, n)
            + two_site_oracle(SY_O, k, SY_O, k + 1, n)
            + delta * two_site_oracle(SZ_O, k, SZ_O, k + 1, n)
        )
    return h


def embed_pair_oracle(block4, i, j, n):
    """Embed a two-site block at arbitrary sites via its operator-basis
    expansion sum_{ac,bd} block[2a+b, 2c+d] E_ac^i E_bd^j."""
    dim = 2**n
    out = np.zeros((dim, dim), dtype=complex)
    units = {}
    for a in range(2):
        for c in range(2):
            e = np.zeros((2, 2), dtype=complex)
            e[a, c] = 1.0
            units[(a, c)] = e
    for a in range(2):
        for b in range(2):
            for c in range(2):
                for d in range(2):
                    coeff = block4[2 * a + b, 2 * c + d]
                    if coeff != 0:
                        out += coeff * two_site_oracle(units[(a, c)], i, units[(b, d)], j, n)
    return out


def partial_trace_oracle(amplitudes, sites, n):
    """Reduced density matrix by explicit bitstring loops."""
    sites = sorted(sites)
    rest = [s for s in range(1, n + 1) if s not in sites]
    k = len(sites)
    rho = np.zeros((2**k, 2**k), dtype=complex)

    def build_index(sub_bits, rest_bits):
        bits = [0] * n
        for s, b in zip(sites, sub_bits):
            bits[s - 1] = b
        for s, b in zip(rest, rest_bits):
            bits[s - 1] = b
        idx = 0
        for b in bits:
            idx = (idx << 1) | b
        return idx

    for a in range(2**k):
        a_bits = [(a >> (k - 1 - t)) & 1 for t in range(k)]
        for b in range(2**k):
            b_bits = [(b >> (k - 1 - t)) & 1 for t in range(k)]
            acc = 0.0j
            for r in range(2 ** len(rest)):
                r_bits = [(r >> (len(rest) - 1 - t)) & 1 for t in range(len(rest))]
                acc += amplitudes[build_index(a_bits, r_bits)] * np.conj(
                    amplitudes[build_index(b_bits, r_bits)]
                )
            rho[a, b] = acc
    return rho


def schmidt_values_oracle(amplitudes, sites, n):
    """Schmidt coefficients of a bipartition via SVD of the permuted tensor."""
    sites = sorted(sites)
    rest = [s for s in range(1, n + 1) if s not in sites]
    t = np.asarray(amplitudes).reshape((2,) * n)
    t = np.transpose(t, [s - 1 for s in sites] + [s - 1 for s in rest])
    mat = t.reshape(2 ** len(sites), 2 ** len(rest))
    return np.linalg.svd(mat, compute_uv=False)


def vn_entropy_oracle(amplitudes, sites, n):
    lam = schmidt_values_oracle(amplitudes, sites, n) ** 2
    lam = lam[lam > 1e-14]
    return float(-(lam * np.log(lam)).sum())


def free_fermion_xx_ground_energy(n, j):
    """Open XX chain ground energy from the single-particle cosine band."""
    eps = j * np.cos(np.arange(1, n + 1) * np.pi / (n + 1))
    return float(eps[eps < 0].sum())


def random_density_matrix(rng, n, rank=None):
    from ehtkit.statekit import DensityMatrix

    dim = 2**n
    rank = rank or dim
    a = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    m = a @ a.conj().T
    return DensityMatrix(n, m / np.real(np.trace(m)))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240803)


@pytest.fixture(scope="session")
def xxx10_ground():
    from ehtkit.spinmodel import build_xxz
    from ehtkit.statekit import ground_state

    model = build_xxz(10, 1.0, 1.0)
    energy, state = ground_state(model, sector=0)
    return model, energy, state


@pytest.fixture(scope="session")
def xxx12_ground():
    from ehtkit.spinmodel import build_xxz
    from ehtkit.statekit import ground_state

    model = build_xxz(12, 1.0, 1.0)
    energy, state = ground_state(model, sector=0)
    return model, energy, state
