"""Linear algebra for gate deduction: RDM assembly, eigen-ordering, Schmidt splits, polar and power maps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import schur

from .paulis import PauliString, local_basis, local_basis_matrices

DEGENERACY_TOL = 1e-9
PRODUCT_TOL = 1e-8
BRANCH_TOL = 1e-12


class BranchCutError(ValueError):
    """A unitary eigenphase sits on the principal-power branch cut at pi."""


@dataclass(frozen=True, eq=False)
class SchmidtData:
    coefficients: np.ndarray
    left: np.ndarray  # columns: states on the gate qubits
    right: np.ndarray  # columns: states on the probe qubit
    is_product: bool


@dataclass(eq=False)
class SpectralRdm:
    """RDM on ``qubits`` (``qubits[0]`` least significant) with ordered eigenpairs.

    ``matrix`` is the physical (PSD-repaired) RDM and ``eigenvalues`` its
    spectrum. ``raw`` keeps the Hermitian assembly before repair; eigenvectors
    and their ordering (``raw_eigenvalues``) are taken from ``raw`` so that
    they stay a covariant function of the report even when noise makes it
    slightly unphysical. Clipping preserves eigenvectors, so both spectra
    share the same eigenvector columns.
    """

    qubits: tuple[int, ...]
    matrix: np.ndarray
    raw: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    raw_eigenvalues: np.ndarray | None = None
    n_gate: int | None = None
    schmidt: list[SchmidtData] = field(default_factory=list)
    repair: float = 0.0

    @classmethod
    def from_matrix(cls, raw: np.ndarray, qubits: Sequence[int], n_gate: int | None = None) -> "SpectralRdm":
        raw = 0.5 * (np.asarray(raw, dtype=complex) + np.asarray(raw, dtype=complex).conj().T)
        phys = psd_project(raw)
        vals, vecs = deterministic_eig(raw)
        clipped = np.clip(vals, 0.0, None)
        rdm = cls(tuple(int(q) for q in qubits), phys, raw, clipped / clipped.sum(), vecs, vals,
                  repair=float(np.linalg.norm(phys - raw)))
        if n_gate is not None:
            rdm.set_bipartition(n_gate)
        return rdm

    def set_bipartition(self, n_gate: int) -> None:
        m = len(self.qubits)
        if not 1 <= n_gate < m:
            raise ValueError(f"bipartition with {n_gate} gate qubits out of {m}")
        self.n_gate = n_gate
        self.schmidt = [schmidt_split(self.eigenvectors[:, j], n_gate) for j in range(self.eigenvectors.shape[1])]

    @property
    def pairs(self) -> list[tuple[float, np.ndarray]]:
        return [(float(self.eigenvalues[j]), self.eigenvectors[:, j]) for j in range(len(self.eigenvalues))]


def rdm_matrix(expectations: Mapping[str, float], m: int) -> np.ndarray:
    """``2^-m sum_P <P> P`` over the local labels present (identity forced to 1)."""
    mats = local_basis_matrices(m)
    coeffs = np.zeros(4**m)
    for i, lbl in enumerate(local_basis(m)):
        if i == 0:
            coeffs[i] = 1.0
        elif lbl in expectations:
            coeffs[i] = float(expectations[lbl])
        else:
            raise KeyError(f"missing expectation for local Pauli {lbl}")
    return np.tensordot(coeffs, mats, axes=1) / 2**m


def rdm_expectations(rho: np.ndarray) -> dict[str, float]:
    """Local Pauli expectations ``tr(rho P)`` of an RDM."""
    m = int(round(np.log2(rho.shape[0])))
    mats = local_basis_matrices(m)
    vals = np.einsum("kij,ji->k", mats, rho).real
    return dict(zip(local_basis(m), vals.tolist()))


def rdm_from_report(report, qubits: Sequence[int], *, product_assembly: bool = False,
                    n_gate: int | None = None) -> SpectralRdm:
    """Assemble the RDM on ``qubits`` from a tomography report.

    Disconnected subsets are refused unless ``product_assembly`` is set, in
    which case missing cross terms are replaced by products of the
    connected-component expectations.
    """
    qubits = tuple(int(q) for q in qubits)
    m = len(qubits)
    if m > report.k and not product_assembly:
        raise ValueError(f"{m}-qubit RDM requested from a k={report.k} report")
    if not report.graph.is_connected(qubits) and not product_assembly:
        raise ValueError(f"qubits {qubits} are not connected; pass product_assembly=True")
    local = report.local(qubits)
    if product_assembly:
        local = _fill_products(local, qubits, report)
    return SpectralRdm.from_matrix(rdm_matrix(local, m), qubits, n_gate)


def _fill_products(local: dict[str, float], qubits: tuple[int, ...], report) -> dict[str, float]:
    out = dict(local)
    m = len(qubits)
    for lbl in local_basis(m):
        if lbl in out:
            continue
        p = PauliString(lbl)
        val = 1.0
        for q in p.support:
            single = PauliString.from_sparse({0: p.letter(q)}, 1).label
            val *= report.local((qubits[q],))[single]
        out[lbl] = val
    return out


def psd_project(matrix: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues and renormalize to unit trace."""
    h = 0.5 * (np.asarray(matrix, dtype=complex) + np.asarray(matrix, dtype=complex).conj().T)
    vals, vecs = np.linalg.eigh(h)
    if vals.min() >= 0 and abs(vals.sum() - 1) < 1e-14:
        return h
    clipped = np.clip(vals, 0.0, None)
    total = clipped.sum()
    if total <= 1e-15:
        raise ValueError("matrix has no positive spectrum left after clipping")
    return (vecs * (clipped / total)) @ vecs.conj().T


def _fix_phase(v: np.ndarray) -> np.ndarray:
    mags = np.round(np.abs(v), 12)
    i = int(np.argmax(mags))  # first index among ties
    return v * (abs(v[i]) / v[i])


def _canonical_cluster(vecs: np.ndarray) -> np.ndarray:
    """Basis-independent orthonormal basis of span(vecs): project the standard basis and orthonormalize."""
    d, r = vecs.shape
    proj = vecs @ vecs.conj().T
    basis: list[np.ndarray] = []
    for i in range(d):
        w = proj[:, i].copy()
        for b in basis:
            w -= np.vdot(b, w) * b
        nrm = np.linalg.norm(w)
        if nrm > 1e-6:
            basis.append(w / nrm)
        if len(basis) == r:
            break
    if len(basis) < r:
        return vecs
    return np.stack(basis, axis=1)


def deterministic_eig(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues descending and eigenvector columns with canonical phases and tie order."""
    h = 0.5 * (np.asarray(matrix, dtype=complex) + np.asarray(matrix, dtype=complex).conj().T)
    vals, vecs = np.linalg.eigh(h)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    d = len(vals)
    j = 0
    while j < d:
        e = j + 1
        while e < d and vals[e - 1] - vals[e] < DEGENERACY_TOL:
            e += 1
        if e - j > 1:
            block = _canonical_cluster(vecs[:, j:e])
            block = np.stack([_fix_phase(block[:, c]) for c in range(block.shape[1])], axis=1)
            keys = [tuple(np.round(np.abs(block[:, c]), 9)) for c in range(block.shape[1])]
            order = sorted(range(block.shape[1]), key=lambda c: tuple(-x for x in keys[c]))
            vecs[:, j:e] = block[:, order]
        j = e
    for c in range(d):
        vecs[:, c] = _fix_phase(vecs[:, c])
    return vals, vecs


def schmidt_split(vector: np.ndarray, n_gate: int) -> SchmidtData:
    """SVD across (gate qubits = low ``n_gate`` bits | remaining probe bits)."""
    v = np.asarray(vector, dtype=complex).reshape(-1)
    d = v.size
    dg = 2**n_gate
    # index = probe_bits * dg + gate_bits
    mat = v.reshape(d // dg, dg).T
    u, s, vh = np.linalg.svd(mat)
    k = min(mat.shape)
    left = u[:, :k].copy()
    right = vh[:k, :].T.copy()  # v = sum_c s_c right_c (x) left_c
    for c in range(k):
        # move the phase freedom onto the probe side so the gate side is canonical
        i = int(np.argmax(np.round(np.abs(left[:, c]), 12)))
        factor = abs(left[i, c]) / left[i, c]
        left[:, c] *= factor
        right[:, c] *= np.conj(factor)
    is_product = bool(k < 2 or s[1] < PRODUCT_TOL)
    return SchmidtData(s[:k], left, right, is_product)


def nearest_unitary(matrix: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Unitary polar factor (closest unitary in Frobenius norm)."""
    a = np.asarray(matrix, dtype=complex)
    u, s, vh = np.linalg.svd(a)
    if s[-1] <= rcond * max(s[0], 1.0):
        raise np.linalg.LinAlgError("rank-deficient matrix has no unique nearest unitary")
    return u @ vh


def principal_power(u: np.ndarray, f: float, *, nudge: bool = False) -> np.ndarray:
    """``u**f`` with eigenphases taken in (-pi, pi]."""
    u = np.asarray(u, dtype=complex)
    if f == 1:
        return u.copy()
    if f == 0:
        return np.eye(u.shape[0], dtype=complex)
    t, z = schur(u, output="complex")
    lam = np.diag(t)
    phases = np.angle(lam)
    near_cut = np.abs(np.abs(phases) - np.pi) < BRANCH_TOL * 1e3
    if near_cut.any():
        if not nudge:
            raise BranchCutError("eigenphase at pi: principal power is ambiguous (pass nudge=True)")
        phases = np.where(near_cut, np.pi - BRANCH_TOL, phases)
    return (z * np.exp(1j * f * phases)) @ z.conj().T
