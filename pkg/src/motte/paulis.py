"""Exact algebra of multi-qubit Pauli strings.

Labels are written with the highest qubit leftmost, so ``"XZI"`` on three
qubits is X on qubit 2, Z on qubit 1 and identity on qubit 0. Qubit 0 is the
least-significant tensor factor of every matrix built here.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from itertools import combinations, product
from typing import Mapping, Sequence

import numpy as np

from .graph import CouplingGraph

LETTERS = "IXYZ"
MATRIX_CAP = 16

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# (a, b) -> (letter of a*b, power of i)
_PRODUCT = {}
for _a in LETTERS:
    _PRODUCT[("I", _a)] = (_a, 0)
    _PRODUCT[(_a, "I")] = (_a, 0)
    _PRODUCT[(_a, _a)] = ("I", 0)
for _a, _b, _c in (("X", "Y", "Z"), ("Y", "Z", "X"), ("Z", "X", "Y")):
    _PRODUCT[(_a, _b)] = (_c, 1)
    _PRODUCT[(_b, _a)] = (_c, 3)


class Phase(IntEnum):
    """Fourth roots of unity, stored as the power of ``i``."""

    PLUS = 0
    PLUS_I = 1
    MINUS = 2
    MINUS_I = 3

    @property
    def value_complex(self) -> complex:
        return (1, 1j, -1, -1j)[int(self)]


_PHASE_TEXT = {Phase.PLUS: "+", Phase.PLUS_I: "+i", Phase.MINUS: "-", Phase.MINUS_I: "-i"}


@dataclass(frozen=True)
class PauliString:
    """Signed tensor product of single-qubit Paulis on ``len(label)`` qubits."""

    label: str
    phase: Phase = Phase.PLUS

    def __post_init__(self):
        if not self.label or any(c not in LETTERS for c in self.label):
            raise ValueError(f"invalid Pauli label {self.label!r}")
        object.__setattr__(self, "phase", Phase(int(self.phase) % 4))

    @classmethod
    def parse(cls, text: str) -> "PauliString":
        """Parse ``"XZI"``, ``"-XZ"``, ``"+iY"`` or ``"-iZZ"``."""
        t = text.strip()
        phase = Phase.PLUS
        for prefix, ph in (("+i", Phase.PLUS_I), ("-i", Phase.MINUS_I), ("+", Phase.PLUS), ("-", Phase.MINUS)):
            if t.startswith(prefix):
                phase = ph
                t = t[len(prefix):]
                break
        return cls(t, phase)

    @classmethod
    def from_sparse(cls, ops: Mapping[int, str], n_qubits: int, phase: Phase = Phase.PLUS) -> "PauliString":
        letters = ["I"] * n_qubits
        for q, c in ops.items():
            if not 0 <= q < n_qubits:
                raise ValueError(f"qubit {q} outside 0..{n_qubits - 1}")
            letters[n_qubits - 1 - q] = c
        return cls("".join(letters), phase)

    @classmethod
    def identity(cls, n_qubits: int) -> "PauliString":
        return cls("I" * n_qubits)

    def __str__(self) -> str:
        prefix = _PHASE_TEXT[self.phase]
        return ("" if prefix == "+" else prefix) + self.label

    @property
    def n_qubits(self) -> int:
        return len(self.label)

    def letter(self, q: int) -> str:
        return self.label[self.n_qubits - 1 - q]

    @property
    def support(self) -> tuple[int, ...]:
        n = self.n_qubits
        return tuple(sorted(n - 1 - i for i, c in enumerate(self.label) if c != "I"))

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.label)

    @property
    def is_hermitian(self) -> bool:
        return self.phase in (Phase.PLUS, Phase.MINUS)

    def restrict(self, qubits: Sequence[int]) -> "PauliString":
        """Local string on ``qubits`` (``qubits[0]`` least significant)."""
        return PauliString("".join(self.letter(q) for q in reversed(qubits)), self.phase)

    def embed(self, qubits: Sequence[int], n_qubits: int) -> "PauliString":
        """Place this local string onto ``qubits`` of an ``n_qubits`` register."""
        if len(qubits) != self.n_qubits:
            raise ValueError("qubit list does not match label length")
        return PauliString.from_sparse({q: self.letter(i) for i, q in enumerate(qubits)}, n_qubits, self.phase)

    def __mul__(self, other: "PauliString") -> "PauliString":
        return pauli_multiply(self, other)


def pauli_multiply(a: PauliString, b: PauliString) -> PauliString:
    if a.n_qubits != b.n_qubits:
        raise ValueError(f"Pauli strings on different qubit sets ({a.n_qubits} vs {b.n_qubits})")
    power = int(a.phase) + int(b.phase)
    out = []
    for x, y in zip(a.label, b.label):
        c, p = _PRODUCT[(x, y)]
        out.append(c)
        power += p
    return PauliString("".join(out), Phase(power % 4))


def pauli_matrix(p: PauliString, cap: int = MATRIX_CAP) -> np.ndarray:
    if p.n_qubits > cap:
        raise ValueError(f"{p.n_qubits} qubits exceeds the dense matrix cap of {cap}")
    m = np.array([[1.0 + 0j]])
    for c in p.label:
        m = np.kron(m, _SINGLE[c])
    return p.phase.value_complex * m


def label_masks(label: str) -> tuple[int, int]:
    """(x_mask, z_mask) with bit q set where qubit q carries X/Y resp. Z/Y."""
    n = len(label)
    x = z = 0
    for i, c in enumerate(label):
        bit = 1 << (n - 1 - i)
        if c in "XY":
            x |= bit
        if c in "ZY":
            z |= bit
    return x, z


def enumerate_local_paulis(g: CouplingGraph, k: int, scope: Sequence[int] | None = None) -> list[PauliString]:
    """Non-identity strings supported inside some connected set of at most ``k`` qubits.

    Ordered by support size, then support, then letters. ``scope`` restricts
    the vertices considered.
    """
    return [PauliString(lbl) for lbl in local_labels(g, k, scope)]


def local_labels(g: CouplingGraph, k: int, scope: Sequence[int] | None = None) -> list[str]:
    if k < 1:
        raise ValueError("k must be at least 1")
    supports: set[tuple[int, ...]] = set()
    for cset in g.connected_subsets(k, scope):
        for r in range(1, len(cset) + 1):
            supports.update(combinations(cset, r))
    n = g.n_qubits
    out = []
    for sup in sorted(supports, key=lambda s: (len(s), s)):
        for letters in product("XYZ", repeat=len(sup)):
            chars = ["I"] * n
            for q, c in zip(sup, letters):
                chars[n - 1 - q] = c
            out.append("".join(chars))
    return out


def local_basis(m: int) -> list[str]:
    """All ``4**m`` labels on ``m`` qubits; index equals the base-4 code in IXYZ order."""
    return ["".join(t) for t in product(LETTERS, repeat=m)]


@lru_cache(maxsize=8)
def local_basis_matrices(m: int) -> np.ndarray:
    """Stack of the ``4**m`` Pauli matrices on ``m`` qubits, ordered as ``local_basis``."""
    if m > 5:
        raise ValueError("dense local Pauli stack limited to 5 qubits")
    mats = np.stack([pauli_matrix(PauliString(lbl)) for lbl in local_basis(m)])
    mats.setflags(write=False)
    return mats


@lru_cache(maxsize=8)
def local_product_table(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Index and i-power of ``sigma_a @ sigma_b`` for every pair of local basis labels."""
    # letter codes 0..3 = I, X, Y, Z
    let = np.zeros((4, 4), dtype=np.int64)
    pw = np.zeros((4, 4), dtype=np.int64)
    for i, a in enumerate(LETTERS):
        for j, b in enumerate(LETTERS):
            c, p = _PRODUCT[(a, b)]
            let[i, j] = LETTERS.index(c)
            pw[i, j] = p
    codes = np.array(list(product(range(4), repeat=m)), dtype=np.int64).reshape(4**m, m)
    out_letters = let[codes[:, None, :], codes[None, :, :]]
    power = pw[codes[:, None, :], codes[None, :, :]].sum(axis=-1) % 4
    weights = 4 ** np.arange(m - 1, -1, -1, dtype=np.int64)
    index = out_letters @ weights
    index.setflags(write=False)
    power.setflags(write=False)
    return index, power


def label_index(label: str) -> int:
    idx = 0
    for c in label:
        idx = 4 * idx + LETTERS.index(c)
    return idx
