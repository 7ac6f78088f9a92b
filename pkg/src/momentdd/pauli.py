"""Projective n-qubit Pauli algebra and decoupling-group checks.

Paulis are handled up to global phase throughout: ``Y * X`` is ``Z``, not
``-iZ``. Everything downstream (conjugation signs, pulse compilation) is
phase-insensitive.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PauliString",
    "DecouplingGroup",
    "DecouplingReport",
    "SignCharacterTable",
    "pauli_product",
    "sign_character",
    "verify_decoupling_group",
    "character_table",
    "SINGLE_QUBIT_GROUP",
]

_LETTERS = "IXYZ"

# projective single-qubit products; phases dropped
_PRODUCT = {
    ("I", "I"): "I", ("I", "X"): "X", ("I", "Y"): "Y", ("I", "Z"): "Z",
    ("X", "I"): "X", ("X", "X"): "I", ("X", "Y"): "Z", ("X", "Z"): "Y",
    ("Y", "I"): "Y", ("Y", "X"): "Z", ("Y", "Y"): "I", ("Y", "Z"): "X",
    ("Z", "I"): "Z", ("Z", "X"): "Y", ("Z", "Y"): "X", ("Z", "Z"): "I",
}

_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True, order=True)
class PauliString:
    """A Pauli word such as ``"XZIY"``, one letter per qubit.

    Equality and hashing are on the letters only; there is no phase.
    """

    axes: str

    def __post_init__(self):
        if isinstance(self.axes, (list, tuple)):
            object.__setattr__(self, "axes", "".join(self.axes))
        if not isinstance(self.axes, str) or not self.axes:
            raise ValueError("PauliString needs at least one letter")
        bad = set(self.axes) - set(_LETTERS)
        if bad:
            raise ValueError(f"invalid Pauli letters {sorted(bad)} in {self.axes!r}")

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls("I" * n)

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.axes)

    def is_identity(self) -> bool:
        return self.weight == 0

    def __mul__(self, other: "PauliString") -> "PauliString":
        return pauli_product(self, other)

    def __str__(self) -> str:
        return self.axes

    def to_matrix(self) -> np.ndarray:
        """Dense ``2**n x 2**n`` matrix, qubit 0 leftmost in the Kronecker product."""
        return reduce(np.kron, (_MATRICES[c] for c in self.axes))


def _coerce(p) -> PauliString:
    return p if isinstance(p, PauliString) else PauliString(p)


def _check_same_n(a: PauliString, b: PauliString) -> None:
    if a.n != b.n:
        raise ValueError(f"qubit count mismatch: {a.axes!r} ({a.n}) vs {b.axes!r} ({b.n})")


def pauli_product(a, b) -> PauliString:
    """Projective product ``a * b`` (global phase discarded)."""
    a, b = _coerce(a), _coerce(b)
    _check_same_n(a, b)
    return PauliString("".join(_PRODUCT[x, y] for x, y in zip(a.axes, b.axes)))


def sign_character(sigma, g) -> int:
    """Return +1 if ``sigma`` and ``g`` commute and -1 if they anticommute.

    Equivalently the sign in ``g^dagger sigma g = chi * sigma``.
    """
    sigma, g = _coerce(sigma), _coerce(g)
    _check_same_n(sigma, g)
    clashes = sum(1 for s, h in zip(sigma.axes, g.axes) if s != "I" and h != "I" and s != h)
    return -1 if clashes % 2 else 1


@dataclass(frozen=True)
class DecouplingGroup:
    """An explicit list of Pauli strings forming a projective group.

    The first element must be the identity. Closure is checked on
    construction; nothing is generated.
    """

    elements: tuple[PauliString, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        elems = tuple(_coerce(e) for e in self.elements)
        object.__setattr__(self, "elements", elems)
        if not elems:
            raise ValueError("decoupling group is empty")
        n = elems[0].n
        for e in elems:
            if e.n != n:
                raise ValueError(f"group element {e.axes!r} has {e.n} qubits, expected {n}")
        if not elems[0].is_identity():
            raise ValueError("first group element must be the identity")
        if len(set(elems)) != len(elems):
            raise ValueError("duplicate group elements")
        index = {e: i for i, e in enumerate(elems)}
        for a in elems:
            for b in elems:
                if a * b not in index:
                    raise ValueError(f"group not closed: {a}*{b} = {a * b} missing")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_strings(cls, labels: Iterable[str]) -> "DecouplingGroup":
        return cls(tuple(PauliString(s) for s in labels))

    @property
    def n(self) -> int:
        return self.elements[0].n

    @property
    def order(self) -> int:
        return len(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, i: int) -> PauliString:
        return self.elements[i]

    def index(self, p) -> int:
        p = _coerce(p)
        try:
            return self._index[p]
        except KeyError:
            raise ValueError(f"{p} is not an element of the group") from None

    def to_json(self) -> str:
        return json.dumps([e.axes for e in self.elements])

    @classmethod
    def from_json(cls, text: str) -> "DecouplingGroup":
        return cls.from_strings(json.loads(text))


SINGLE_QUBIT_GROUP = DecouplingGroup.from_strings(["I", "X", "Y", "Z"])


@dataclass(frozen=True)
class DecouplingReport:
    axis_sums: dict[str, int]
    system_commutes: dict[str, bool]

    @property
    def axes_cancelled(self) -> dict[str, bool]:
        return {a: s == 0 for a, s in self.axis_sums.items()}

    @property
    def passed(self) -> bool:
        return all(s == 0 for s in self.axis_sums.values()) and all(self.system_commutes.values())


def verify_decoupling_group(group, interaction_axes: Sequence, system_hamiltonian_terms: Sequence = ()) -> DecouplingReport:
    """Check the twirl condition with exact integer character sums.

    Each interaction axis must have a vanishing character sum over the
    group, and every system Hamiltonian term must commute with every
    group element.
    """
    if not isinstance(group, DecouplingGroup):
        group = DecouplingGroup(tuple(group))
    sums = {}
    for a in map(_coerce, interaction_axes):
        sums[a.axes] = sum(sign_character(a, g) for g in group.elements)
    commutes = {}
    for h in map(_coerce, system_hamiltonian_terms):
        commutes[h.axes] = all(sign_character(h, g) == 1 for g in group.elements)
    return DecouplingReport(sums, commutes)


@dataclass(frozen=True)
class SignCharacterTable:
    """``table[a, l]`` is the sign of axis ``a`` under group element ``l``."""

    axes: tuple[PauliString, ...]
    group: DecouplingGroup
    table: np.ndarray

    def __getitem__(self, key):
        return self.table[key]

    def row(self, axis) -> np.ndarray:
        return self.table[self.axes.index(_coerce(axis))]


def _sign_matrix(group: DecouplingGroup, axes: Sequence[PauliString]) -> np.ndarray:
    return np.array([[sign_character(a, g) for g in group.elements] for a in axes], dtype=np.int8)


def character_table(group: DecouplingGroup, axes: Sequence) -> SignCharacterTable:
    """Sign characters for ``axes`` over ``group``; every row must sum to zero."""
    axes = tuple(map(_coerce, axes))
    report = verify_decoupling_group(group, axes)
    if not report.passed:
        failing = [a for a, s in report.axis_sums.items() if s != 0]
        raise ValueError(f"group does not cancel axes {failing} (character sums {report.axis_sums})")
    return SignCharacterTable(axes, group, _sign_matrix(group, axes))
