"""SMILES parsing for the fingerprint engine.

Supported grammar
-----------------
- Organic-subset atoms ``B C N O P S F Cl Br I`` and aromatic ``b c n o p s``.
- Bracket atoms ``[...]`` with element, explicit H count and formal charge.
- Bonds ``- = # :``; branches ``( )``; ring closures ``1``-``9`` and ``%nn``;
  disconnected parts ``.``.

Stereo marks (``/ \\ @``) and isotopes are accepted and ignored with a
warning: radius-2 circular fingerprints do not use them. Aromaticity is taken
from lowercase symbols only; Kekulé rings are not re-perceived.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum

from micon.errors import SmilesParseError

logger = logging.getLogger(__name__)

ELEMENTS: tuple[str, ...] = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
ATOMIC_NUMBER: dict[str, int] = {symbol: z for z, symbol in enumerate(ELEMENTS, start=1)}

_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_ORGANIC_AROMATIC = ("b", "c", "n", "o", "p", "s")
_BRACKET_AROMATIC = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

# Lowest-first allowed valences for implicit-hydrogen filling.
_VALENCES: dict[str, tuple[int, ...]] = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
# Bonds an aromatic organic atom uses in its ring, counting aromatic bonds as 1.
_AROMATIC_VALENCE: dict[str, int] = {"B": 2, "C": 3, "N": 2, "O": 2, "P": 2, "S": 2}


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


_BOND_SYMBOLS: dict[str, BondOrder] = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
}


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    hydrogens: int = 0

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBER[self.element]


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder


@dataclass(frozen=True)
class Molecule:
    """Heavy-atom graph with attached hydrogen counts."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]

    def __post_init__(self) -> None:
        if not self.atoms:
            raise ValueError("A molecule needs at least one atom.")
        seen: set[frozenset[int]] = set()
        for bond in self.bonds:
            if not (0 <= bond.begin < len(self.atoms) and 0 <= bond.end < len(self.atoms)):
                raise ValueError(f"Bond {bond.begin}-{bond.end} references a missing atom.")
            if bond.begin == bond.end:
                raise ValueError(f"Atom {bond.begin} cannot bond to itself.")
            pair = frozenset((bond.begin, bond.end))
            if pair in seen:
                raise ValueError(f"Duplicate bond {bond.begin}-{bond.end}.")
            seen.add(pair)

    def neighbors(self) -> list[list[tuple[int, int]]]:
        """Per atom: ``(neighbor index, bond index)`` pairs."""
        table: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for index, bond in enumerate(self.bonds):
            table[bond.begin].append((bond.end, index))
            table[bond.end].append((bond.begin, index))
        return table

    def ring_atoms(self) -> frozenset[int]:
        """Atoms lying on at least one cycle (endpoints of non-bridge bonds)."""
        adjacency = self.neighbors()
        in_ring: set[int] = set()
        for index, bond in enumerate(self.bonds):
            if _connected_without(adjacency, bond.begin, bond.end, index):
                in_ring.update((bond.begin, bond.end))
        return frozenset(in_ring)

    def permuted(self, order: list[int] | tuple[int, ...]) -> "Molecule":
        """Renumber atoms so that new atom ``i`` is old atom ``order[i]``."""
        if sorted(order) != list(range(len(self.atoms))):
            raise ValueError("Permutation must list every atom index exactly once.")
        position = {old: new for new, old in enumerate(order)}
        return Molecule(
            atoms=tuple(self.atoms[old] for old in order),
            bonds=tuple(Bond(position[b.begin], position[b.end], b.order) for b in self.bonds),
        )


def _connected_without(adjacency: list[list[tuple[int, int]]], start: int, goal: int, skip_bond: int) -> bool:
    stack = [start]
    visited = {start}
    while stack:
        atom = stack.pop()
        for neighbor, bond_index in adjacency[atom]:
            if bond_index == skip_bond or neighbor in visited:
                continue
            if neighbor == goal:
                return True
            visited.add(neighbor)
            stack.append(neighbor)
    return False


# ── Parser ────────────────────────────────────────────────────────────


@dataclass
class _AtomDraft:
    element: str
    aromatic: bool
    charge: int = 0
    explicit_h: int | None = None


class _SmilesReader:
    """Single left-to-right pass building atoms and bonds."""

    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0
        self.atoms: list[_AtomDraft] = []
        self.bonds: list[tuple[int, int, BondOrder | None]] = []
        self.bond_pairs: set[frozenset[int]] = set()
        self.previous: int | None = None
        self.pending: tuple[BondOrder, int] | None = None
        self.branches: list[tuple[int, int]] = []
        self.rings: dict[int, tuple[int, BondOrder | None, int]] = {}
        self.ignored: list[str] = []

    def fail(self, message: str, offset: int | None = None) -> SmilesParseError:
        return SmilesParseError(f"{message} in SMILES '{self.text}'", self.pos if offset is None else offset)

    def read(self) -> Molecule:
        if not self.text or not self.text.strip():
            raise self.fail("Empty SMILES", 0)

        while self.pos < len(self.text):
            char = self.text[self.pos]
            if char == "(":
                if self.previous is None:
                    raise self.fail("Branch opened before any atom")
                if self.pending is not None:
                    raise self.fail("Bond symbol before '('")
                self.branches.append((self.previous, self.pos))
                self.pos += 1
            elif char == ")":
                if not self.branches:
                    raise self.fail("Unbalanced ')'")
                if self.pending is not None:
                    raise self.fail("Dangling bond before ')'")
                if self.previous == self.branches[-1][0]:
                    raise self.fail("Empty branch")
                self.previous, _ = self.branches.pop()
                self.pos += 1
            elif char in _BOND_SYMBOLS:
                if self.pending is not None:
                    raise self.fail("Two consecutive bond symbols")
                if self.previous is None:
                    raise self.fail("Bond symbol before any atom")
                if char in "/\\":
                    self.ignored.append(char)
                self.pending = (_BOND_SYMBOLS[char], self.pos)
                self.pos += 1
            elif char == ".":
                if self.pending is not None:
                    raise self.fail("Bond symbol before '.'")
                self.previous = None
                self.pos += 1
            elif char.isdigit() or char == "%":
                self._read_ring_closure()
            elif char == "[":
                self._read_bracket_atom()
            else:
                self._read_organic_atom()

        if self.branches:
            raise self.fail("Unbalanced '('", len(self.text))
        if self.rings:
            first = min(offset for _, _, offset in self.rings.values())
            raise self.fail("Dangling ring closure", first)
        if self.pending is not None:
            raise self.fail("Dangling bond at end", len(self.text))

        if self.ignored:
            logger.warning(
                "Ignoring stereo/isotope marks %s in SMILES '%s'.",
                "".join(sorted(set(self.ignored))), self.text,
            )
        return self._build()

    # ── token readers ────────────────────────────────────────────────

    def _read_ring_closure(self) -> None:
        start = self.pos
        if self.previous is None:
            raise self.fail("Ring closure before any atom")
        if self.text[self.pos] == "%":
            digits = self.text[self.pos + 1:self.pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.fail("Malformed '%nn' ring closure")
            number = int(digits)
            self.pos += 3
        else:
            number = int(self.text[self.pos])
            self.pos += 1

        bond_order = self.pending[0] if self.pending else None
        self.pending = None
        if number in self.rings:
            partner, opening_order, _ = self.rings.pop(number)
            if opening_order is not None and bond_order is not None and opening_order != bond_order:
                raise self.fail(f"Conflicting bond orders on ring closure {number}", start)
            self._add_bond(partner, self.previous, opening_order or bond_order, start)
        else:
            self.rings[number] = (self.previous, bond_order, start)

    def _read_organic_atom(self) -> None:
        start = self.pos
        for symbol in _ORGANIC:
            if self.text.startswith(symbol, self.pos):
                self.pos += len(symbol)
                self._add_atom(_AtomDraft(element=symbol, aromatic=False), start)
                return
        char = self.text[self.pos]
        if char in _ORGANIC_AROMATIC:
            self.pos += 1
            self._add_atom(_AtomDraft(element=char.upper(), aromatic=True), start)
            return
        raise self.fail(f"Unknown element or symbol '{char}'")

    def _read_bracket_atom(self) -> None:
        start = self.pos
        close = self.text.find("]", start)
        if close < 0:
            raise self.fail("Unclosed '['")
        body = self.text[start + 1:close]
        cursor = 0

        while cursor < len(body) and body[cursor].isdigit():
            cursor += 1
        if cursor:
            self.ignored.append("isotope")

        element = None
        aromatic = False
        for candidate in _BRACKET_AROMATIC:
            if body.startswith(candidate, cursor):
                element, aromatic = candidate.capitalize(), True
                break
        if element is None:
            two = body[cursor:cursor + 2]
            one = body[cursor:cursor + 1]
            if len(two) == 2 and two in ATOMIC_NUMBER:
                element = two
            elif one in ATOMIC_NUMBER:
                element = one
        if element is None:
            raise self.fail(f"Unknown element in bracket atom '[{body}]'", start + 1 + cursor)
        cursor += len(element)

        if cursor < len(body) and body[cursor] == "@":
            self.ignored.append("@")
            while cursor < len(body) and (body[cursor] == "@" or body[cursor].isalnum() and body[cursor] != "H"):
                cursor += 1

        hydrogens = 0
        if cursor < len(body) and body[cursor] == "H":
            cursor += 1
            digits_start = cursor
            while cursor < len(body) and body[cursor].isdigit():
                cursor += 1
            hydrogens = int(body[digits_start:cursor]) if cursor > digits_start else 1

        charge = 0
        if cursor < len(body) and body[cursor] in "+-":
            sign = 1 if body[cursor] == "+" else -1
            cursor += 1
            digits_start = cursor
            while cursor < len(body) and body[cursor].isdigit():
                cursor += 1
            if cursor > digits_start:
                charge = sign * int(body[digits_start:cursor])
            else:
                charge = sign
                while cursor < len(body) and body[cursor] == ("+" if sign > 0 else "-"):
                    charge += sign
                    cursor += 1

        if cursor < len(body) and body[cursor] == ":":
            cursor += 1
            while cursor < len(body) and body[cursor].isdigit():
                cursor += 1

        if cursor != len(body):
            raise self.fail(f"Unexpected '{body[cursor]}' in bracket atom '[{body}]'", start + 1 + cursor)

        self.pos = close + 1
        self._add_atom(_AtomDraft(element=element, aromatic=aromatic, charge=charge, explicit_h=hydrogens), start)

    # ── graph building ───────────────────────────────────────────────

    def _add_atom(self, draft: _AtomDraft, offset: int) -> None:
        index = len(self.atoms)
        self.atoms.append(draft)
        if self.previous is not None:
            order = self.pending[0] if self.pending else None
            self._add_bond(self.previous, index, order, offset)
        self.pending = None
        self.previous = index

    def _add_bond(self, begin: int, end: int, order: BondOrder | None, offset: int) -> None:
        if begin == end:
            raise self.fail("Ring closure bonds an atom to itself", offset)
        pair = frozenset((begin, end))
        if pair in self.bond_pairs:
            raise self.fail(f"Duplicate bond between atoms {begin} and {end}", offset)
        self.bond_pairs.add(pair)
        self.bonds.append((begin, end, order))

    def _build(self) -> Molecule:
        bonds: list[Bond] = []
        for begin, end, order in self.bonds:
            if order is None:
                both_aromatic = self.atoms[begin].aromatic and self.atoms[end].aromatic
                order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
            bonds.append(Bond(begin, end, order))

        used = [0] * len(self.atoms)
        for bond in bonds:
            weight = 1 if bond.order == BondOrder.AROMATIC else int(bond.order)
            used[bond.begin] += weight
            used[bond.end] += weight

        atoms = tuple(
            Atom(
                element=draft.element,
                charge=draft.charge,
                aromatic=draft.aromatic,
                hydrogens=draft.explicit_h if draft.explicit_h is not None else _implicit_hydrogens(draft, used[i]),
            )
            for i, draft in enumerate(self.atoms)
        )
        return Molecule(atoms=atoms, bonds=tuple(bonds))


def _implicit_hydrogens(draft: _AtomDraft, used: int) -> int:
    if draft.aromatic:
        return max(0, _AROMATIC_VALENCE.get(draft.element, 0) - used)
    for valence in _VALENCES.get(draft.element, ()):
        if valence >= used:
            return valence - used
    return 0


def parse_smiles(text: str) -> Molecule:
    """Parse SMILES text into a ``Molecule``.

    Raises:
        SmilesParseError: With the byte offset of the offending token for
            unbalanced parentheses, dangling ring closures, unknown elements
            and empty input.
    """
    return _SmilesReader(text).read()
