"""Circular (ECFP-style) fingerprints over parsed molecules.

Identifiers
-----------
Radius 0: one identifier per atom, hashed from
``(atomic number, heavy degree, charge, attached H, in ring, aromatic)``.

Iteration r: ``id_r(a) = hash(r, id_{r-1}(a), sorted((bond code, id_{r-1}(n)) for n))``.
The environment of ``(a, r)`` is the set of bonds within ``r`` hops.
An environment already seen at a smaller radius is dropped; among atoms
sharing one environment at the same radius, only the smallest identifier is
kept. Identifiers are folded modulo ``n_bits``.

Hash: 32-bit FNV-1a over the little-endian encoding of the integer tuple.
"""

import logging
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from micon.ai_core.smiles_parser import Molecule, parse_smiles

logger = logging.getLogger(__name__)

DEFAULT_RADIUS = 2
DEFAULT_N_BITS = 2048

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193
_MASK32 = 0xFFFFFFFF


def fnv1a_32(values: tuple[int, ...] | list[int]) -> int:
    """32-bit FNV-1a over signed 32-bit little-endian integers."""
    digest = _FNV_OFFSET
    for byte in struct.pack(f"<{len(values)}i", *(_to_int32(v) for v in values)):
        digest ^= byte
        digest = (digest * _FNV_PRIME) & _MASK32
    return digest


def _to_int32(value: int) -> int:
    value &= _MASK32
    return value - (1 << 32) if value >= (1 << 31) else value


@dataclass(frozen=True)
class Fingerprint:
    """Folded bitset of circular substructure identifiers."""

    n_bits: int
    on_bits: frozenset[int]

    def __post_init__(self) -> None:
        if self.n_bits < 1:
            raise ValueError(f"n_bits must be >= 1, got {self.n_bits}.")
        if any(not 0 <= bit < self.n_bits for bit in self.on_bits):
            raise ValueError(f"Fingerprint bits must lie in [0, {self.n_bits}).")

    @property
    def popcount(self) -> int:
        return len(self.on_bits)

    def to_array(self) -> np.ndarray:
        dense = np.zeros(self.n_bits, dtype=np.float64)
        if self.on_bits:
            dense[sorted(self.on_bits)] = 1.0
        return dense


class FingerprintEngine:
    """Stateless ECFP computation."""

    @staticmethod
    def atom_invariants(mol: Molecule) -> list[tuple[int, ...]]:
        ring = mol.ring_atoms()
        neighbors = mol.neighbors()
        return [
            (
                atom.atomic_number,
                len(neighbors[index]),
                atom.charge,
                atom.hydrogens,
                int(index in ring),
                int(atom.aromatic),
            )
            for index, atom in enumerate(mol.atoms)
        ]

    @staticmethod
    def circular_identifiers(mol: Molecule, radius: int = DEFAULT_RADIUS) -> set[int]:
        """Unfolded identifier set after environment de-duplication."""
        if radius < 0:
            raise ValueError(f"Fingerprint radius must be >= 0, got {radius}.")

        neighbors = mol.neighbors()
        current = [fnv1a_32(inv) for inv in FingerprintEngine.atom_invariants(mol)]
        identifiers = set(current)

        environments: list[frozenset[int]] = [frozenset() for _ in mol.atoms]
        seen: set[frozenset[int]] = {frozenset()}

        for iteration in range(1, radius + 1):
            updated: list[int] = []
            grown: list[frozenset[int]] = []
            for atom, adjacent in enumerate(neighbors):
                pairs = sorted((int(mol.bonds[bond].order), current[other]) for other, bond in adjacent)
                flat = [iteration, current[atom]]
                for code, other_id in pairs:
                    flat.extend((code, other_id))
                updated.append(fnv1a_32(flat))

                env = set(environments[atom])
                for other, bond in adjacent:
                    env.add(bond)
                    env.update(environments[other])
                grown.append(frozenset(env))

            best: dict[frozenset[int], int] = {}
            for atom, env in enumerate(grown):
                if env in seen:
                    continue
                if env not in best or updated[atom] < best[env]:
                    best[env] = updated[atom]
            identifiers.update(best.values())
            seen.update(best)

            current = updated
            environments = grown

        return identifiers

    @staticmethod
    def ecfp(mol: Molecule, radius: int = DEFAULT_RADIUS, n_bits: int = DEFAULT_N_BITS) -> Fingerprint:
        if n_bits < 1:
            raise ValueError(f"n_bits must be >= 1, got {n_bits}.")
        identifiers = FingerprintEngine.circular_identifiers(mol, radius)
        return Fingerprint(n_bits=n_bits, on_bits=frozenset(i % n_bits for i in identifiers))

    @staticmethod
    def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
        """``|a & b| / |a | b|``; two empty fingerprints score 1.0."""
        if a.n_bits != b.n_bits:
            raise ValueError(f"Fingerprint sizes differ: {a.n_bits} vs {b.n_bits}.")
        union = len(a.on_bits | b.on_bits)
        if union == 0:
            return 1.0
        return len(a.on_bits & b.on_bits) / union


@lru_cache(maxsize=4096)
def fingerprint_smiles(smiles: str, radius: int = DEFAULT_RADIUS, n_bits: int = DEFAULT_N_BITS) -> Fingerprint:
    """Parse and fingerprint in one step (memoised per SMILES)."""
    return FingerprintEngine.ecfp(parse_smiles(smiles), radius, n_bits)


def ecfp(mol: Molecule, radius: int = DEFAULT_RADIUS, n_bits: int = DEFAULT_N_BITS) -> Fingerprint:
    return FingerprintEngine.ecfp(mol, radius, n_bits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    return FingerprintEngine.tanimoto(a, b)
