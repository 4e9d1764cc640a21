"""Ring/aromaticity/hybridization perception, atom and bond typing, and
skip-gram training contexts over the typed bond graph."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .chemio import AROMATIC, SUPPORTED_ELEMENTS, Molecule
from .errors import DataError, TypingError

log = logging.getLogger(__name__)

HYBRIDIZATIONS = ("sp", "sp2", "sp3", "aromatic", "none")
BOND_CLASSES = ("single", "double", "triple", "aromatic")
PLANARITY_TOLERANCE = 0.25  # max out-of-plane deviation (A) for an aromatic ring

_MAX_VALENCE = {"H": 1, "C": 4, "N": 3, "O": 2, "F": 1, "P": 5, "S": 6, "Cl": 7, "Br": 7, "I": 7}


def _charge_label(q: int) -> str:
    return "0" if q == 0 else f"{q:+d}"


def atom_code(element: str, hybridization: str, charge: int) -> str:
    return f"{element}.{hybridization}.{_charge_label(charge)}"


def parse_atom_code(code: str) -> tuple[str, str, int]:
    try:
        element, hyb, charge = code.split(".")
        q = int(charge)
    except ValueError:
        raise DataError(f"malformed atom type code {code!r}") from None
    if element not in SUPPORTED_ELEMENTS or hyb not in HYBRIDIZATIONS or q not in (-1, 0, 1):
        raise DataError(f"malformed atom type code {code!r}")
    return element, hyb, q


def bond_code(e1: str, e2: str, order_class: str) -> str:
    a, b = sorted((e1, e2))
    return f"{a}-{b}:{order_class}"


class _Vocabulary:
    """Ordered code set with stable integer ids (lexicographic order)."""

    kind = "code"

    def __init__(self, codes: Iterable[str]):
        codes = sorted(set(codes))
        self.codes = tuple(codes)
        self._ids = {c: k for k, c in enumerate(self.codes)}

    def __len__(self):
        return len(self.codes)

    def __contains__(self, code):
        return code in self._ids

    def __iter__(self):
        return iter(self.codes)

    def __eq__(self, other):
        return type(self) is type(other) and self.codes == other.codes

    def __hash__(self):
        return hash(self.codes)

    def id(self, code: str) -> int:
        try:
            return self._ids[code]
        except KeyError:
            raise DataError(f"{self.kind} {code!r} is not in the vocabulary") from None

    def ids(self, codes: Iterable[str]) -> list[int]:
        return [self.id(c) for c in codes]

    def dump_tsv(self) -> str:
        return "".join(f"{c}\t{k}\n" for k, c in enumerate(self.codes))

    @classmethod
    def load_tsv(cls, text: str):
        rows = [line.split("\t") for line in text.splitlines() if line.strip()]
        try:
            pairs = sorted((int(k), c) for c, k in rows)
        except ValueError:
            raise DataError(f"malformed {cls.kind} vocabulary TSV") from None
        codes = [c for _, c in pairs]
        vocab = cls(codes)
        if [k for k, _ in pairs] != list(range(len(codes))) or list(vocab.codes) != codes:
            raise DataError(f"{cls.kind} vocabulary ids are not the stable lexicographic ids")
        return vocab


class AtomTypeVocabulary(_Vocabulary):
    kind = "atom type"

    def __init__(self, codes: Iterable[str]):
        codes = list(codes)
        for c in codes:
            parse_atom_code(c)
        super().__init__(codes)

    @classmethod
    def from_graphs(cls, graphs: Iterable["TypedGraph"]) -> "AtomTypeVocabulary":
        return cls(itertools.chain.from_iterable(g.atom_types for g in graphs))


class BondTypeVocabulary(_Vocabulary):
    kind = "bond type"

    @classmethod
    def full(cls) -> "BondTypeVocabulary":
        """Every unordered element pair crossed with every bond class."""
        pairs = itertools.combinations_with_replacement(SUPPORTED_ELEMENTS, 2)
        return cls(bond_code(a, b, o) for (a, b), o in itertools.product(pairs, BOND_CLASSES))


@dataclass(frozen=True)
class TypedGraph:
    molecule: Molecule
    atom_types: tuple[str, ...]
    bond_types: tuple[str, ...]
    adjacency: tuple[tuple[int, ...], ...]
    topo_dist2: tuple[tuple[int, ...], ...]
    hybridization: tuple[str, ...]
    aromatic_atoms: tuple[bool, ...]
    rings: tuple[tuple[int, ...], ...]

    @property
    def n_atoms(self) -> int:
        return len(self.atom_types)


def _ordered_cycle(nodes: Sequence[int], adjacency) -> list[int] | None:
    ring = set(nodes)
    start = min(ring)
    order = [start]
    prev, cur = None, start
    while True:
        nxt = [n for n in adjacency[cur] if n in ring and n != prev and n not in order[1:]]
        nxt = [n for n in nxt if n != start or len(order) == len(ring)]
        if not nxt:
            return None
        n = min(nxt)
        if n == start:
            return order
        order.append(n)
        prev, cur = cur, n
        if len(order) > len(ring):
            return None


def _is_planar(positions: np.ndarray) -> bool:
    centered = positions - positions.mean(axis=0)
    normal = np.linalg.svd(centered)[2][-1]
    return float(np.max(np.abs(centered @ normal))) <= PLANARITY_TOLERANCE


def _pi_electrons(atom_idx, mol, adjacency, order_of, in_any_ring):
    atom = mol.atoms[atom_idx]
    doubles = [n for n in adjacency[atom_idx] if order_of[(atom_idx, n)] == 2]
    flagged = [n for n in adjacency[atom_idx] if order_of[(atom_idx, n)] == AROMATIC]
    triples = [n for n in adjacency[atom_idx] if order_of[(atom_idx, n)] == 3]
    if triples or len(doubles) > 1:
        return None
    if flagged:
        return 1
    if doubles:
        # exocyclic double bonds to non-ring atoms (C=O) withdraw the p orbital
        return 1 if in_any_ring[doubles[0]] else 0
    el, q, degree = atom.element, atom.formal_charge, len(adjacency[atom_idx])
    if el == "C":
        return {-1: 2, 1: 0}.get(q)
    if el in ("N", "P") and degree == 3 and q == 0:
        return 2
    if el in ("O", "S") and degree == 2 and q == 0:
        return 2
    if el == "N" and degree == 2 and q == -1:
        return 2
    return None


def perceive(molecule: Molecule) -> TypedGraph:
    """Assign atom and bond type codes to an explicit-hydrogen molecule."""
    mol = molecule
    n = mol.n_atoms
    adjacency = [[] for _ in range(n)]
    order_of = {}
    for b in mol.bonds:
        adjacency[b.i].append(b.j)
        adjacency[b.j].append(b.i)
        order_of[(b.i, b.j)] = order_of[(b.j, b.i)] = b.order
    adjacency = [sorted(a) for a in adjacency]

    for idx, atom in enumerate(mol.atoms):
        low = sum(1 if order_of[(idx, j)] == AROMATIC else order_of[(idx, j)] for j in adjacency[idx])
        q = atom.formal_charge
        limit = _MAX_VALENCE[atom.element] + (-abs(q) if atom.element in ("C", "H") else q)
        if low > limit:
            raise TypingError(
                f"{mol.id}: atom {idx} ({atom.element}, charge {q:+d}) has valence {low} > {limit}",
                atom_index=idx,
            )

    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(b.key for b in mol.bonds)
    rings = []
    for cyc in nx.minimum_cycle_basis(g):
        ordered = _ordered_cycle(cyc, adjacency)
        if ordered is not None:
            rings.append(tuple(ordered))
    rings.sort(key=lambda r: (len(r), r))
    in_any_ring = [False] * n
    for r in rings:
        for a in r:
            in_any_ring[a] = True

    positions = mol.positions
    aromatic_rings = []
    for ring in rings:
        if len(ring) not in (5, 6):
            continue
        if any(mol.atoms[a].element == "H" for a in ring):
            continue
        if not _is_planar(positions[list(ring)]):
            continue
        ring_bonds = [(ring[k], ring[(k + 1) % len(ring)]) for k in range(len(ring))]
        if all(order_of[e] == AROMATIC for e in ring_bonds):
            aromatic_rings.append(ring)
            continue
        electrons = [_pi_electrons(a, mol, adjacency, order_of, in_any_ring) for a in ring]
        if any(e is None for e in electrons):
            continue
        if sum(electrons) % 4 == 2:
            aromatic_rings.append(ring)

    aromatic_atoms = [False] * n
    aromatic_bonds = set()
    for ring in aromatic_rings:
        for k, a in enumerate(ring):
            aromatic_atoms[a] = True
            b = ring[(k + 1) % len(ring)]
            aromatic_bonds.add((min(a, b), max(a, b)))

    hybrid, codes = [], []
    for idx, atom in enumerate(mol.atoms):
        if atom.element == "H":
            h = "none"
        elif aromatic_atoms[idx]:
            h = "aromatic"
        else:
            orders = [order_of[(idx, j)] for j in adjacency[idx]]
            doubles = orders.count(2) + (1 if AROMATIC in orders else 0)
            if 3 in orders or doubles >= 2:
                h = "sp"
            elif doubles == 1:
                h = "sp2"
            else:
                h = "sp3"
        q = atom.formal_charge
        if q not in (-1, 0, 1):
            log.warning("%s: atom %d formal charge %+d clamped to %+d", mol.id, idx, q, max(-1, min(1, q)))
            q = max(-1, min(1, q))
        hybrid.append(h)
        codes.append(atom_code(atom.element, h, q))

    bond_types = []
    for b in mol.bonds:
        if b.key in aromatic_bonds:
            cls = "aromatic"
        elif b.order == AROMATIC:
            log.warning("%s: aromatic-flagged bond %s outside a perceived aromatic ring; typed single",
                        mol.id, b.key)
            cls = "single"
        else:
            cls = BOND_CLASSES[b.order - 1]
        bond_types.append(bond_code(mol.atoms[b.i].element, mol.atoms[b.j].element, cls))

    dist2 = []
    for i in range(n):
        first = set(adjacency[i])
        second = {k for j in adjacency[i] for k in adjacency[j]} - first - {i}
        dist2.append(tuple(sorted(second)))

    return TypedGraph(
        molecule=mol,
        atom_types=tuple(codes),
        bond_types=tuple(bond_types),
        adjacency=tuple(tuple(a) for a in adjacency),
        topo_dist2=tuple(dist2),
        hybridization=tuple(hybrid),
        aromatic_atoms=tuple(aromatic_atoms),
        rings=tuple(rings),
    )


def contexts(graph: TypedGraph) -> list[tuple[str, str]]:
    """(center, context) type pairs for every atom pair at topological distance 1 or 2."""
    pairs = []
    for i in range(graph.n_atoms):
        for j in sorted(set(graph.adjacency[i]) | set(graph.topo_dist2[i])):
            pairs.append((graph.atom_types[i], graph.atom_types[j]))
    return pairs


def context_ids(graphs: Iterable[TypedGraph], vocab: AtomTypeVocabulary) -> list[tuple[int, int]]:
    out = []
    for g in graphs:
        out.extend((vocab.id(a), vocab.id(b)) for a, b in contexts(g))
    return out
