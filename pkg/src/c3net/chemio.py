"""Molecule ingestion (SDF/MOL V2000), element reference data and
per-atom decomposition reports."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DataError, ParseError, UnsupportedElementError

SUPPORTED_ELEMENTS = ("H", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I")
AROMATIC = 4
MIN_INTERATOMIC_DISTANCE = 0.3

# CTfile atom-block charge codes; 4 is "doublet radical" and carries no charge
_CHARGE_CODES = {0: 0, 1: 3, 2: 2, 3: 1, 4: 0, 5: -1, 6: -2, 7: -3}
_CHARGE_TO_CODE = {v: k for k, v in _CHARGE_CODES.items() if k != 4}


@dataclass(frozen=True)
class Atom:
    element: str
    position: tuple[float, float, float]
    formal_charge: int = 0


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: int = 1  # 1, 2, 3 or AROMATIC

    @property
    def key(self) -> tuple[int, int]:
        return (self.i, self.j) if self.i < self.j else (self.j, self.i)

    @property
    def is_aromatic(self) -> bool:
        return self.order == AROMATIC


def _bond_valence(order: int) -> float:
    return 1.5 if order == AROMATIC else float(order)


def expected_valence(element: str, charge: int, table: "ElementTable | None" = None) -> int:
    """Number of bonds an element needs to be saturated at a given formal charge."""
    table = table or default_element_table()
    base = table.default_valence(element)
    if element in ("C", "H"):
        return base - abs(charge)
    return base + charge


@dataclass(frozen=True)
class Molecule:
    """An all-atom solute: explicit hydrogens, 3D coordinates in Angstrom."""

    id: str
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = ()
    conformer_group: str = ""
    properties: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        if not self.conformer_group:
            object.__setattr__(self, "conformer_group", self.id)
        self._validate()

    def _validate(self):
        n = len(self.atoms)
        for idx, atom in enumerate(self.atoms):
            if atom.element not in SUPPORTED_ELEMENTS:
                raise UnsupportedElementError(atom.element, record=self.id)
            if len(atom.position) != 3 or not all(np.isfinite(atom.position)):
                raise DataError(f"{self.id}: atom {idx} has an invalid position {atom.position}")
        seen = set()
        for b in self.bonds:
            if not (0 <= b.i < n and 0 <= b.j < n):
                raise DataError(f"{self.id}: bond ({b.i}, {b.j}) references a missing atom")
            if b.i == b.j:
                raise DataError(f"{self.id}: bond connects atom {b.i} to itself")
            if b.order not in (1, 2, 3, AROMATIC):
                raise DataError(f"{self.id}: unsupported bond order {b.order}")
            if b.key in seen:
                raise DataError(f"{self.id}: duplicate bond {b.key}")
            seen.add(b.key)
        if n > 1:
            pos = self.positions
            d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
            d[np.diag_indices(n)] = np.inf
            i, j = np.unravel_index(np.argmin(d), d.shape)
            if d[i, j] < MIN_INTERATOMIC_DISTANCE:
                raise DataError(
                    f"{self.id}: atoms {min(i, j)} and {max(i, j)} are {d[i, j]:.4f} A apart "
                    f"(minimum {MIN_INTERATOMIC_DISTANCE} A)"
                )
        # explicit hydrogens: a heavy atom short of its valence must carry H
        valence = [0.0] * n
        has_h = [False] * n
        for b in self.bonds:
            valence[b.i] += _bond_valence(b.order)
            valence[b.j] += _bond_valence(b.order)
            has_h[b.i] |= self.atoms[b.j].element == "H"
            has_h[b.j] |= self.atoms[b.i].element == "H"
        for idx, atom in enumerate(self.atoms):
            if atom.element == "H":
                continue
            need = expected_valence(atom.element, atom.formal_charge)
            if valence[idx] < need and not has_h[idx]:
                raise DataError(
                    f"{self.id}: atom {idx} ({atom.element}) has valence {valence[idx]:g} < {need} "
                    "and no attached hydrogen; hydrogens must be explicit"
                )

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.atoms], dtype=np.float64).reshape(-1, 3)

    @property
    def elements(self) -> list[str]:
        return [a.element for a in self.atoms]

    def with_positions(self, positions: np.ndarray) -> "Molecule":
        atoms = tuple(
            Atom(a.element, tuple(float(v) for v in p), a.formal_charge)
            for a, p in zip(self.atoms, np.asarray(positions, dtype=np.float64))
        )
        return replace(self, atoms=atoms, properties=dict(self.properties))

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "Molecule":
        return self.with_positions(self.positions @ np.asarray(rotation).T + np.asarray(translation))

    def permuted(self, perm: Sequence[int]) -> "Molecule":
        """Reorder atoms so that new atom k is old atom ``perm[k]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.n_atoms)):
            raise ContractError(f"not a permutation of {self.n_atoms} atoms: {perm}")
        inverse = {old: new for new, old in enumerate(perm)}
        atoms = tuple(self.atoms[old] for old in perm)
        bonds = tuple(Bond(inverse[b.i], inverse[b.j], b.order) for b in self.bonds)
        return replace(self, atoms=atoms, bonds=bonds, properties=dict(self.properties))


# --------------------------------------------------------------------------
# element table


@dataclass(frozen=True)
class ElementTable:
    radii: dict
    atomic_numbers: dict
    valences: dict
    checksum: str
    source: str = ""

    def __post_init__(self):
        missing = [e for e in SUPPORTED_ELEMENTS if e not in self.radii]
        if missing:
            raise DataError(f"element table lacks {', '.join(missing)}")
        bad = [e for e, r in self.radii.items() if not r > 0]
        if bad:
            raise DataError(f"non-positive van der Waals radius for {', '.join(bad)}")

    def vdw_radius(self, element: str) -> float:
        try:
            return self.radii[element]
        except KeyError:
            raise DataError(f"unknown element {element!r}") from None

    def atomic_number(self, element: str) -> int:
        try:
            return self.atomic_numbers[element]
        except KeyError:
            raise DataError(f"unknown element {element!r}") from None

    def default_valence(self, element: str) -> int:
        try:
            return self.valences[element]
        except KeyError:
            raise DataError(f"unknown element {element!r}") from None

    @classmethod
    def from_tsv_bytes(cls, raw: bytes, source: str = "") -> "ElementTable":
        lines = raw.decode("utf-8").splitlines()
        reader = csv.DictReader(lines, delimiter="\t")
        expected = ["symbol", "vdw_radius_angstrom", "atomic_number", "default_valence"]
        if reader.fieldnames != expected:
            raise DataError(f"element table header must be {expected}, got {reader.fieldnames}")
        radii, numbers, valences = {}, {}, {}
        for row in reader:
            sym = row["symbol"]
            radii[sym] = float(row["vdw_radius_angstrom"])
            numbers[sym] = int(row["atomic_number"])
            valences[sym] = int(row["default_valence"])
        return cls(radii, numbers, valences, hashlib.sha256(raw).hexdigest(), source)

    @classmethod
    def from_tsv(cls, path) -> "ElementTable":
        path = Path(path)
        return cls.from_tsv_bytes(path.read_bytes(), source=str(path))


@lru_cache(maxsize=1)
def default_element_table() -> ElementTable:
    """Bondi radii shipped with the package."""
    raw = resources.files("c3net").joinpath("data/elements.tsv").read_bytes()
    return ElementTable.from_tsv_bytes(raw, source="c3net:data/elements.tsv")


def vdw_radius(element: str, table: ElementTable | None = None) -> float:
    return (table or default_element_table()).vdw_radius(element)


# --------------------------------------------------------------------------
# SDF V2000


def _split_records(lines: list[str]):
    """Yield (first_line_number, record_lines); line numbers are 1-based."""
    start = 0
    for k, line in enumerate(lines):
        if line.startswith("$$$$"):
            yield start + 1, lines[start:k]
            start = k + 1
    tail = lines[start:]
    if any(line.strip() for line in tail):
        yield start + 1, tail


def _int_field(text: str, lineno: int, record, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"malformed {what}: {text!r}", line=lineno, record=record) from None


def _parse_record(rec: list[str], first_line: int, index: int) -> Molecule:
    name = rec[0].strip() if rec else ""
    rid = name or str(index)
    if len(rec) < 4:
        raise ParseError("truncated record: missing counts line", line=first_line + len(rec), record=rid)
    counts = rec[3]
    counts_line = first_line + 3
    if "V3000" in counts[33:39] or "V3000" in counts:
        raise ParseError("V3000 molfiles are not supported; convert to V2000", line=counts_line, record=rid)
    if len(counts) < 6:
        raise ParseError(f"malformed counts line: {counts!r}", line=counts_line, record=rid)
    n_atoms = _int_field(counts[0:3], counts_line, rid, "counts line")
    n_bonds = _int_field(counts[3:6], counts_line, rid, "counts line")
    if n_atoms < 0 or n_bonds < 0:
        raise ParseError(f"malformed counts line: {counts!r}", line=counts_line, record=rid)
    if len(rec) < 4 + n_atoms + n_bonds:
        raise ParseError(
            f"truncated record: expected {n_atoms} atoms and {n_bonds} bonds",
            line=first_line + len(rec), record=rid,
        )

    elements, coords, charges = [], [], []
    for k in range(n_atoms):
        line = rec[4 + k]
        lineno = first_line + 4 + k
        if len(line) < 34:
            raise ParseError(f"atom line too short: {line!r}", line=lineno, record=rid)
        try:
            xyz = (float(line[0:10]), float(line[10:20]), float(line[20:30]))
        except ValueError:
            raise ParseError(f"malformed coordinates: {line[0:30]!r}", line=lineno, record=rid) from None
        symbol = line[31:34].strip()
        if symbol not in SUPPORTED_ELEMENTS:
            raise UnsupportedElementError(symbol, record=rid)
        code = line[36:39].strip()
        code = _int_field(code, lineno, rid, "charge field") if code else 0
        if code not in _CHARGE_CODES:
            raise ParseError(f"invalid charge code {code}", line=lineno, record=rid)
        elements.append(symbol)
        coords.append(xyz)
        charges.append(_CHARGE_CODES[code])

    bonds = []
    for k in range(n_bonds):
        line = rec[4 + n_atoms + k]
        lineno = first_line + 4 + n_atoms + k
        if len(line) < 9:
            raise ParseError(f"bond line too short: {line!r}", line=lineno, record=rid)
        a = _int_field(line[0:3], lineno, rid, "bond atom index")
        b = _int_field(line[3:6], lineno, rid, "bond atom index")
        order = _int_field(line[6:9], lineno, rid, "bond type")
        if order not in (1, 2, 3, AROMATIC):
            raise ParseError(f"unsupported bond type {order}", line=lineno, record=rid)
        if not (1 <= a <= n_atoms and 1 <= b <= n_atoms):
            raise ParseError(f"bond references atom outside 1..{n_atoms}", line=lineno, record=rid)
        bonds.append(Bond(a - 1, b - 1, order))

    # property block; any M  CHG line supersedes atom-block charges
    props = {}
    saw_chg = False
    saw_end = False
    k = 4 + n_atoms + n_bonds
    while k < len(rec):
        line = rec[k]
        lineno = first_line + k
        if line.startswith("M  END"):
            saw_end = True
            k += 1
            break
        if line.startswith("M  CHG"):
            if not saw_chg:
                charges = [0] * n_atoms
                saw_chg = True
            fields = line[6:].split()
            count = _int_field(fields[0] if fields else "", lineno, rid, "M  CHG count")
            if len(fields) < 1 + 2 * count:
                raise ParseError("truncated M  CHG line", line=lineno, record=rid)
            for p in range(count):
                atom = _int_field(fields[1 + 2 * p], lineno, rid, "M  CHG atom")
                value = _int_field(fields[2 + 2 * p], lineno, rid, "M  CHG value")
                if not 1 <= atom <= n_atoms:
                    raise ParseError(f"M  CHG references atom {atom}", line=lineno, record=rid)
                charges[atom - 1] = value
        k += 1
    if not saw_end:
        raise ParseError("truncated record: missing 'M  END'", line=first_line + len(rec), record=rid)
    while k < len(rec):
        line = rec[k]
        if line.startswith(">"):
            tag = line.split("<", 1)[1].split(">", 1)[0] if "<" in line else ""
            values = []
            k += 1
            while k < len(rec) and rec[k].strip():
                values.append(rec[k])
                k += 1
            props[tag] = "\n".join(values)
        k += 1

    atoms = tuple(Atom(e, c, q) for e, c, q in zip(elements, coords, charges))
    group = props.get("conformer_group", "").strip()
    return Molecule(rid, atoms, tuple(bonds), conformer_group=group or rid, properties=props)


def parse_sdf(text) -> list[Molecule]:
    """Parse V2000 SDF text (or a readable stream) into molecules, in file order.

    Either every record parses or an error is raised; no partial list escapes.
    """
    if hasattr(text, "read"):
        text = text.read()
    lines = text.splitlines()
    out = []
    for index, (first_line, rec) in enumerate(_split_records(lines)):
        out.append(_parse_record(rec, first_line, index))
    return out


def read_sdf(path) -> list[Molecule]:
    return parse_sdf(Path(path).read_text())


def write_sdf(molecules: Iterable[Molecule]) -> str:
    """Serialize molecules as V2000 SDF (coordinates at 4 decimals)."""
    buf = io.StringIO()
    for mol in molecules:
        if mol.n_atoms > 999 or len(mol.bonds) > 999:
            raise ContractError(f"{mol.id}: too large for V2000")
        buf.write(f"{mol.id}\n  c3net\n\n")
        buf.write(f"{mol.n_atoms:3d}{len(mol.bonds):3d}  0  0  0  0  0  0  0  0999 V2000\n")
        for a in mol.atoms:
            x, y, z = a.position
            code = _CHARGE_TO_CODE.get(a.formal_charge, 0)
            buf.write(f"{x:10.4f}{y:10.4f}{z:10.4f} {a.element:<3s} 0{code:3d}  0  0  0  0  0  0  0  0  0  0\n")
        for b in mol.bonds:
            buf.write(f"{b.i + 1:3d}{b.j + 1:3d}{b.order:3d}  0\n")
        charged = [(k + 1, a.formal_charge) for k, a in enumerate(mol.atoms) if a.formal_charge]
        for start in range(0, len(charged), 8):
            chunk = charged[start:start + 8]
            buf.write(f"M  CHG{len(chunk):3d}" + "".join(f"{k:4d}{q:4d}" for k, q in chunk) + "\n")
        buf.write("M  END\n")
        if mol.conformer_group != mol.id:
            buf.write(f"> <conformer_group>\n{mol.conformer_group}\n\n")
        buf.write("$$$$\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# decomposition report


def accumulate(values: Iterable[float]) -> float:
    """Left-to-right float64 sum; the single accumulation order used for totals."""
    total = 0.0
    for v in values:
        total += float(v)
    return total


def write_decomposition(molecule: Molecule, contributions: Sequence[float], sink=None,
                        atom_types: Sequence[str] | None = None, extra_rows=()) -> str:
    """Per-atom contribution CSV with a closing TOTAL row.

    ``extra_rows`` are (label, value) pairs appended after TOTAL.
    """
    contributions = [float(c) for c in contributions]
    if len(contributions) != molecule.n_atoms:
        raise ContractError(
            f"{len(contributions)} contributions for {molecule.n_atoms} atoms in {molecule.id}"
        )
    if atom_types is None:
        from .moltype import perceive

        atom_types = perceive(molecule).atom_types if molecule.n_atoms else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["atom_index", "element", "atom_type", "contribution_kcal_per_mol"])
    for k, (atom, code, c) in enumerate(zip(molecule.atoms, atom_types, contributions)):
        w.writerow([k, atom.element, code, repr(c)])
    w.writerow(["TOTAL", "", "", repr(accumulate(contributions))])
    for label, value in extra_rows:
        w.writerow([label, "", "", repr(float(value))])
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text
