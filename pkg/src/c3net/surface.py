"""Solvent-accessible-surface point sampling (Shrake-Rupley style).

Each atom receives a Fibonacci lattice on its SAS sphere (vdW radius +
probe). The lattice orientation is taken from a frame attached to the
molecule, so a rigid motion of the molecule moves the point set rigidly;
points falling inside another atom's SAS sphere are discarded.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .chemio import ElementTable, Molecule, default_element_table
from .errors import ContractError, DataError

OCCLUSION_SLACK = 1e-9
_DEGENERACY_RTOL = 1e-9
_MGF_DIRECTION = np.array([0.913, 0.371, 0.167])
_SIGN_PATTERNS = [np.array(s, dtype=np.float64) for s in itertools.product((1.0, -1.0), repeat=3)]

DEFAULT_PROBE = 1.4
DEFAULT_POINTS_PER_ATOM = 64


class EmptySurfaceError(DataError):
    pass


@dataclass(frozen=True)
class SurfacePoints:
    positions: np.ndarray  # (s, 3)
    owner_atom: np.ndarray  # (s,)
    probe_radius: float
    points_per_atom: int
    approx_area: float

    def __len__(self):
        return len(self.owner_atom)

    def subset(self, index) -> "SurfacePoints":
        return SurfacePoints(self.positions[index], self.owner_atom[index], self.probe_radius,
                             self.points_per_atom, self.approx_area)

    def to_xyz(self) -> str:
        lines = [f"{len(self)}", f"probe={self.probe_radius} n_per_atom={self.points_per_atom} "
                                 f"area={self.approx_area:.4f}"]
        for (x, y, z), o in zip(self.positions, self.owner_atom):
            lines.append(f"{x:.6f} {y:.6f} {z:.6f} {int(o)}")
        return "\n".join(lines) + "\n"


def fibonacci_sphere(n: int) -> np.ndarray:
    """n nearly-uniform unit vectors on the sphere (golden-angle spiral)."""
    k = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _pick_direction(vectors, weights, basis):
    """Unit vector in span(basis) toward the heaviest, farthest projected atom."""
    proj = vectors @ basis  # coordinates within the subspace
    norms = np.linalg.norm(proj, axis=1)
    scale = norms.max(initial=0.0)
    if scale <= 1e-12:
        return None
    score = weights * norms
    best = score.max()
    tied = np.flatnonzero(score >= best * (1.0 - _DEGENERACY_RTOL))
    # ties are symmetry images; any choice is equivalent, take a rotation-free rule
    k = tied[np.argmax(norms[tied])]
    d = basis @ proj[k]
    return d / np.linalg.norm(d)


def molecular_frame(positions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """3x3 orthonormal frame (columns) that co-rotates with the molecule.

    Built from the weighted second-moment tensor; degenerate eigenspaces are
    resolved from atom directions and the axis signs jointly from a moment
    generating function. Where the molecule has an exact symmetry the choice
    among symmetry-related frames is arbitrary, so the point set is then
    equivariant only up to that symmetry. The frame may be left-handed.
    """
    positions = np.asarray(positions, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if len(positions) == 0:
        return np.eye(3)
    center = (w[:, None] * positions).sum(axis=0) / w.sum()
    rel = positions - center
    moment = (w[:, None, None] * rel[:, :, None] * rel[:, None, :]).sum(axis=0)
    evals, evecs = np.linalg.eigh(moment)
    tol = _DEGENERACY_RTOL * max(evals[-1], 1e-12)

    groups = [[0]]
    for k in (1, 2):
        if evals[k] - evals[groups[-1][-1]] <= tol:
            groups[-1].append(k)
        else:
            groups.append([k])

    axes = []
    for grp in groups:
        if len(grp) == 1:
            axes.append(evecs[:, grp[0]])
            continue
        basis = evecs[:, grp]
        for _ in range(len(grp) - 1):
            if axes:
                # stay orthogonal to axes already fixed
                a = np.stack(axes, axis=1)
                basis = basis - a @ (a.T @ basis)
                u, s, _ = np.linalg.svd(basis, full_matrices=False)
                basis = u[:, s > 1e-8]
            d = _pick_direction(rel, w, basis)
            if d is None:
                d = basis[:, 0]
            axes.append(d)
            basis = basis - np.outer(d, d @ basis)
            u, s, _ = np.linalg.svd(basis, full_matrices=False)
            basis = u[:, s > 1e-8]
        if basis.shape[1]:
            axes.append(basis[:, 0])
    frame = np.stack(axes[:3], axis=1)

    # fix the eight sign choices jointly: keep the pattern maximising a generic
    # moment-generating function of the weighted cloud; patterns related by a
    # molecular symmetry give the same cloud and hence tie harmlessly
    rho = math.sqrt(float((w * (rel * rel).sum(axis=1)).sum() / w.sum())) or 1.0
    coords = rel @ frame / rho
    best, best_val = _SIGN_PATTERNS[0], -np.inf
    for signs in _SIGN_PATTERNS:
        val = float((w * np.exp((coords * signs) @ _MGF_DIRECTION)).sum())
        if val > best_val:
            best, best_val = signs, val
    frame = frame * best
    return frame


def sas_points(molecule: Molecule, probe: float = DEFAULT_PROBE,
               n_per_atom: int = DEFAULT_POINTS_PER_ATOM,
               table: ElementTable | None = None) -> SurfacePoints:
    return sas_points_from_geometry(molecule.elements, molecule.positions, probe, n_per_atom, table,
                                    label=molecule.id)


def sas_points_from_geometry(elements, positions, probe: float = DEFAULT_PROBE,
                             n_per_atom: int = DEFAULT_POINTS_PER_ATOM,
                             table: ElementTable | None = None, label: str = "geometry") -> SurfacePoints:
    """SAS points for bare atom centres (no bonding or valence checks)."""
    if not probe > 0:
        raise ContractError(f"probe radius must be > 0, got {probe}")
    if int(n_per_atom) != n_per_atom or n_per_atom < 4:
        raise ContractError(f"n_per_atom must be an integer >= 4, got {n_per_atom}")
    n_per_atom = int(n_per_atom)
    table = table or default_element_table()
    elements = list(elements)
    centers = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(centers) != len(elements):
        raise ContractError(f"{len(elements)} elements for {len(centers)} positions")
    if len(centers) == 0:
        raise EmptySurfaceError(f"{label}: molecule has no atoms")
    radii = np.array([table.vdw_radius(e) + probe for e in elements])
    weights = np.array([table.atomic_number(e) for e in elements], dtype=np.float64)

    frame = molecular_frame(centers, weights)
    unit = fibonacci_sphere(n_per_atom) @ frame.T

    kept_pos, kept_owner = [], []
    area = 0.0
    for a in range(len(centers)):
        pts = centers[a] + radii[a] * unit
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
        inside = d < (radii[None, :] - OCCLUSION_SLACK)
        inside[:, a] = False
        keep = ~inside.any(axis=1)
        kept_pos.append(pts[keep])
        kept_owner.append(np.full(int(keep.sum()), a, dtype=np.int64))
        area += 4.0 * np.pi * radii[a] ** 2 * keep.sum() / n_per_atom
    positions = np.concatenate(kept_pos)
    owner = np.concatenate(kept_owner)
    if len(owner) == 0:
        raise EmptySurfaceError(f"{label}: no surface point survives occlusion")
    return SurfacePoints(positions, owner, float(probe), n_per_atom, float(area))
