"""Discrete mixing measures and the discretization steps applied to them.

A :class:`DiscreteMeasure` is a finite probability measure ``sum_t w_t delta_{x_t}``
on ``R^d``.  Convolving it with an isotropic Gaussian gives a location mixture,
which is the object every other module eventually compares against.
"""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .errors import DomainError, InfeasibleError

WEIGHT_SUM_TOL = 1e-12
_CHUNK_ELEMENTS = 4_000_000


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite probability measure with distinct atoms and positive weights."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if atoms.ndim != 2 or atoms.shape[0] != weights.shape[0] or weights.size == 0:
            raise ValueError(
                f"need N >= 1 atoms with one weight each, got atoms {atoms.shape} and {weights.size} weights"
            )
        if not np.all(np.isfinite(atoms)) or not np.all(np.isfinite(weights)):
            raise ValueError("atoms and weights must be finite")
        if np.any(weights <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {math.fsum(weights)!r}, not 1")
        if np.unique(atoms, axis=0).shape[0] != atoms.shape[0]:
            raise ValueError("atoms must be pairwise distinct")
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.weights.shape[0]

    def to_text(self) -> str:
        rows = np.column_stack([self.atoms, self.weights])
        return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in rows)

    @classmethod
    def from_text(cls, text: str) -> "DiscreteMeasure":
        table = np.loadtxt(io.StringIO(text), ndmin=2, comments="#")
        if table.shape[1] < 2:
            raise ValueError("each row needs at least one coordinate and a weight")
        return cls(table[:, :-1], table[:, -1])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "DiscreteMeasure":
        with open(path) as fh:
            return cls.from_text(fh.read())


@dataclass(frozen=True)
class GridSpec:
    """Cubic lattice ``spacing * Z^d`` restricted to ``[-half_width, half_width]^d``."""

    spacing: float
    half_width: float
    dim: int

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if not self.half_width >= self.spacing:
            raise ValueError("half_width must be at least one lattice spacing")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")


def _combine_duplicates(atoms, weights):
    """Sum the weights of identical atoms, keeping first-occurrence order."""
    uniq, first, inverse = np.unique(atoms, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    summed = np.zeros(uniq.shape[0])
    np.add.at(summed, inverse, weights)
    order = np.argsort(first, kind="stable")
    return uniq[order], summed[order]


def quantize_to_grid(measure: DiscreteMeasure, grid: GridSpec) -> DiscreteMeasure:
    """Snap every atom to the nearest lattice point; exact midpoints go toward -inf."""
    if measure.dim != grid.dim:
        raise DomainError(f"measure has dimension {measure.dim}, grid has {grid.dim}")
    hw = grid.half_width
    slack = 1e-12 * max(1.0, hw)
    for atom in measure.atoms:
        if np.any(np.abs(atom) > hw + slack):
            raise DomainError(f"atom {atom.tolist()} lies outside [-{hw}, {hw}]^{grid.dim}")
    kmax = math.floor(hw / grid.spacing + 1e-9)
    idx = np.ceil(measure.atoms / grid.spacing - 0.5)
    idx = np.clip(idx, -kmax, kmax)
    snapped = idx * grid.spacing
    atoms, weights = _combine_duplicates(snapped, measure.weights)
    return DiscreteMeasure(atoms, weights)


def _heaviest(atoms, weights, candidates):
    """Index of the heaviest candidate; ties go to the lexicographically smallest atom."""
    wmax = weights[candidates].max()
    tied = [i for i in candidates if weights[i] == wmax]
    return min(tied, key=lambda i: tuple(atoms[i]))


def merge_small_atoms(measure: DiscreteMeasure, threshold: float) -> DiscreteMeasure:
    """Move the mass of every atom lighter than ``threshold`` onto the heaviest atom.

    The result is sorted by weight, heaviest first; equal weights keep their
    original relative order.
    """
    w = measure.weights
    keep = np.flatnonzero(w >= threshold)
    if keep.size == 0:
        raise InfeasibleError(f"no atom has weight >= {threshold!r}", stage="merge")
    drop = np.flatnonzero(w < threshold)
    if drop.size == 0:
        order = np.argsort(-w, kind="stable")
        return DiscreteMeasure(measure.atoms[order], w[order])
    donor = _heaviest(measure.atoms, w, keep)
    new_w = w.copy()
    new_w[donor] = w[donor] + math.fsum(w[drop])
    kept_w = new_w[keep]
    order = keep[np.argsort(-kept_w, kind="stable")]
    return DiscreteMeasure(measure.atoms[order], new_w[order])


def partition_cells(grid: GridSpec, diameter_cap: float):
    """Centers and side length of the uniform cubic cells used to cover the grid cube.

    The side is ``2 * half_width / K`` with ``K`` the smallest count per axis such
    that a cell's l2 diameter does not exceed ``diameter_cap``.
    """
    d = grid.dim
    target_side = diameter_cap / math.sqrt(d)
    per_axis = max(1, math.ceil(2 * grid.half_width / target_side - 1e-12))
    side = 2 * grid.half_width / per_axis
    centers_1d = -grid.half_width + (np.arange(per_axis) + 0.5) * side
    centers = np.array(list(itertools.product(centers_1d, repeat=d)), dtype=float)
    return centers, side


def extend_partition(
    measure: DiscreteMeasure,
    grid: GridSpec,
    diameter_cap: float,
    filler_weight: float,
) -> DiscreteMeasure:
    """Add a light atom at the center of every cell not already served by an atom.

    A cell counts as served when its center is within ``spacing / 3`` of an existing
    atom.  Each new atom gets ``filler_weight``, taken from the heaviest atom.
    """
    if measure.dim != grid.dim:
        raise DomainError(f"measure has dimension {measure.dim}, grid has {grid.dim}")
    if not diameter_cap > 0 or not filler_weight > 0:
        raise ValueError("diameter_cap and filler_weight must be positive")
    w = measure.weights
    if np.any(w < filler_weight):
        raise InfeasibleError(
            f"existing atom weight {w.min()!r} is below the filler weight {filler_weight!r}",
            stage="extend",
        )
    centers, _ = partition_cells(grid, diameter_cap)
    tree = cKDTree(measure.atoms)
    dist, _ = tree.query(centers, k=1)
    new_centers = centers[dist > grid.spacing / 3]
    if new_centers.shape[0] == 0:
        return measure
    donor = _heaviest(measure.atoms, w, range(len(w)))
    donated = new_centers.shape[0] * filler_weight
    if w[donor] - donated < filler_weight:
        raise InfeasibleError(
            f"heaviest atom weight {w[donor]!r} cannot fund {new_centers.shape[0]} filler atoms "
            f"of weight {filler_weight!r}",
            stage="extend",
        )
    new_w = w.copy()
    new_w[donor] = w[donor] - donated
    atoms = np.vstack([measure.atoms, new_centers])
    weights = np.concatenate([new_w, np.full(new_centers.shape[0], filler_weight)])
    return DiscreteMeasure(atoms, weights)


def gaussian_log_kernel(sq_dist, sigma: float, d: int):
    """``log phi_sigma`` of a displacement with squared norm ``sq_dist`` in ``R^d``."""
    return -0.5 * sq_dist / sigma**2 - 0.5 * d * math.log(2 * math.pi * sigma**2)


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x = x.reshape(-1, d) if single else x
    if x.shape[1] != d:
        raise DomainError(f"points have dimension {x.shape[1]}, expected {d}")
    return x, single


def mixture_log_density(measure: DiscreteMeasure, sigma: float, x):
    """``log sum_t w_t phi_sigma(x - x_t)`` evaluated with log-sum-exp."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    d = measure.dim
    pts, single = _as_points(x, d)
    log_w = np.log(measure.weights)
    out = np.empty(pts.shape[0])
    step = max(1, _CHUNK_ELEMENTS // (len(measure) * d))
    for s in range(0, pts.shape[0], step):
        diff = pts[s : s + step, None, :] - measure.atoms[None, :, :]
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        out[s : s + step] = logsumexp(log_w + gaussian_log_kernel(sq, sigma, d), axis=1)
    return out[0] if single else out


def mixture_density(measure: DiscreteMeasure, sigma: float, x):
    """Density of ``phi_sigma * measure`` at ``x`` (a point or an ``(n, d)`` array)."""
    return np.exp(mixture_log_density(measure, sigma, x))


def sample(measure: DiscreteMeasure, sigma: float, rng: np.random.Generator, n: int):
    """Draw ``n`` points from ``phi_sigma * measure``; ``sigma = 0`` gives bare atoms."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    idx = rng.choice(len(measure), size=n, p=measure.weights)
    pts = measure.atoms[idx].copy()
    if sigma > 0:
        pts += sigma * rng.standard_normal(pts.shape)
    return pts
