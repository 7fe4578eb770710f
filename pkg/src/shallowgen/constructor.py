"""From a discrete mixing measure to a shallow ReLU generator.

The route is measure -> step generator -> ReLU network.  A step generator with
interval lengths equal to the weights pushes ``U[0, 1]`` forward onto the
measure exactly, so its implicit density is the Gaussian mixture itself.  Each
step is then replaced by a trapezoid built from four ReLU units whose ramps
have width ``kappa`` and sit inside the interval, which costs exactly
``(2/3) kappa sum_t ||x_t||^2`` in squared L2 distance.

:func:`theorem1_generator` chains the discretization steps from
:mod:`shallowgen.measures` in front of this and records, per stage, the
Hellinger distance it introduced next to the bound that stage is entitled to.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError
from .gen_density import GenerativeDensity
from .measures import (
    DiscreteMeasure,
    GridSpec,
    _heaviest,
    extend_partition,
    merge_small_atoms,
    mixture_density,
    quantize_to_grid,
)
from .metrics import grid_around, hellinger_quadrature
from .networks import ShallowGenerator, StepGenerator, l2_distance_sq, sup_norm

# Pass/fail slack for stages whose bound is zero (the step stage is an identity,
# so its measured distance is pure floating-point noise).
STAGE_TOLERANCE = 1e-9


def step_from_measure(m: DiscreteMeasure) -> StepGenerator:
    """Step generator whose intervals have lengths ``m.weights``, in atom order."""
    cuts = np.concatenate([[0.0], np.cumsum(m.weights)])
    cuts[-1] = 1.0
    return StepGenerator(cuts, m.atoms)


@dataclass(frozen=True)
class IndicatorSpec:
    """``value * 1_(q_lo, q_hi]`` to be approximated with ramps of width ``kappa``."""

    value: np.ndarray
    q_lo: float
    q_hi: float
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))
        if not 0.0 <= self.q_lo < self.q_hi <= 1.0:
            raise ValueError("need 0 <= q_lo < q_hi <= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if 2 * self.kappa >= self.q_hi - self.q_lo:
            raise InfeasibleError(
                f"ramp width {self.kappa!r} needs 2*kappa < {self.q_hi - self.q_lo!r}", stage="relu"
            )


def _indicator_units(value, q_lo, q_hi, kappa):
    """The four hidden units of one trapezoid: ``(w_in, b, w_out)``."""
    knots = np.array([q_lo, q_lo + kappa, q_hi - kappa, q_hi])
    w_in = np.full(4, 1.0 / kappa)
    b = knots / kappa
    w_out = np.outer(value, [1.0, -1.0, -1.0, 1.0])
    return w_in, b, w_out


def relu_indicator(spec: IndicatorSpec) -> ShallowGenerator:
    """Four-unit network equal to ``value`` on ``[q_lo + kappa, q_hi - kappa]`` and 0 off ``[q_lo, q_hi]``."""
    return ShallowGenerator(*_indicator_units(spec.value, spec.q_lo, spec.q_hi, spec.kappa))


def _check_kappa(s: StepGenerator, kappa: float):
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    shortest = float(s.lengths.min())
    if 2 * kappa >= shortest:
        raise InfeasibleError(
            f"ramp width {kappa!r} needs 2*kappa below the shortest interval {shortest!r}",
            stage="relu",
        )


def relu_from_step(s: StepGenerator, kappa: float) -> ShallowGenerator:
    """Sum of one trapezoid per interval: ``4 N`` hidden units for ``N`` intervals."""
    _check_kappa(s, kappa)
    parts = [
        _indicator_units(s.values[t], s.cut_points[t], s.cut_points[t + 1], kappa)
        for t in range(len(s))
    ]
    w_in = np.concatenate([p[0] for p in parts])
    b = np.concatenate([p[1] for p in parts])
    w_out = np.hstack([p[2] for p in parts])
    return ShallowGenerator(w_in, b, w_out)


def l2_step_gap(s: StepGenerator, kappa: float) -> float:
    """Closed form of ``||s - relu_from_step(s, kappa)||_2^2 = (2/3) kappa sum_t ||x_t||^2``."""
    _check_kappa(s, kappa)
    return (2.0 / 3.0) * kappa * math.fsum((s.values**2).ravel())


def brute_force_two_mixture(m_vec, kappa: float = 1e-5) -> GenerativeDensity:
    """Eight-unit generator for ``0.5 N(m, I) + 0.5 N(-m, I)``: ``+m`` on the first half, ``-m`` on the second."""
    m_vec = np.atleast_1d(np.asarray(m_vec, dtype=float))
    if not 0 < kappa < 0.25:
        raise InfeasibleError(f"kappa must lie in (0, 0.25), got {kappa!r}", stage="relu")
    step = StepGenerator([0.0, 0.5, 1.0], np.vstack([m_vec, -m_vec]))
    return GenerativeDensity(relu_from_step(step, kappa), 1.0)


@dataclass(frozen=True)
class StageRecord:
    """Hellinger distance a stage introduced next to the bound for that stage."""

    stage: str
    atoms: int
    measured: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound + STAGE_TOLERANCE


@dataclass
class PipelineDiagnostics:
    sigma: float
    kappa: float
    a_sigma: float
    stages: list = field(default_factory=list)
    measures: dict = field(default_factory=dict)
    step: StepGenerator | None = None

    @property
    def all_hold(self) -> bool:
        return all(r.holds for r in self.stages)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["stage", "atoms", "measured", "bound"])
        for r in self.stages:
            writer.writerow([r.stage, r.atoms, repr(float(r.measured)), repr(float(r.bound))])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def _mixture(m, sigma):
    return lambda x: mixture_density(m, sigma, x)


def _quadrature_grid(measures, sigma, points):
    lo = np.min([m.atoms.min(axis=0) for m in measures], axis=0)
    hi = np.max([m.atoms.max(axis=0) for m in measures], axis=0)
    d = lo.size
    if points is None:
        points = 4001 if d == 1 else 401
    return grid_around(lo, hi, 8.0 * sigma, points)


def _snap_displacement_bound(before: DiscreteMeasure, grid: GridSpec, sigma: float) -> float:
    """``sqrt(sum_t w_t ||x_t' - x_t||^2 / (8 sigma^2))`` for snapping each atom to the lattice.

    Comparing step generators that share intervals and differ only in their
    values, the L2-to-Hellinger bound gives exactly this.
    """
    kmax = math.floor(grid.half_width / grid.spacing + 1e-9)
    idx = np.clip(np.ceil(before.atoms / grid.spacing - 0.5), -kmax, kmax)
    moved = np.sum((idx * grid.spacing - before.atoms) ** 2, axis=1)
    return math.sqrt(math.fsum(before.weights * moved) / (8.0 * sigma**2))


def merge_displacement_bound(before: DiscreteMeasure, threshold: float, sigma: float) -> float:
    """``sqrt(sum_moved w_t ||x_donor - x_t||^2 / (8 sigma^2))`` for :func:`merge_small_atoms`.

    Every atom lighter than ``threshold`` travels to the heaviest remaining atom,
    so its share of ``[0, 1]`` keeps its length and only changes value.
    """
    w = before.weights
    keep = np.flatnonzero(w >= threshold)
    drop = np.flatnonzero(w < threshold)
    if keep.size == 0:
        raise InfeasibleError(f"no atom has weight >= {threshold!r}", stage="merge")
    if drop.size == 0:
        return 0.0
    donor = before.atoms[_heaviest(before.atoms, w, keep)]
    moved = np.sum((before.atoms[drop] - donor) ** 2, axis=1)
    return math.sqrt(math.fsum(w[drop] * moved) / (8.0 * sigma**2))


def construct_direct(m: DiscreteMeasure, sigma: float, kappa: float, grid_points: int | None = None):
    """Step and ReLU stages only, with a caller-chosen ramp width.

    Returns ``(generator, diagnostics)`` where the diagnostics hold the step and
    relu rows.
    """
    step = step_from_measure(m)
    g = relu_from_step(step, kappa)
    diag = PipelineDiagnostics(sigma=sigma, kappa=kappa, a_sigma=float(np.max(np.abs(m.atoms))))
    diag.measures["input"] = m
    diag.step = step
    _append_network_rows(diag, m, step, g, sigma, grid_points)
    return g, diag


def _append_network_rows(diag, m, step, g, sigma, grid_points):
    grid = _quadrature_grid([m], sigma, grid_points)
    target = _mixture(m, sigma)
    p_step = GenerativeDensity(step, sigma)
    p_net = GenerativeDensity(g, sigma)
    diag.stages.append(StageRecord("step", len(step), hellinger_quadrature(target, p_step, grid), 0.0))
    gap = l2_distance_sq(step, g)
    diag.stages.append(
        StageRecord(
            "relu",
            len(step),
            hellinger_quadrature(target, p_net, grid),
            math.sqrt(gap) / (2.0 * math.sqrt(2.0) * sigma),
        )
    )


def theorem1_generator(
    p0_mixture: DiscreteMeasure,
    sigma: float,
    beta: float,
    d: int,
    tau3: float,
    C4: float = 1.0,
    a_sigma: float | None = None,
    grid_points: int | None = None,
):
    """Run the whole discretization pipeline and return ``(generator, diagnostics)``.

    Stages, with the scales used at each one:

    * quantize: lattice pitch ``sigma^(2 beta + 1)`` on ``[-a_sigma, a_sigma]^d``
    * merge: atoms lighter than ``sigma^(2 beta + 2 d + 2)`` go to the heaviest atom
    * extend: cells of diameter at most ``sigma`` get filler atoms of that same weight
    * step, relu: ramp width ``kappa = sigma^(2 beta + 2 d + 3) / 2``

    ``a_sigma`` defaults to ``C4 * log(1/sigma)^tau3``.  Measured distances are
    Hellinger distances (not squared) between consecutive stages, computed by
    quadrature; the merge and extend bounds are
    ``sqrt(d/2) * (atoms moved) * a_sigma * sigma^(beta + d)``.
    """
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    if p0_mixture.dim != d:
        raise ValueError(f"measure has dimension {p0_mixture.dim}, expected {d}")
    if a_sigma is None:
        a_sigma = C4 * math.log(1.0 / sigma) ** tau3
    spacing = sigma ** (2 * beta + 1)
    small = sigma ** (2 * beta + 2 * d + 2)
    kappa = sigma ** (2 * beta + 2 * d + 3) / 2.0
    grid = GridSpec(spacing, a_sigma, d)
    diag = PipelineDiagnostics(sigma=sigma, kappa=kappa, a_sigma=a_sigma)
    diag.measures["input"] = p0_mixture

    h0 = quantize_to_grid(p0_mixture, grid)
    h1 = merge_small_atoms(h0, small)
    h2 = extend_partition(h1, grid, sigma, small)
    step = step_from_measure(h2)
    g = relu_from_step(step, kappa)
    diag.measures.update(quantized=h0, merged=h1, extended=h2)
    diag.step = step

    qgrid = _quadrature_grid([p0_mixture, h2], sigma, grid_points)
    f_in, f0, f1, f2 = (_mixture(m, sigma) for m in (p0_mixture, h0, h1, h2))
    scale = math.sqrt(d / 2.0) * a_sigma * sigma ** (beta + d)
    diag.stages.append(
        StageRecord(
            "quantize",
            len(h0),
            hellinger_quadrature(f_in, f0, qgrid),
            _snap_displacement_bound(p0_mixture, grid, sigma),
        )
    )
    diag.stages.append(
        StageRecord("merge", len(h1), hellinger_quadrature(f0, f1, qgrid), scale * (len(h0) - len(h1)))
    )
    diag.stages.append(
        StageRecord("extend", len(h2), hellinger_quadrature(f1, f2, qgrid), scale * (len(h2) - len(h1)))
    )
    _append_network_rows(diag, h2, step, g, sigma, grid_points)
    return g, diag


def in_theorem1_sieve(g: ShallowGenerator, diag: PipelineDiagnostics) -> bool:
    """``||g||_inf <= a_sigma`` and every parameter at most ``1 / kappa`` (up to rounding)."""
    slack = 1e-9
    return sup_norm(g) <= diag.a_sigma * (1 + slack) and g.max_parameter() <= (1 + slack) / diag.kappa
