"""Shallow ReLU generators and step generators on the latent interval [0, 1].

A shallow generator is ``g(z) = W_out relu(w_in * z - b)`` with a scalar latent
``z``.  It is continuous and piecewise linear, with a kink wherever a hidden unit
switches on, so most questions about it (sup norm, L2 distances, the exact
density it induces) reduce to sums over its linear pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

BREAKPOINT_TOL = 1e-14


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_latent(z):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(z > 1) or not np.all(np.isfinite(z)):
        raise DomainError("latent value outside [0, 1]")
    return z


@dataclass(frozen=True)
class PiecewiseLinearForm:
    """``g(z) = intercepts[k] + slopes[k] * z`` on ``[boundaries[k], boundaries[k+1]]``."""

    boundaries: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        bnd = _frozen(self.boundaries)
        c = _frozen(np.atleast_2d(self.intercepts))
        v = _frozen(np.atleast_2d(self.slopes))
        if bnd[0] != 0.0 or bnd[-1] != 1.0 or np.any(np.diff(bnd) <= 0):
            raise ValueError("boundaries must increase strictly from 0 to 1")
        if c.shape != v.shape or c.shape[0] != bnd.size - 1:
            raise ValueError("one intercept and one slope row per segment")
        object.__setattr__(self, "boundaries", bnd)
        object.__setattr__(self, "intercepts", c)
        object.__setattr__(self, "slopes", v)

    @property
    def dim(self) -> int:
        return self.intercepts.shape[1]

    def __len__(self) -> int:
        return self.intercepts.shape[0]

    def segment_index(self, z):
        idx = np.searchsorted(self.boundaries, z, side="right") - 1
        return np.clip(idx, 0, len(self) - 1)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        k = self.segment_index(z)
        return self.intercepts[k] + self.slopes[k] * z[..., None]


@dataclass(frozen=True)
class ShallowGenerator:
    """One-hidden-layer ReLU map ``[0, 1] -> R^d`` with ``d1`` hidden units.

    ``out_bias`` is not part of the network class used by the theory and is zero
    unless given explicitly.
    """

    w_in: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    out_bias: np.ndarray | None = field(default=None)

    def __post_init__(self):
        w_in = _frozen(np.reshape(self.w_in, -1))
        b = _frozen(np.reshape(self.b, -1))
        w_out = _frozen(np.atleast_2d(self.w_out))
        if w_in.shape != b.shape or w_out.shape[1] != w_in.size:
            raise ValueError(
                f"inconsistent shapes: w_in {w_in.shape}, b {b.shape}, w_out {w_out.shape}"
            )
        object.__setattr__(self, "w_in", w_in)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "w_out", w_out)
        if self.out_bias is not None:
            bias = _frozen(np.reshape(self.out_bias, -1))
            if bias.size != w_out.shape[0]:
                raise ValueError("out_bias must have one entry per output coordinate")
            object.__setattr__(self, "out_bias", bias)

    @property
    def d(self) -> int:
        return self.w_out.shape[0]

    @property
    def d1(self) -> int:
        return self.w_in.size

    @property
    def bias(self) -> np.ndarray:
        return np.zeros(self.d) if self.out_bias is None else self.out_bias

    @classmethod
    def zeros(cls, d: int, d1: int) -> "ShallowGenerator":
        return cls(np.zeros(d1), np.zeros(d1), np.zeros((d, d1)))

    def forward(self, z):
        """Unchecked evaluation on an array of latents; returns shape ``z.shape + (d,)``."""
        z = np.asarray(z, dtype=float)
        hidden = np.maximum(z[..., None] * self.w_in - self.b, 0.0)
        return hidden @ self.w_out.T + self.bias

    def __call__(self, z):
        return self.forward(_check_latent(z))

    def parameters(self) -> np.ndarray:
        """Flat vector ``(w_in, b, w_out row-major)``; the output bias is excluded."""
        return np.concatenate([self.w_in, self.b, self.w_out.ravel()])

    @classmethod
    def from_parameters(cls, vec, d: int, d1: int, out_bias=None) -> "ShallowGenerator":
        vec = np.asarray(vec, dtype=float)
        if vec.size != d1 * (d + 2):
            raise ValueError(f"expected {d1 * (d + 2)} parameters, got {vec.size}")
        return cls(vec[:d1], vec[d1 : 2 * d1], vec[2 * d1 :].reshape(d, d1), out_bias)

    def max_parameter(self) -> float:
        parts = [self.w_in, self.b, self.w_out.ravel()]
        if self.out_bias is not None:
            parts.append(self.out_bias)
        return float(max(np.max(np.abs(p)) if p.size else 0.0 for p in parts))

    def to_text(self) -> str:
        has_bias = int(self.out_bias is not None)
        values = self.parameters()
        if has_bias:
            values = np.concatenate([values, self.out_bias])
        header = f"shallow-generator d={self.d} d1={self.d1} out_bias={has_bias}\n"
        return header + "".join(f"{v:.17g}\n" for v in values)

    @classmethod
    def from_text(cls, text: str) -> "ShallowGenerator":
        lines = text.split("\n")
        fields = lines[0].split()
        if not fields or fields[0] != "shallow-generator":
            raise ValueError("not a shallow-generator file")
        meta = dict(f.split("=", 1) for f in fields[1:])
        d, d1, has_bias = int(meta["d"]), int(meta["d1"]), int(meta.get("out_bias", 0))
        values = np.array([float(s) for s in " ".join(lines[1:]).split()])
        n_par = d1 * (d + 2)
        if values.size != n_par + has_bias * d:
            raise ValueError(f"expected {n_par + has_bias * d} values, found {values.size}")
        bias = values[n_par:] if has_bias else None
        return cls.from_parameters(values[:n_par], d, d1, bias)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "ShallowGenerator":
        with open(path) as fh:
            return cls.from_text(fh.read())


@dataclass(frozen=True)
class StepGenerator:
    """Piecewise-constant map sending ``(cut_points[t-1], cut_points[t]]`` to ``values[t-1]``.

    The left end ``z = 0`` is sent to the first value.
    """

    cut_points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        cuts = _frozen(np.reshape(self.cut_points, -1))
        vals = np.asarray(self.values, dtype=float)
        vals = _frozen(vals.reshape(-1, 1) if vals.ndim == 1 else vals)
        if cuts.size < 2 or cuts[0] != 0.0 or cuts[-1] != 1.0 or np.any(np.diff(cuts) <= 0):
            raise ValueError("cut points must increase strictly from 0 to 1")
        if vals.shape[0] != cuts.size - 1:
            raise ValueError("need one value per interval")
        object.__setattr__(self, "cut_points", cuts)
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.cut_points)

    def forward(self, z):
        idx = np.searchsorted(self.cut_points, np.asarray(z, dtype=float), side="left")
        return self.values[np.clip(idx, 1, len(self)) - 1]

    def __call__(self, z):
        return self.forward(_check_latent(z))


def breakpoints(g: ShallowGenerator) -> np.ndarray:
    """Sorted kinks ``b_j / w_in_j`` inside the open interval (0, 1)."""
    active = g.w_in != 0
    pts = g.b[active] / g.w_in[active]
    pts = np.sort(pts[(pts > 0) & (pts < 1)])
    if pts.size == 0:
        return pts
    keep = np.concatenate([[True], np.diff(pts) > BREAKPOINT_TOL])
    return pts[keep]


def to_piecewise_linear(g) -> PiecewiseLinearForm:
    """Exact affine pieces of a shallow or step generator."""
    if isinstance(g, PiecewiseLinearForm):
        return g
    if isinstance(g, StepGenerator):
        return PiecewiseLinearForm(g.cut_points, g.values, np.zeros_like(g.values))
    bnd = np.concatenate([[0.0], breakpoints(g), [1.0]])
    mids = 0.5 * (bnd[:-1] + bnd[1:])
    active = (mids[:, None] * g.w_in - g.b) > 0
    slopes = (active * g.w_in) @ g.w_out.T
    intercepts = -(active * g.b) @ g.w_out.T + g.bias
    return PiecewiseLinearForm(bnd, intercepts, slopes)


def sup_norm(g) -> float:
    """Exact ``sup_z max_i |g_i(z)|`` over [0, 1]."""
    if isinstance(g, StepGenerator):
        return float(np.max(np.abs(g.values)))
    if isinstance(g, PiecewiseLinearForm):
        pts = g.boundaries
        vals = np.concatenate(
            [g.intercepts + g.slopes * pts[:-1, None], g.intercepts + g.slopes * pts[1:, None]]
        )
        return float(np.max(np.abs(vals)))
    pts = np.concatenate([[0.0], breakpoints(g), [1.0]])
    return float(np.max(np.abs(g.forward(pts))))


def in_network_class(g: ShallowGenerator, F: float, M: float, d1: int | None = None) -> bool:
    """Membership of ``g`` in the shallow class with sup-norm bound ``F`` and parameter bound ``M``."""
    if d1 is not None and g.d1 != d1:
        return False
    return sup_norm(g) <= F and g.max_parameter() <= M


def step_eval(s: StepGenerator, z):
    return s(z)


def _merged_pieces(f, g):
    ff, gf = to_piecewise_linear(f), to_piecewise_linear(g)
    if ff.dim != gf.dim:
        raise DomainError("generators map into different dimensions")
    bnd = np.union1d(ff.boundaries, gf.boundaries)
    mids = 0.5 * (bnd[:-1] + bnd[1:])
    i, j = ff.segment_index(mids), gf.segment_index(mids)
    c = ff.intercepts[i] - gf.intercepts[j]
    v = ff.slopes[i] - gf.slopes[j]
    return bnd, c, v


def l2_distance_sq(f, g) -> float:
    """Exact ``||f - g||_2^2 = int_0^1 sum_i (f_i - g_i)^2 dz`` for piecewise-linear maps."""
    bnd, c, v = _merged_pieces(f, g)
    # expand around each piece's left end: steep ramps cancel badly in the monomial basis
    h = np.diff(bnd)
    a = c + v * bnd[:-1, None]
    aa = np.sum(a * a, axis=1)
    av = np.sum(a * v, axis=1)
    vv = np.sum(v * v, axis=1)
    pieces = h * (aa + h * (av + h * vv / 3.0))
    return float(math.fsum(pieces))


def sup_distance(f, g) -> float:
    """Exact ``sup_z ||f(z) - g(z)||_inf`` for piecewise-linear maps."""
    bnd, c, v = _merged_pieces(f, g)
    left = c + v * bnd[:-1, None]
    right = c + v * bnd[1:, None]
    return float(max(np.max(np.abs(left)), np.max(np.abs(right))))
