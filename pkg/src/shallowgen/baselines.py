"""Gaussian kernel density estimation with a Silverman-type bandwidth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from scipy.special import logsumexp

from .errors import DomainError
from .measures import gaussian_log_kernel

_CHUNK_ELEMENTS = 4_000_000


def silverman_bandwidth(data) -> float:
    """``h = s * (n (d + 2) / 4)^(-1 / (d + 4))`` with ``s`` the mean per-coordinate sample std."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    n, d = data.shape
    if n < 2:
        raise DomainError("need at least two points")
    spread = float(np.mean(np.std(data, axis=0, ddof=1)))
    if not spread > 0:
        raise DomainError("data have zero variance")
    return spread * (n * (d + 2) / 4.0) ** (-1.0 / (d + 4))


@dataclass(frozen=True)
class KdeModel:
    """Equal-weight isotropic Gaussian kernels of width ``bandwidth`` on the training points."""

    points: np.ndarray
    bandwidth: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 1:
            raise ValueError("need at least one training point")
        if not self.bandwidth > 0:
            raise DomainError("bandwidth must be positive")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def fit(cls, data) -> "KdeModel":
        return cls(data, silverman_bandwidth(data))

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def log_density(self, x):
        return kde_log_density(self, x)

    def __call__(self, x):
        return kde_density(self, x)


def kde_log_density(model: KdeModel, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    pts = x.reshape(-1, model.d)
    n = model.points.shape[0]
    out = np.empty(pts.shape[0])
    step = max(1, _CHUNK_ELEMENTS // (n * model.d))
    for s in range(0, pts.shape[0], step):
        diff = pts[s : s + step, None, :] - model.points[None, :, :]
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        out[s : s + step] = logsumexp(gaussian_log_kernel(sq, model.bandwidth, model.d), axis=1) - math.log(n)
    return out[0] if single else out


def kde_density(model: KdeModel, x):
    """``(1/n) sum_i phi_h(x - X_i)``."""
    return np.exp(kde_log_density(model, x))
