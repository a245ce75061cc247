"""Thin-plate-spline coordinate warp, linear in control-point displacements.

Control points sit on a fixed uniform g x g lattice over [-1, 1]^2 (index
``j = row * g + col``).  The TPS interpolant of a displacement channel is
linear in the prescribed displacements, so solving the bordered system once
yields a dense ``influence`` matrix with ``warp(p) = p + influence @ delta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagekit import CoordGrid


def tps_kernel(r2: np.ndarray) -> np.ndarray:
    """U(r) = r^2 ln(r^2), with U(0) = 0."""
    r2 = np.asarray(r2, dtype=np.float64)
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = r2[pos] * np.log(r2[pos])
    return out


def control_lattice(grid_size: int) -> np.ndarray:
    ticks = np.linspace(-1.0, 1.0, grid_size)
    cx, cy = np.meshgrid(ticks, ticks)
    return np.column_stack([cx.ravel(), cy.ravel()])


@dataclass(frozen=True, eq=False)
class TpsBasis:
    grid_size: int
    control_points: np.ndarray  # (g*g, 2)
    influence: np.ndarray  # (num_pixels, g*g)
    ridge: float = 0.0

    @property
    def n_controls(self) -> int:
        return self.control_points.shape[0]


@dataclass(frozen=True, eq=False)
class TpsDisplacement:
    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = np.asarray(self.dx, dtype=np.float64).reshape(-1)
        dy = np.asarray(self.dy, dtype=np.float64).reshape(-1)
        if dx.shape != dy.shape:
            raise ValueError("dx and dy must have equal length")
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise ValueError("displacements must be finite")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @classmethod
    def zeros(cls, n: int) -> TpsDisplacement:
        return cls(np.zeros(n), np.zeros(n))


def build_tps(grid_size: int, coords: CoordGrid, ridge: float = 0.0) -> TpsBasis:
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    ctrl = control_lattice(grid_size)
    n = ctrl.shape[0]

    d2 = ((ctrl[:, None, :] - ctrl[None, :, :]) ** 2).sum(-1)
    P = np.column_stack([np.ones(n), ctrl])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n] = tps_kernel(d2) + ridge * np.eye(n)
    L[:n, n:] = P
    L[n:, :n] = P.T
    # columns of rhs: unit displacement at each control point, zero moment rows
    rhs = np.zeros((n + 3, n))
    rhs[:n, :n] = np.eye(n)
    try:
        coef = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular TPS system (g={grid_size}, ridge={ridge})") from exc

    px = coords.x.reshape(-1)
    py = coords.y.reshape(-1)
    pd2 = (px[:, None] - ctrl[None, :, 0]) ** 2 + (py[:, None] - ctrl[None, :, 1]) ** 2
    design = np.hstack([tps_kernel(pd2), np.ones((px.size, 1)), px[:, None], py[:, None]])
    influence = design @ coef
    influence.setflags(write=False)
    ctrl.setflags(write=False)
    return TpsBasis(grid_size, ctrl, influence, float(ridge))


def apply_tps(basis: TpsBasis, theta: TpsDisplacement, coords: CoordGrid) -> tuple[np.ndarray, np.ndarray]:
    """Warped (x, y) per pixel, each shaped like the coordinate grid."""
    if theta.dx.size != basis.n_controls:
        raise ValueError(f"theta has {theta.dx.size} controls, basis has {basis.n_controls}")
    if basis.influence.shape[0] != coords.x.size:
        raise ValueError("basis was built for a different coordinate grid")
    u = coords.x + (basis.influence @ theta.dx).reshape(coords.shape)
    v = coords.y + (basis.influence @ theta.dy).reshape(coords.shape)
    return u, v
