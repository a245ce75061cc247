"""Warped bivariate polynomial bias field in the log domain.

The field at pixel i is ``sum_{t,l} a[t,l] * u_i**t * v_i**l`` where
``(u_i, v_i)`` are the TPS-warped normalized coordinates and the exponent
pairs satisfy ``t >= D0, l >= D0, t + l <= D``.  Coefficients are stored
flat in canonical order: t ascending, then l ascending.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .imagekit import CoordGrid, GrayImage, LogImage, from_log, save_pgm
from .tps import TpsBasis, TpsDisplacement, apply_tps


@lru_cache(maxsize=None)
def exponent_pairs(D: int, D0: int) -> tuple[tuple[int, int], ...]:
    if D < 0 or D0 < 0:
        raise ValueError("degrees must be non-negative")
    pairs = tuple((t, l) for t in range(D0, D + 1) for l in range(D0, D - t + 1))
    if not pairs:
        raise ValueError(f"empty exponent set for D={D}, D0={D0} (need 2*D0 <= D)")
    return pairs


def param_count(D: int, D0: int) -> int:
    return len(exponent_pairs(D, D0))


def closed_form_count(D: int, D0: int) -> int:
    """The (D-D0+1)(D-D0+2)/2 count quoted in the literature; equals the
    enumerated count only when D0 == 0."""
    return (D - D0 + 1) * (D - D0 + 2) // 2


@dataclass(frozen=True, eq=False)
class BiasFieldParams:
    a: np.ndarray
    D: int
    D0: int
    theta: TpsDisplacement

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        if a.size != param_count(self.D, self.D0):
            raise ValueError(f"expected {param_count(self.D, self.D0)} coefficients, got {a.size}")
        object.__setattr__(self, "a", a)

    @classmethod
    def zeros(cls, D: int, D0: int, n_controls: int) -> BiasFieldParams:
        return cls(np.zeros(param_count(D, D0)), D, D0, TpsDisplacement.zeros(n_controls))

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return exponent_pairs(self.D, self.D0)

    def to_dict(self) -> dict:
        return {
            "D": self.D,
            "D0": self.D0,
            "a": self.a.tolist(),
            "dx": self.theta.dx.tolist(),
            "dy": self.theta.dy.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> BiasFieldParams:
        return cls(np.array(d["a"], dtype=float), int(d["D"]), int(d["D0"]),
                   TpsDisplacement(d["dx"], d["dy"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> BiasFieldParams:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class LogBiasField:
    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def data(self) -> np.ndarray:
        return self.values.reshape(-1)


def _powers(z: np.ndarray, D: int) -> list[np.ndarray]:
    out = [np.ones_like(z)]
    for _ in range(D):
        out.append(out[-1] * z)
    return out


def _check(params: BiasFieldParams, basis: TpsBasis, coords: CoordGrid) -> None:
    if basis.influence.shape[0] != coords.x.size:
        raise ValueError("basis and coordinate grid disagree on pixel count")
    if params.theta.dx.size != basis.n_controls:
        raise ValueError("theta and basis disagree on control count")


def eval_bias(params: BiasFieldParams, basis: TpsBasis, coords: CoordGrid) -> LogBiasField:
    _check(params, basis, coords)
    u, v = apply_tps(basis, params.theta, coords)
    up, vp = _powers(u, params.D), _powers(v, params.D)
    field = np.zeros(coords.shape)
    for coef, (t, l) in zip(params.a, params.pairs):
        field += coef * up[t] * vp[l]
    return LogBiasField(field)


def apply_bias(xhat: LogImage, bhat: LogBiasField) -> GrayImage:
    if xhat.values.shape != bhat.values.shape:
        raise ValueError(f"shape mismatch {xhat.values.shape} vs {bhat.values.shape}")
    return from_log(xhat.values + bhat.values)


def _upstream(upstream, coords: CoordGrid) -> np.ndarray:
    g = np.asarray(upstream, dtype=np.float64)
    if g.size != coords.x.size:
        raise ValueError("upstream gradient has the wrong number of pixels")
    return g.reshape(coords.shape)


def grad_bias_a(upstream, params: BiasFieldParams, basis: TpsBasis, coords: CoordGrid) -> np.ndarray:
    """d/da of sum_i upstream_i * B_i."""
    _check(params, basis, coords)
    g = _upstream(upstream, coords)
    u, v = apply_tps(basis, params.theta, coords)
    up, vp = _powers(u, params.D), _powers(v, params.D)
    return np.array([np.sum(g * up[t] * vp[l]) for t, l in params.pairs])


def grad_bias_theta(upstream, params: BiasFieldParams, basis: TpsBasis,
                    coords: CoordGrid) -> tuple[np.ndarray, np.ndarray]:
    """d/d(dx, dy) of sum_i upstream_i * B_i."""
    _check(params, basis, coords)
    g = _upstream(upstream, coords)
    u, v = apply_tps(basis, params.theta, coords)
    up, vp = _powers(u, params.D), _powers(v, params.D)
    dbdu = np.zeros(coords.shape)
    dbdv = np.zeros(coords.shape)
    for coef, (t, l) in zip(params.a, params.pairs):
        if t > 0:
            dbdu += coef * t * up[t - 1] * vp[l]
        if l > 0:
            dbdv += coef * l * up[t] * vp[l - 1]
    W = basis.influence
    return W.T @ (g * dbdu).reshape(-1), W.T @ (g * dbdv).reshape(-1)


def total_variation(field) -> float:
    """Anisotropic TV: summed absolute horizontal and vertical neighbour differences."""
    f = np.asarray(field.values if isinstance(field, LogBiasField) else field, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if f.size == 0:
        raise ValueError("empty raster")
    return float(np.abs(np.diff(f, axis=1)).sum() + np.abs(np.diff(f, axis=0)).sum())


def save_bias_pgm(field: LogBiasField, path) -> dict:
    """Rescale to [0, 1] for viewing; writes ``<path>.json`` with the original range."""
    lo, hi = float(field.values.min()), float(field.values.max())
    span = hi - lo
    scaled = (field.values - lo) / span if span > 0 else np.zeros_like(field.values)
    save_pgm(GrayImage(np.clip(scaled, 0.0, 1.0)), path)
    meta = {"min": lo, "max": hi}
    Path(str(path) + ".json").write_text(json.dumps(meta))
    return meta
