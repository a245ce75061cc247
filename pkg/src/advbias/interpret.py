"""Sensitivity masks: which pixels of a bias-field attack cause the label flip.

The mask M blends the adversarial image into the clean one and is found by
projected gradient descent on

    G(M) = p_y(M * x_adv + (1 - M) * x) + lambda1 * |M|_1 + lambda2 * TV(M)

where p_y is the softmax probability of the true label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biasfield import total_variation
from .classifier import MlpClassifier, predict, prob_and_input_gradient
from .imagekit import GrayImage, load_pgm, save_pgm


@dataclass(eq=False)
class InterpretMap:
    mask: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        if np.any(self.mask < 0) or np.any(self.mask > 1):
            raise ValueError("mask values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def data(self) -> np.ndarray:
        return self.mask.reshape(-1)


def _mask_array(M) -> np.ndarray:
    return M.mask if isinstance(M, InterpretMap) else np.asarray(M, dtype=np.float64)


def blend(M, x_adv: GrayImage, x: GrayImage) -> GrayImage:
    m = _mask_array(M)
    if not (m.shape == x_adv.pixels.shape == x.pixels.shape):
        raise ValueError("mask and image shapes differ")
    out = m * x_adv.pixels + (1.0 - m) * x.pixels
    # exact endpoints regardless of rounding in the convex combination
    out = np.where(m == 1.0, x_adv.pixels, np.where(m == 0.0, x.pixels, out))
    return GrayImage(np.clip(out, 0.0, 1.0))


def tv_subgradient(m: np.ndarray) -> np.ndarray:
    g = np.zeros_like(m)
    sh = np.sign(np.diff(m, axis=1))
    sv = np.sign(np.diff(m, axis=0))
    g[:, 1:] += sh
    g[:, :-1] -= sh
    g[1:, :] += sv
    g[:-1, :] -= sv
    return g


def map_objective(model: MlpClassifier, x: GrayImage, x_adv: GrayImage, y: int, m: np.ndarray,
                  lambda1: float, lambda2: float, with_grad: bool = True):
    """Value of G at mask ``m`` and, optionally, its (sub)gradient."""
    img = blend(m, x_adv, x)
    p, gpix = prob_and_input_gradient(model, img, y)
    G = p + lambda1 * np.abs(m).sum() + lambda2 * total_variation(m)
    if not with_grad:
        return G, None
    grad = gpix * (x_adv.pixels - x.pixels) + lambda1 * np.sign(m) + lambda2 * tv_subgradient(m)
    return G, grad


def optimize_map(model: MlpClassifier, x: GrayImage, x_adv: GrayImage, y: int, iterations: int = 150,
                 lambda1: float = 0.05, lambda2: float = 0.2, step: float = 0.05,
                 max_halvings: int = 5) -> InterpretMap:
    """Projected gradient descent from M = 0.5.

    A step that raises G is retried at half size up to ``max_halvings``
    times; if none is accepted the mask is left unchanged for that iteration.
    """
    if predict(model, x_adv) == y:
        raise ValueError("x_adv does not change the model's prediction for label y")
    m = np.full(x.pixels.shape, 0.5)
    G, grad = map_objective(model, x, x_adv, y, m, lambda1, lambda2)
    trace = [G]
    for _ in range(iterations):
        eta = step
        for _ in range(max_halvings + 1):
            cand = np.clip(m - eta * grad, 0.0, 1.0)
            Gc, _ = map_objective(model, x, x_adv, y, cand, lambda1, lambda2, with_grad=False)
            if Gc <= G:
                m = cand
                G, grad = map_objective(model, x, x_adv, y, m, lambda1, lambda2)
                break
            eta *= 0.5
        trace.append(G)
    params = {"iterations": iterations, "lambda1": lambda1, "lambda2": lambda2, "step": step}
    return InterpretMap(m, trace, params)


def average_maps(maps: list[InterpretMap]) -> InterpretMap:
    if not maps:
        raise ValueError("no maps to average")
    shape = maps[0].mask.shape
    if any(mp.mask.shape != shape for mp in maps):
        raise ValueError("maps have mixed dimensions")
    acc = np.zeros(shape)
    for mp in maps:
        acc += mp.mask
    return InterpretMap(np.clip(acc / len(maps), 0.0, 1.0), [])


def overlay(mp: InterpretMap, image: GrayImage) -> GrayImage:
    """Alpha-composite the mask (white) over an image, alpha = mask."""
    return GrayImage(mp.mask * 1.0 + (1.0 - mp.mask) * image.pixels)


def save_map(mp: InterpretMap, path) -> None:
    save_pgm(GrayImage(mp.mask), path)
    meta = dict(mp.params)
    meta["final_objective"] = mp.objective_trace[-1] if mp.objective_trace else None
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_maps(directory, pattern: str = "map_*.pgm") -> list[InterpretMap]:
    return [InterpretMap(load_pgm(p).pixels) for p in sorted(Path(directory).glob(pattern))]
