"""Adversarial bias-field attacks in the log-intensity domain.

``advsbf_attack`` runs sign-gradient ascent on the polynomial coefficients
and TPS displacements of a smooth bias field, penalised by their L1 norms.
The noise baselines (FGSM / BIM / MI-FGSM) perturb the log image pixel-wise
under an infinity-norm budget.

All attacks evaluate ``iterations + 1`` iterates (the clean start included)
and report the one with the largest classification loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import biasfield as bf
from .classifier import MlpClassifier, forward, loss_and_input_gradient
from .imagekit import DEFAULT_FLOOR, CoordGrid, GrayImage, coord_grid, to_log
from .tps import TpsBasis, TpsDisplacement, build_tps


@dataclass
class AttackConfig:
    grid_size: int = 16
    degree: int = 10
    d0: int = 1
    lambda_a: float = 0.01
    lambda_theta: float = 0.01
    eps_a: float = 0.06
    eps_theta: float = 0.06
    iterations: int = 10
    floor: float = DEFAULT_FLOOR
    ridge: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.eps_a <= 0 or self.eps_theta <= 0:
            raise ValueError("step sizes must be positive")
        if self.degree < 0 or self.d0 < 0 or 2 * self.d0 > self.degree:
            raise ValueError(f"need 0 <= 2*d0 <= degree, got degree={self.degree}, d0={self.d0}")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NoiseAttackConfig:
    epsilon: float = 0.1
    iterations: int = 10
    step: float | None = None  # defaults to epsilon / iterations
    momentum: float = 1.0
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step is None:
            self.step = self.epsilon / self.iterations

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class AttackResult:
    adversarial_image: GrayImage
    log_bias: np.ndarray
    loss_trace: list[float]
    success: bool
    final_prediction: int
    label: int
    tv_of_bias: float
    best_iteration: int
    params: bf.BiasFieldParams | None = None
    attack: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def initial_loss(self) -> float:
        return self.loss_trace[0]

    @property
    def best_loss(self) -> float:
        return self.loss_trace[self.best_iteration]


@lru_cache(maxsize=16)
def geometry(width: int, height: int, grid_size: int, ridge: float = 0.0) -> tuple[CoordGrid, TpsBasis]:
    coords = coord_grid(width, height)
    return coords, build_tps(grid_size, coords, ridge)


def _check_input(model: MlpClassifier, image: GrayImage) -> None:
    if image.pixels.size != model.input_dim:
        raise ValueError(f"image has {image.pixels.size} pixels, model expects {model.input_dim}")


def _loss_and_bias_grad(model, xhat: np.ndarray, bhat: np.ndarray, y: int):
    """J at exp(xhat + bhat) and dJ/dbhat; pixels clamped above 1 pass no gradient."""
    v = xhat + bhat
    xa = np.exp(v)
    active = v <= 0.0
    img = np.where(active, xa, 1.0)
    J, gX, out = loss_and_input_gradient(model, img, y)
    return J, gX * img * active, out.label, img


@dataclass
class Objective:
    value: float
    loss: float
    grad_a: np.ndarray
    grad_dx: np.ndarray
    grad_dy: np.ndarray
    log_bias: np.ndarray
    image: np.ndarray
    prediction: int


def l1_sign(x: np.ndarray) -> np.ndarray:
    return np.sign(x)


def smooth_objective(model: MlpClassifier, xhat: np.ndarray, y: int, params: bf.BiasFieldParams,
                     basis: TpsBasis, coords: CoordGrid, lambda_a: float, lambda_theta: float) -> Objective:
    """Penalised loss J - lambda_a |a|_1 - lambda_theta |theta|_1 and its (sub)gradient."""
    bhat = bf.eval_bias(params, basis, coords).values
    J, dJdB, pred, img = _loss_and_bias_grad(model, xhat, bhat, y)
    th = params.theta
    F = J - lambda_a * np.abs(params.a).sum() - lambda_theta * (np.abs(th.dx).sum() + np.abs(th.dy).sum())
    ga = bf.grad_bias_a(dJdB, params, basis, coords) - lambda_a * l1_sign(params.a)
    gdx, gdy = bf.grad_bias_theta(dJdB, params, basis, coords)
    gdx = gdx - lambda_theta * l1_sign(th.dx)
    gdy = gdy - lambda_theta * l1_sign(th.dy)
    return Objective(F, J, ga, gdx, gdy, bhat, img, pred)


def advsbf_attack(model: MlpClassifier, image: GrayImage, y: int, cfg: AttackConfig | None = None) -> AttackResult:
    cfg = cfg or AttackConfig()
    _check_input(model, image)
    coords, basis = geometry(image.width, image.height, cfg.grid_size, cfg.ridge)
    xhat = to_log(image, cfg.floor).values
    n_a = bf.param_count(cfg.degree, cfg.d0)
    # integer step counters keep every iterate an exact multiple of the step size
    ka = np.zeros(n_a, dtype=np.int64)
    kx = np.zeros(basis.n_controls, dtype=np.int64)
    ky = np.zeros(basis.n_controls, dtype=np.int64)

    trace, counts, best = [], [], None
    for it in range(cfg.iterations + 1):
        counts.append((ka.copy(), kx.copy(), ky.copy()))
        params = bf.BiasFieldParams(cfg.eps_a * ka, cfg.degree, cfg.d0,
                                    TpsDisplacement(cfg.eps_theta * kx, cfg.eps_theta * ky))
        obj = smooth_objective(model, xhat, y, params, basis, coords, cfg.lambda_a, cfg.lambda_theta)
        trace.append(obj.loss)
        if best is None or obj.loss > best[0].loss:
            best = (obj, params, it)
        if it == cfg.iterations:
            break
        ka += np.sign(obj.grad_a).astype(np.int64)
        kx += np.sign(obj.grad_dx).astype(np.int64)
        ky += np.sign(obj.grad_dy).astype(np.int64)

    obj, params, it = best
    return AttackResult(
        adversarial_image=GrayImage(obj.image),
        log_bias=obj.log_bias,
        loss_trace=trace,
        success=obj.prediction != y,
        final_prediction=obj.prediction,
        label=y,
        tv_of_bias=bf.total_variation(obj.log_bias),
        best_iteration=it,
        params=params,
        attack="advsbf",
        extra={"objective": obj.value, "step_counts": counts},
    )


def _noise_attack(name: str, model, image: GrayImage, y: int, cfg: NoiseAttackConfig,
                  iterations: int, step: float, momentum: float | None) -> AttackResult:
    _check_input(model, image)
    xhat = to_log(image, cfg.floor).values
    bhat = np.zeros_like(xhat)
    acc = np.zeros_like(xhat)
    trace, best = [], None
    for it in range(iterations + 1):
        J, g, pred, img = _loss_and_bias_grad(model, xhat, bhat, y)
        trace.append(J)
        if best is None or J > best[0]:
            best = (J, bhat.copy(), img, pred, it)
        if it == iterations:
            break
        if momentum is not None:
            norm = np.abs(g).sum()
            acc = momentum * acc + (g / norm if norm > 0 else 0.0)
            g = acc
        bhat = np.clip(bhat + step * np.sign(g), -cfg.epsilon, cfg.epsilon)

    _, bhat, img, pred, it = best
    return AttackResult(
        adversarial_image=GrayImage(img),
        log_bias=bhat,
        loss_trace=trace,
        success=pred != y,
        final_prediction=pred,
        label=y,
        tv_of_bias=bf.total_variation(bhat),
        best_iteration=it,
        attack=name,
    )


def noise_bias_attack_fgsm(model, image, y, cfg: NoiseAttackConfig | None = None) -> AttackResult:
    cfg = cfg or NoiseAttackConfig()
    return _noise_attack("fgsm", model, image, y, cfg, 1, cfg.epsilon, None)


def noise_bias_attack_bim(model, image, y, cfg: NoiseAttackConfig | None = None) -> AttackResult:
    cfg = cfg or NoiseAttackConfig()
    return _noise_attack("bim", model, image, y, cfg, cfg.iterations, cfg.step, None)


def noise_bias_attack_mifgsm(model, image, y, cfg: NoiseAttackConfig | None = None) -> AttackResult:
    cfg = cfg or NoiseAttackConfig()
    return _noise_attack("mifgsm", model, image, y, cfg, cfg.iterations, cfg.step, cfg.momentum)


ATTACKS = {
    "advsbf": advsbf_attack,
    "fgsm": noise_bias_attack_fgsm,
    "bim": noise_bias_attack_bim,
    "mifgsm": noise_bias_attack_mifgsm,
}


def default_config(name: str):
    return AttackConfig() if name == "advsbf" else NoiseAttackConfig()


def clean_prediction(model, image: GrayImage) -> int:
    return forward(model, image).label
