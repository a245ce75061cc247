"""Desk-scale reproduction of the whitebox / transfer / interpretation study.

``desk_pipeline`` trains two independently seeded subject models, attacks a
100-image cohort with the smooth bias field and with BIM log noise, replays
the successes on the second model, builds sensitivity maps for every
successful bias-field example and writes all artifacts under ``out_dir``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evalharness as eh
from .attack import AttackConfig, NoiseAttackConfig, advsbf_attack, noise_bias_attack_bim
from .classifier import MlpClassifier, accuracy, predict, synth_dataset, train
from .imagekit import GrayImage, save_pgm
from .interpret import InterpretMap, average_maps, optimize_map, save_map


@dataclass
class PipelineConfig:
    train_seed: int = 42
    train_per_class: int = 200
    test_seed: int = 7
    test_per_class: int = 100
    model_seeds: tuple[int, int] = (42, 43)
    epochs: int = 50
    learning_rate: float = 0.05
    cohort_size: int = 100
    attack: AttackConfig = field(default_factory=AttackConfig)
    noise: NoiseAttackConfig = field(default_factory=NoiseAttackConfig)
    interpret_iterations: int = 150
    lambda1: float = 0.05
    lambda2: float = 0.2
    interpret: bool = True


@dataclass
class PipelineResult:
    models: dict[str, MlpClassifier]
    test_accuracy: dict[str, float]
    cohort: tuple[list[GrayImage], list[int]]
    whitebox: dict[str, eh.SuccessStats]
    transfer: dict[str, eh.TransferMatrix]
    maps: list[InterpretMap]
    mean_map: InterpretMap | None
    timings: dict[str, float]


def balanced_cohort(model: MlpClassifier, images, labels, size: int) -> list[int]:
    """First ``size // 2`` correctly classified images of each class, in dataset order."""
    picked = {0: [], 1: []}
    for i, (x, y) in enumerate(zip(images, labels)):
        if len(picked[y]) < size // 2 and predict(model, x) == y:
            picked[y].append(i)
    return sorted(picked[0] + picked[1])


def desk_pipeline(out_dir, cfg: PipelineConfig | None = None, log=print) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    t0 = time.perf_counter()
    train_set = synth_dataset(cfg.train_seed, cfg.train_per_class)
    test_set = synth_dataset(cfg.test_seed, cfg.test_per_class)
    models = {f"m{s}": train(train_set, cfg.epochs, cfg.learning_rate, s) for s in cfg.model_seeds}
    acc = {k: accuracy(m, test_set) for k, m in models.items()}
    timings["train"] = time.perf_counter() - t0
    for k, a in acc.items():
        log(f"{k}: held-out accuracy {a:.4f}")

    src_id, tgt_id = list(models)
    src = models[src_id]
    keep = balanced_cohort(src, test_set.images, test_set.labels, cfg.cohort_size)
    images = [test_set.images[i] for i in keep]
    labels = [test_set.labels[i] for i in keep]

    t0 = time.perf_counter()
    whitebox, transfer = {}, {}
    for name, fn, acfg in (("advsbf", advsbf_attack, cfg.attack), ("bim", noise_bias_attack_bim, cfg.noise)):
        wb = eh.run_whitebox(src, images, labels, fn, acfg, attack_name=name, model_id=src_id)
        whitebox[name] = wb
        transfer[name] = eh.run_transfer(src, models, images, labels, fn, acfg, source_id=src_id,
                                         attack_name=name, whitebox=wb)
        adv_dir = out / f"adv_{name}"
        adv_dir.mkdir(exist_ok=True)
        for k, r in zip(keep, wb.results):
            save_pgm(r.adversarial_image, adv_dir / f"adv_{k:05d}.pgm")
        e = transfer[name].entry(tgt_id)
        log(f"{name}: whitebox {wb.successes}/{wb.n_images} = {wb.whitebox_success_rate:.4f}, "
            f"transfer to {tgt_id} {e.n_fooled}/{e.n_source_success}, mean TV {wb.mean_bias_tv:.2f}")
    timings["attacks"] = time.perf_counter() - t0
    eh.emit_report(list(whitebox.values()), out / "whitebox.csv")
    eh.emit_report(list(transfer.values()), out / "transfer.csv")

    maps, mean = [], None
    if cfg.interpret:
        t0 = time.perf_counter()
        map_dir = out / "maps"
        map_dir.mkdir(exist_ok=True)
        for k, x, r in zip(keep, images, whitebox["advsbf"].results):
            if not r.success:
                continue
            mp = optimize_map(src, x, r.adversarial_image, r.label, cfg.interpret_iterations,
                              cfg.lambda1, cfg.lambda2)
            save_map(mp, map_dir / f"map_{k:05d}.pgm")
            maps.append(mp)
        if maps:
            mean = average_maps(maps)
            save_pgm(GrayImage(mean.mask), map_dir / "mean_map.pgm")
            rows = np.arange(mean.height)
            top = mean.mask[rows < mean.height // 4].mean()
            mid = mean.mask[(rows >= mean.height // 4) & (rows < 3 * mean.height // 4)].mean()
            bot = mean.mask[rows >= 3 * mean.height // 4].mean()
            log(f"mean map over {len(maps)} examples: top {top:.3f} middle {mid:.3f} bottom {bot:.3f}")
        timings["interpret"] = time.perf_counter() - t0

    return PipelineResult(models, acc, (images, labels), whitebox, transfer, maps, mean, timings)
