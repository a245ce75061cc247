"""Whitebox and transfer evaluation of attacks over an image cohort."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .attack import AttackResult
from .classifier import MlpClassifier, predict
from .imagekit import GrayImage, quantize

CSV_HEADER = ["attack", "source", "target", "n", "success_rate", "mean_tv"]


@dataclass
class SuccessStats:
    attack: str
    n_images: int
    successes: int
    whitebox_success_rate: float
    mean_bias_tv: float
    mean_loss_gain: float
    n_excluded: int = 0
    model_id: str = ""
    config: dict = field(default_factory=dict)
    results: list[AttackResult] = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("results")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SuccessStats:
        return cls(**d)

    def rows(self) -> list[list]:
        return [[self.attack, self.model_id, self.model_id, self.n_images,
                 f"{self.whitebox_success_rate:.4f}", f"{self.mean_bias_tv:.4f}"]]


@dataclass
class TransferEntry:
    target: str
    n_source_success: int
    n_fooled: int
    success_rate: float  # n_fooled / n_source_success, NaN when nothing to transfer
    cohort_rate: float  # n_fooled / n_cohort


@dataclass
class TransferMatrix:
    attack: str
    source: str
    n_cohort: int
    whitebox: SuccessStats
    entries: list[TransferEntry] = field(default_factory=list)

    def entry(self, target: str) -> TransferEntry:
        for e in self.entries:
            if e.target == target:
                return e
        raise KeyError(target)

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "source": self.source,
            "n_cohort": self.n_cohort,
            "whitebox": self.whitebox.to_dict(),
            "entries": [asdict(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> TransferMatrix:
        return cls(d["attack"], d["source"], d["n_cohort"], SuccessStats.from_dict(d["whitebox"]),
                   [TransferEntry(**e) for e in d["entries"]])

    def rows(self) -> list[list]:
        out = []
        for e in self.entries:
            n = self.n_cohort if e.target == self.source else e.n_source_success
            out.append([self.attack, self.source, e.target, n, _fmt(e.success_rate),
                        f"{self.whitebox.mean_bias_tv:.4f}"])
        return out


def _fmt(rate: float) -> str:
    return "nan" if math.isnan(rate) else f"{rate:.4f}"


def eligible(model: MlpClassifier, images, labels) -> list[int]:
    """Indices of images the model already classifies correctly."""
    return [i for i, (x, y) in enumerate(zip(images, labels)) if predict(model, x) == y]


def run_whitebox(model: MlpClassifier, images, labels, attack_fn: Callable, cfg, *,
                 attack_name: str = "", model_id: str = "") -> SuccessStats:
    keep = eligible(model, images, labels)
    if not keep:
        raise ValueError("no correctly classified images to attack")
    results = [attack_fn(model, images[i], labels[i], cfg) for i in keep]
    n = len(results)
    successes = sum(r.success for r in results)
    return SuccessStats(
        attack=attack_name or (results[0].attack if results else ""),
        n_images=n,
        successes=successes,
        whitebox_success_rate=successes / n,
        mean_bias_tv=float(np.mean([r.tv_of_bias for r in results])),
        mean_loss_gain=float(np.mean([r.best_loss - r.initial_loss for r in results])),
        n_excluded=len(images) - n,
        model_id=model_id,
        config=cfg.to_dict() if hasattr(cfg, "to_dict") else dict(cfg or {}),
        results=results,
    )


def delivered(img: GrayImage) -> GrayImage:
    """The image as an attacker would hand it over: 8-bit quantized."""
    return GrayImage(quantize(img) / 255.0)


def run_transfer(source: MlpClassifier, targets: dict[str, MlpClassifier], images, labels,
                 attack_fn: Callable, cfg, *, source_id: str = "source", attack_name: str = "",
                 whitebox: SuccessStats | None = None) -> TransferMatrix:
    """Craft on ``source`` once, replay the quantized successes on every target.

    A target registered under ``source_id`` is the whitebox diagonal and
    reports the whitebox rate directly.
    """
    wb = whitebox or run_whitebox(source, images, labels, attack_fn, cfg,
                                  attack_name=attack_name, model_id=source_id)
    won = [r for r in wb.results if r.success]
    adv = [delivered(r.adversarial_image) for r in won]
    matrix = TransferMatrix(wb.attack, source_id, wb.n_images, wb)
    for tid, target in targets.items():
        if tid == source_id:
            matrix.entries.append(TransferEntry(tid, wb.successes, wb.successes,
                                                wb.whitebox_success_rate, wb.whitebox_success_rate))
            continue
        fooled = sum(predict(target, a) != r.label for a, r in zip(adv, won))
        rate = fooled / len(won) if won else float("nan")
        matrix.entries.append(TransferEntry(tid, len(won), fooled, rate, fooled / wb.n_images))
    return matrix


def emit_report(results, path) -> None:
    """CSV at ``path`` plus a JSON mirror next to it (same stem, .json)."""
    items = results if isinstance(results, list) else [results]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for it in items:
            w.writerows(it.rows())
    payload = [{"kind": type(it).__name__, **it.to_dict()} for it in items]
    path.with_suffix(".json").write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True))


def load_report(path) -> list:
    payload = json.loads(Path(path).with_suffix(".json").read_text())
    kinds = {"SuccessStats": SuccessStats, "TransferMatrix": TransferMatrix}
    out = []
    for d in payload:
        d = dict(d)
        kind = kinds[d.pop("kind")]
        out.append(kind.from_dict(d))
    return out
