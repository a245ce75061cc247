"""One-hidden-layer MLP with hand-written backprop, plus a synthetic chest phantom set.

All randomness comes from numpy's PCG64 bit generator, whose output stream
is fixed by its published algorithm, so datasets and weights are portable.
Stream derivation:

* phantom image ``k`` of a dataset with seed ``s``: ``PCG64(s ^ k)``
* weight init: ``PCG64([seed, INIT_STREAM])``
* minibatch shuffling: ``PCG64([seed, SHUFFLE_STREAM])``
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagekit import GrayImage, load_pgm, save_pgm

IMAGE_SIDE = 64
NUM_CLASSES = 2
INIT_STREAM = 1
SHUFFLE_STREAM = 2


def rng_for(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(list(key) if len(key) > 1 else key[0]))


# ---------------------------------------------------------------- phantoms

@dataclass
class PhantomDataset:
    images: list[GrayImage]
    labels: list[int]
    seed: int | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if any(y not in (0, 1) for y in self.labels):
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return len(self.images)

    def stack(self) -> np.ndarray:
        return np.stack([im.data for im in self.images])

    def subset(self, idx) -> PhantomDataset:
        return PhantomDataset([self.images[i] for i in idx], [self.labels[i] for i in idx], self.seed)


def _ellipse(xx, yy, cx, cy, ax, ay):
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2


def render_phantom(rng: np.random.Generator, label: int, side: int = IMAGE_SIDE) -> GrayImage:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    s = side / 64.0
    img = np.full((side, side), rng.uniform(0.70, 0.80))
    lungs = []
    for cx0 in (20.0, 44.0):
        cx = (cx0 + rng.uniform(-2, 2)) * s
        cy = (32.0 + rng.uniform(-2, 2)) * s
        ax = rng.uniform(8.0, 10.0) * s
        ay = rng.uniform(17.0, 21.0) * s
        img[_ellipse(xx, yy, cx, cy, ax, ay) <= 1.0] = rng.uniform(0.25, 0.35)
        lungs.append((cx, cy, ax, ay))
    if label == 1:
        for _ in range(int(rng.integers(1, 4))):
            cx, cy, ax, ay = lungs[int(rng.integers(0, 2))]
            # uniform point in the inner 70% of the chosen lung
            r = 0.7 * np.sqrt(rng.uniform())
            phi = rng.uniform(0, 2 * np.pi)
            bx, by = cx + r * ax * np.cos(phi), cy + r * ay * np.sin(phi)
            sigma = rng.uniform(3.0, 6.0) * s
            amp = rng.uniform(0.3, 0.5)
            img += amp * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * sigma**2))
    img += rng.normal(0.0, 0.05, size=img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0))


def synth_dataset(seed: int, n_per_class: int) -> PhantomDataset:
    """``n_per_class`` normal phantoms followed by ``n_per_class`` lesioned ones."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    labels = [0] * n_per_class + [1] * n_per_class
    images = [render_phantom(rng_for(seed ^ k), y) for k, y in enumerate(labels)]
    return PhantomDataset(images, labels, seed)


def save_dataset(ds: PhantomDataset, directory) -> list[str]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for k, img in enumerate(ds.images):
        name = f"img_{k:05d}.pgm"
        save_pgm(img, d / name)
        names.append(name)
    with open(d / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["filename", "label"])
        w.writerows(zip(names, ds.labels))
    return names


def load_dataset(directory) -> PhantomDataset:
    d = Path(directory)
    images, labels = [], []
    with open(d / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            images.append(load_pgm(d / row["filename"]))
            labels.append(int(row["label"]))
    return PhantomDataset(images, labels)


# ---------------------------------------------------------------- model

@dataclass(eq=False)
class MlpClassifier:
    W1: np.ndarray  # (hidden, input)
    b1: np.ndarray
    W2: np.ndarray  # (2, hidden)
    b2: np.ndarray
    seed: int | None = None
    # fixed pixel centring; equivalent to shifting b1, but keeps SGD on raw
    # [0, 1] rasters from killing every hidden unit in the first few steps
    input_offset: float = 0.5

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def init(cls, seed: int, input_dim: int = IMAGE_SIDE * IMAGE_SIDE, hidden_dim: int = 64) -> MlpClassifier:
        rng = rng_for(seed, INIT_STREAM)
        s1, s2 = 1 / np.sqrt(input_dim), 1 / np.sqrt(hidden_dim)
        W1 = rng.uniform(-s1, s1, size=(hidden_dim, input_dim))
        W2 = rng.uniform(-s2, s2, size=(NUM_CLASSES, hidden_dim))
        return cls(W1, np.zeros(hidden_dim), W2, np.zeros(NUM_CLASSES), seed)

    @classmethod
    def zeros(cls, input_dim: int = IMAGE_SIDE * IMAGE_SIDE, hidden_dim: int = 64) -> MlpClassifier:
        return cls(np.zeros((hidden_dim, input_dim)), np.zeros(hidden_dim),
                   np.zeros((NUM_CLASSES, hidden_dim)), np.zeros(NUM_CLASSES))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "seed": self.seed,
            "input_offset": self.input_offset,
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpClassifier:
        m = cls(*(np.array(d[k], dtype=np.float64) for k in ("W1", "b1", "W2", "b2")), seed=d.get("seed"),
                input_offset=float(d.get("input_offset", 0.5)))
        if m.W1.shape != (d["hidden_dim"], d["input_dim"]):
            raise ValueError("weight shape disagrees with declared dims")
        return m

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> MlpClassifier:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class LossValue:
    logits: np.ndarray
    probs: np.ndarray
    loss: float | None = None
    label: int = field(init=False)

    def __post_init__(self):
        self.label = int(np.argmax(self.logits))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, y: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if y not in range(logits.shape[-1]):
        raise ValueError(f"label {y} out of range")
    m = np.max(logits)
    return float(m + np.log(np.sum(np.exp(logits - m))) - logits[y])


def _flat(model: MlpClassifier, image) -> np.ndarray:
    x = image.data if isinstance(image, GrayImage) else np.asarray(image, dtype=np.float64).reshape(-1)
    if x.size != model.input_dim:
        raise ValueError(f"image has {x.size} pixels, model expects {model.input_dim}")
    return x


def _hidden(model, x):
    z1 = model.W1 @ (x - model.input_offset) + model.b1
    return z1, np.maximum(z1, 0.0)


def forward(model: MlpClassifier, image, y: int | None = None) -> LossValue:
    x = _flat(model, image)
    _, h = _hidden(model, x)
    logits = model.W2 @ h + model.b2
    return LossValue(logits, softmax(logits), None if y is None else cross_entropy(logits, y))


def backward_input(model: MlpClassifier, image, dlogits: np.ndarray) -> np.ndarray:
    """Pull a logit-space cotangent back to pixels; returns an array shaped like the image."""
    x = _flat(model, image)
    z1, _ = _hidden(model, x)
    dh = model.W2.T @ dlogits
    dz1 = dh * (z1 > 0)
    dx = model.W1.T @ dz1
    shape = image.pixels.shape if isinstance(image, GrayImage) else np.shape(image)
    return dx.reshape(shape)


def input_gradient(model: MlpClassifier, image, y: int) -> np.ndarray:
    """dJ/dX for the cross-entropy J of label y."""
    p = forward(model, image).probs
    return backward_input(model, image, p - np.eye(NUM_CLASSES)[y])


def loss_and_input_gradient(model: MlpClassifier, image, y: int) -> tuple[float, np.ndarray, LossValue]:
    out = forward(model, image, y)
    g = backward_input(model, image, out.probs - np.eye(NUM_CLASSES)[y])
    return out.loss, g, out


def prob_and_input_gradient(model: MlpClassifier, image, y: int) -> tuple[float, np.ndarray]:
    """Softmax score of label y and its gradient with respect to the pixels."""
    out = forward(model, image)
    p = out.probs
    dlogits = p[y] * (np.eye(NUM_CLASSES)[y] - p)
    return float(p[y]), backward_input(model, image, dlogits)


def predict(model: MlpClassifier, image) -> int:
    return forward(model, image).label


def accuracy(model: MlpClassifier, dataset: PhantomDataset) -> float:
    X = dataset.stack() - model.input_offset
    H = np.maximum(X @ model.W1.T + model.b1, 0.0)
    pred = np.argmax(H @ model.W2.T + model.b2, axis=1)
    return float(np.mean(pred == np.asarray(dataset.labels)))


def train(dataset: PhantomDataset, epochs: int = 50, learning_rate: float = 0.05, seed: int = 42,
          hidden_dim: int = 64, batch_size: int = 16) -> MlpClassifier:
    """Minibatch SGD on mean cross-entropy."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    X = dataset.stack()
    Y = np.eye(NUM_CLASSES)[np.asarray(dataset.labels)]
    model = MlpClassifier.init(seed, X.shape[1], hidden_dim)
    X = X - model.input_offset
    W1, b1, W2, b2 = model.W1, model.b1, model.W2, model.b2
    shuffler = rng_for(seed, SHUFFLE_STREAM)
    n = X.shape[0]
    for _ in range(epochs):
        order = shuffler.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = X[idx], Y[idx]
            z1 = xb @ W1.T + b1
            h = np.maximum(z1, 0.0)
            p = softmax(h @ W2.T + b2)
            dlog = (p - yb) / len(idx)
            dW2 = dlog.T @ h
            db2 = dlog.sum(0)
            dz1 = (dlog @ W2) * (z1 > 0)
            dW1 = dz1.T @ xb
            db1 = dz1.sum(0)
            W1 -= learning_rate * dW1
            b1 -= learning_rate * db1
            W2 -= learning_rate * dW2
            b2 -= learning_rate * db2
    return model
