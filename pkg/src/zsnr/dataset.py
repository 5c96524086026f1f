"""Synthetic "images" whose mean brightness follows a chosen distribution.

Each sample is a constant brightness level plus iid Gaussian texture,
clipped to [-1, 1]. With ``n_classes = K > 0`` the brightness range
[-1, 1] is cut into K equal bins and a sample's label is the bin its
brightness level falls in, so class k pulls toward the k-th bin.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

HIST_BINS = 41


@dataclass(frozen=True)
class DatasetSpec:
    dim: int = 64
    brightness: str = "bimodal"
    # uniform: (lo, hi); bimodal: (b1, b2, p); constant: (b,)
    params: tuple = (-0.8, 0.8, 0.5)
    texture_std: float = 0.1
    n_classes: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        if self.dim < 1:
            raise InvalidArgumentError("dim must be >= 1")
        if self.texture_std < 0:
            raise InvalidArgumentError("texture_std must be >= 0")
        if self.n_classes < 0:
            raise InvalidArgumentError("n_classes must be >= 0")
        expected = {"uniform": 2, "bimodal": 3, "constant": 1}
        if self.brightness not in expected:
            raise InvalidArgumentError(f"unknown brightness distribution {self.brightness!r}")
        if len(self.params) != expected[self.brightness]:
            raise InvalidArgumentError(
                f"{self.brightness} takes {expected[self.brightness]} parameters, got {len(self.params)}"
            )
        levels = self.params[:2] if self.brightness == "bimodal" else self.params
        if any(abs(b) > 1 for b in levels):
            raise InvalidArgumentError("brightness parameters must lie in [-1, 1]")
        if self.brightness == "uniform" and self.params[0] > self.params[1]:
            raise InvalidArgumentError("uniform brightness needs lo <= hi")
        if self.brightness == "bimodal" and not 0 <= self.params[2] <= 1:
            raise InvalidArgumentError("bimodal mixing weight must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = list(self.params)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**{**d, "params": tuple(d.get("params", cls.params))})


def class_of_brightness(b: np.ndarray, n_classes: int) -> np.ndarray:
    if n_classes == 0:
        return np.full(np.shape(b), -1, dtype=np.int64)
    k = np.floor((np.asarray(b) + 1.0) / 2.0 * n_classes).astype(np.int64)
    return np.clip(k, 0, n_classes - 1)


def generate(spec: DatasetSpec, n: int, rng: np.random.Generator | None = None):
    """Return ``(samples, labels)``; labels are -1 when ``n_classes == 0``.

    Without an explicit ``rng`` the draw is a pure function of ``spec.seed``.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if spec.brightness == "uniform":
        lo, hi = spec.params
        b = rng.uniform(lo, hi, size=n)
    elif spec.brightness == "bimodal":
        b1, b2, p = spec.params
        b = np.where(rng.random(n) < p, b1, b2)
    else:
        b = np.full(n, spec.params[0])
    texture = spec.texture_std * rng.standard_normal((n, spec.dim))
    samples = np.clip(b[:, None] + texture, -1.0, 1.0)
    return samples, class_of_brightness(b, spec.n_classes)


def brightness_stats(samples) -> dict:
    """Per-sample means plus their mean, population std and a 41-bin histogram on [-1, 1].

    Means outside [-1, 1] are counted in the end bins.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgumentError("empty sample tensor")
    x = x.reshape(x.shape[0], -1) if x.ndim > 1 else x.reshape(1, -1)
    means = x.mean(axis=1)
    hist, _ = np.histogram(np.clip(means, -1.0, 1.0), bins=HIST_BINS, range=(-1.0, 1.0))
    return {
        "per_sample_means": means,
        "mean": float(means.mean()),
        "std": float(means.std()),
        "histogram": hist,
    }


def bin_centers(bins: int = HIST_BINS) -> np.ndarray:
    edges = np.linspace(-1.0, 1.0, bins + 1)
    return 0.5 * (edges[:-1] + edges[1:])


def histogram_modes(hist) -> dict:
    """Locate the tallest bin on each side of zero and the dip between them.

    ``bimodal`` is true when both side peaks are non-empty and the lowest
    bin between them holds at most half of the smaller peak.
    """
    hist = np.asarray(hist)
    centers = bin_centers(hist.size)
    neg = np.flatnonzero(centers < 0)
    pos = np.flatnonzero(centers > 0)
    i_neg = neg[np.argmax(hist[neg])]
    i_pos = pos[np.argmax(hist[pos])]
    valley = int(hist[i_neg : i_pos + 1].min())
    smaller = int(min(hist[i_neg], hist[i_pos]))
    return {
        "neg_mode": float(centers[i_neg]),
        "pos_mode": float(centers[i_pos]),
        "neg_peak": int(hist[i_neg]),
        "pos_peak": int(hist[i_pos]),
        "valley": valley,
        "bimodal": bool(smaller > 0 and valley <= 0.5 * smaller),
    }


def to_uint8(x) -> np.ndarray:
    return np.clip(np.rint((np.asarray(x) + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def image_shape(dim: int) -> tuple[int, int]:
    side = int(round(np.sqrt(dim)))
    return (side, side) if side * side == dim else (1, dim)


def write_pgm(path, image) -> None:
    """Write a 2-D array in [-1, 1] as a binary 8-bit PGM."""
    img = to_uint8(image)
    if img.ndim != 2:
        raise InvalidArgumentError("PGM images must be 2-D")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise InvalidArgumentError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise InvalidArgumentError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


def dump_grid(path, samples, ncols: int = 8, pad: int = 1) -> None:
    """Tile flat samples into one PGM grid (padding drawn at mid-grey)."""
    x = np.asarray(samples, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    h, w = image_shape(x.shape[1])
    n = x.shape[0]
    ncols = max(1, min(ncols, n))
    nrows = -(-n // ncols)
    grid = np.zeros((nrows * (h + pad) + pad, ncols * (w + pad) + pad))
    for i in range(n):
        r, c = divmod(i, ncols)
        y0 = pad + r * (h + pad)
        x0 = pad + c * (w + pad)
        grid[y0 : y0 + h, x0 : x0 + w] = x[i].reshape(h, w)
    write_pgm(path, grid)
