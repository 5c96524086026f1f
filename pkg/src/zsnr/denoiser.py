"""Fully-connected conditional denoiser with hand-written backprop.

Input is ``[x_t, sinusoidal(t / T), class_embedding]``; two SiLU hidden
layers; a linear head of the data's dimension predicting either epsilon or
v. The last row of the class table is the null class used for the
unconditional branch of classifier-free guidance.
"""

from __future__ import annotations

import io
import json
import struct
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import (
    LossConfig,
    NoiseMode,
    Parameterization,
    forward_diffuse,
    prediction_target,
    sample_noise,
)
from .errors import CheckpointFormatError, InvalidArgumentError, TrainingDivergedError
from .schedule import NoiseSchedule

PARAM_NAMES = ("class_emb", "W1", "b1", "W2", "b2", "W3", "b3")

CHECKPOINT_MAGIC = b"ZSNRCKPT"
CHECKPOINT_VERSION = 1


class ScheduleMismatchWarning(UserWarning):
    pass


def _silu(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    return z * s, s


def timestep_embedding(t, T: int, dim: int) -> np.ndarray:
    """Sinusoidal features of ``t / T``; frequencies spaced geometrically in [1, 1000]."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.geomspace(1.0, 1000.0, half)
    angles = (t / T)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class MLPDenoiser:
    """Two-hidden-layer MLP predicting in a fixed parameterization.

    Parameters are held in ``self.params`` (a dict of float64 arrays) so the
    optimizer and checkpoint code can treat them uniformly.
    """

    def __init__(
        self,
        data_dim: int = 64,
        hidden: int = 256,
        t_dim: int = 32,
        c_dim: int = 16,
        n_classes: int = 0,
        T: int = 1000,
        param="v",
        schedule_hash: str = "",
        rng: np.random.Generator | None = None,
        meta: dict | None = None,
    ):
        if data_dim < 1 or hidden < 1 or t_dim < 2 or t_dim % 2 or c_dim < 1 or n_classes < 0:
            raise InvalidArgumentError("invalid denoiser dimensions")
        self.data_dim = int(data_dim)
        self.hidden = int(hidden)
        self.t_dim = int(t_dim)
        self.c_dim = int(c_dim)
        self.n_classes = int(n_classes)
        self.T = int(T)
        self.param = Parameterization.parse(param)
        self.schedule_hash = schedule_hash
        # free-form JSON stored in the checkpoint header (e.g. schedule recipe)
        self.meta = dict(meta or {})
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = self._init_params(rng)

    @property
    def null_class(self) -> int:
        return self.n_classes

    @property
    def in_dim(self) -> int:
        return self.data_dim + self.t_dim + self.c_dim

    def config(self) -> dict:
        return {
            "data_dim": self.data_dim,
            "hidden": self.hidden,
            "t_dim": self.t_dim,
            "c_dim": self.c_dim,
            "n_classes": self.n_classes,
            "T": self.T,
            "param": self.param.value,
        }

    def _init_params(self, rng):
        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        h = self.hidden
        return {
            "class_emb": rng.standard_normal((self.n_classes + 1, self.c_dim)),
            "W1": uniform(self.in_dim, (self.in_dim, h)),
            "b1": np.zeros(h),
            "W2": uniform(h, (h, h)),
            "b2": np.zeros(h),
            # zero head: the untrained model predicts 0 everywhere
            "W3": np.zeros((h, self.data_dim)),
            "b3": np.zeros(self.data_dim),
        }

    def _labels(self, cond, batch: int) -> np.ndarray:
        if cond is None:
            return np.full(batch, self.null_class, dtype=np.int64)
        labels = np.broadcast_to(np.asarray(cond, dtype=np.int64), (batch,)).copy()
        labels[labels < 0] = self.null_class
        if np.any(labels > self.null_class):
            raise InvalidArgumentError(f"class label out of range [0, {self.n_classes})")
        return labels

    def _inputs(self, x_t, t, cond):
        x = np.asarray(x_t, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise InvalidArgumentError(
                f"expected input of shape (batch, {self.data_dim}), got {x.shape}"
            )
        batch = x.shape[0]
        t_arr = np.broadcast_to(np.asarray(t), (batch,))
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise InvalidArgumentError(f"timestep outside [1, {self.T}]")
        labels = self._labels(cond, batch)
        temb = timestep_embedding(t_arr, self.T, self.t_dim)
        inp = np.concatenate([x, temb, self.params["class_emb"][labels]], axis=1)
        return inp, labels

    def _forward(self, x_t, t, cond):
        p = self.params
        inp, labels = self._inputs(x_t, t, cond)
        z1 = inp @ p["W1"] + p["b1"]
        a1, s1 = _silu(z1)
        z2 = a1 @ p["W2"] + p["b2"]
        a2, s2 = _silu(z2)
        out = a2 @ p["W3"] + p["b3"]
        cache = (inp, labels, z1, a1, s1, z2, a2, s2)
        return out, cache

    def forward(self, x_t, t, cond=None) -> np.ndarray:
        """Prediction for a batch ``x_t`` of shape ``(batch, data_dim)``."""
        return self._forward(x_t, t, cond)[0]

    __call__ = forward

    def _backward(self, cache, grad_out) -> dict[str, np.ndarray]:
        p = self.params
        inp, labels, z1, a1, s1, z2, a2, s2 = cache
        g = np.asarray(grad_out, dtype=np.float64)
        grads = {"W3": a2.T @ g, "b3": g.sum(axis=0)}
        da2 = g @ p["W3"].T
        dz2 = da2 * (s2 * (1.0 + z2 * (1.0 - s2)))
        grads["W2"] = a1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        da1 = dz2 @ p["W2"].T
        dz1 = da1 * (s1 * (1.0 + z1 * (1.0 - s1)))
        grads["W1"] = inp.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        dinp = dz1 @ p["W1"].T
        d_emb = np.zeros_like(p["class_emb"])
        np.add.at(d_emb, labels, dinp[:, self.data_dim + self.t_dim :])
        grads["class_emb"] = d_emb
        return grads

    def backward(self, x_t, t, cond, grad_out) -> dict[str, np.ndarray]:
        """Gradients of ``sum(forward(x_t, t, cond) * grad_out)`` w.r.t. every parameter."""
        out, cache = self._forward(x_t, t, cond)
        if np.shape(grad_out) != out.shape:
            raise InvalidArgumentError("grad_out must match the output shape")
        return self._backward(cache, grad_out)


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr >= 0:
            raise InvalidArgumentError("learning rate must be >= 0")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise InvalidArgumentError("moment decays must lie in (0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 128
    iterations: int = 2000
    seed: int = 0
    noise: NoiseMode = field(default_factory=NoiseMode)
    loss: LossConfig = field(default_factory=LossConfig)
    # probability of replacing a label with the null class during training
    cond_dropout: float = 0.1

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgumentError("learning rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidArgumentError("moment decays must lie in (0, 1)")
        if self.batch_size < 1 or self.iterations < 0:
            raise InvalidArgumentError("batch_size must be >= 1 and iterations >= 0")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise InvalidArgumentError("cond_dropout must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = {"kind": self.noise.kind, "strength": self.noise.strength}
        d["loss"] = {"lambda_t": self.loss.name}
        return d


def train_step(
    model: MLPDenoiser,
    x0: np.ndarray,
    labels,
    schedule: NoiseSchedule,
    optimizer: Adam,
    rng: np.random.Generator,
    noise: NoiseMode | None = None,
    loss_cfg: LossConfig | None = None,
    cond_dropout: float = 0.0,
) -> float:
    """One optimizer update on a batch; returns the pre-update loss."""
    loss_cfg = loss_cfg or LossConfig()
    x0 = np.asarray(x0, dtype=np.float64)
    batch = x0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=batch)
    eps = sample_noise((batch, 1, model.data_dim), noise, rng).reshape(x0.shape)
    if labels is None:
        labels = np.full(batch, -1, dtype=np.int64)
    labels = np.array(labels, dtype=np.int64)
    if cond_dropout > 0:
        labels[rng.random(batch) < cond_dropout] = -1

    x_t = forward_diffuse(x0, eps, t, schedule)
    out, cache = model._forward(x_t, t, labels)
    target = prediction_target(x0, eps, t, schedule, model.param)
    w = loss_cfg.weights(t)
    diff = out - target
    loss = float(np.mean(w * np.mean(diff**2, axis=1)))
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss at optimizer step {optimizer.t + 1}")
    grad_out = (2.0 / diff.size) * w[:, None] * diff
    optimizer.step(model.params, model._backward(cache, grad_out))
    return loss


def train(
    model: MLPDenoiser,
    data: np.ndarray,
    labels,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
    callback=None,
) -> list[float]:
    """Minibatch training loop; batches are drawn with replacement from ``data``."""
    if schedule.T != model.T:
        raise InvalidArgumentError(f"model built for T={model.T}, schedule has T={schedule.T}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    data = np.asarray(data, dtype=np.float64)
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
    losses = []
    for it in range(cfg.iterations):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        batch_labels = None if labels is None else labels[idx]
        loss = train_step(
            model, data[idx], batch_labels, schedule, opt, rng, cfg.noise, cfg.loss, cfg.cond_dropout
        )
        losses.append(loss)
        if callback is not None:
            callback(it, loss)
    model.schedule_hash = schedule.digest()
    return losses


def save_checkpoint(model: MLPDenoiser, path) -> None:
    """Write ``model`` as a versioned binary checkpoint.

    Layout: magic, u32 version, u32 header length, JSON header, u32 CRC32 of
    the payload, then each parameter as little-endian float64 in header order.
    """
    header = {
        "config": model.config(),
        "schedule_hash": model.schedule_hash,
        "meta": model.meta,
        "params": [[k, list(model.params[k].shape)] for k in PARAM_NAMES],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes() for k in PARAM_NAMES)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
    buf.write(header_bytes)
    buf.write(struct.pack("<I", zlib.crc32(payload)))
    buf.write(payload)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, schedule: NoiseSchedule | None = None) -> MLPDenoiser:
    """Read a checkpoint; warns if ``schedule`` differs from the training schedule."""
    raw = Path(path).read_bytes()
    n_magic = len(CHECKPOINT_MAGIC)
    if raw[:n_magic] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file")
    try:
        version, hlen = struct.unpack_from("<II", raw, n_magic)
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
        pos = n_magic + 8
        header = json.loads(raw[pos : pos + hlen].decode())
        pos += hlen
        (crc,) = struct.unpack_from("<I", raw, pos)
        pos += 4
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header ({exc})") from None
    payload = raw[pos:]
    try:
        shapes = {k: tuple(s) for k, s in header["params"]}
    except (KeyError, TypeError, ValueError):
        raise CheckpointFormatError(f"{path}: corrupt parameter table") from None
    expected = sum(int(np.prod(s)) for s in shapes.values()) * 8
    if len(payload) != expected:
        raise CheckpointFormatError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    if zlib.crc32(payload) != crc:
        raise CheckpointFormatError(f"{path}: payload checksum mismatch")

    try:
        model = MLPDenoiser(
            **header["config"], schedule_hash=header["schedule_hash"], meta=header.get("meta")
        )
    except (TypeError, InvalidArgumentError) as exc:
        raise CheckpointFormatError(f"{path}: bad model config ({exc})") from None
    offset = 0
    for k, _ in header["params"]:
        n = int(np.prod(shapes[k]))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).astype(np.float64)
        if arr.size and shapes[k] != model.params[k].shape:
            raise CheckpointFormatError(f"{path}: shape mismatch for {k}")
        model.params[k] = arr.reshape(shapes[k])
        offset += n * 8
    if schedule is not None and schedule.digest() != model.schedule_hash:
        warnings.warn(
            f"checkpoint was trained on schedule {model.schedule_hash!r}, "
            f"loading against {schedule.digest()!r}",
            ScheduleMismatchWarning,
            stacklevel=2,
        )
    return model
