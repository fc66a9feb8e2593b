"""Residual CNN classifier and convolutional encoder-decoder autoencoder.

Both are small, configurable stand-ins: the classifier keeps the residual
topology of a ResNet at reduced depth, and the autoencoder uses stride-2
convolutions down to a latent bottleneck and mirrored stride-2 transposed
convolutions back up, ending in a sigmoid so reconstructions stay in (0, 1).
There are no skip connections between encoder and decoder, so the latent is
a true bottleneck.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, read_checkpoint, write_checkpoint
from .tensor import Tensor, add, affine, conv2d, conv2d_transpose, global_avg_pool, relu, sigmoid

N_CLASSES = 4


def _config_to_dict(cfg) -> dict:
    out = {}
    for k, v in asdict(cfg).items():
        out[k] = ",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else str(v)
    return out


def _config_from_dict(cls, d: dict):
    kwargs = {}
    for f in fields(cls):
        if f.name not in d:
            continue
        raw = d[f.name]
        if "tuple" in str(f.type):
            kwargs[f.name] = tuple(int(x) for x in raw.split(",") if x)
        else:
            kwargs[f.name] = int(raw)
    return cls(**kwargs)


@dataclass(frozen=True)
class ClassifierConfig:
    input_size: int = 32
    base_channels: int = 8
    blocks_per_stage: int = 2
    n_stages: int = 3
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.n_classes != N_CLASSES:
            raise ValueError("the classifier always predicts 4 classes")
        if self.n_stages < 1 or self.base_channels < 1 or self.blocks_per_stage < 0:
            raise ValueError(f"invalid classifier config {self}")
        if self.input_size < 1 or self.input_size % 2**self.n_stages:
            raise ValueError(f"input_size {self.input_size} not divisible by 2**{self.n_stages}")


@dataclass(frozen=True)
class AutoencoderConfig:
    input_size: int = 32
    widths: tuple = (16, 32, 32)
    refine: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError("widths must be a non-empty list of positive ints")
        if self.refine < 0:
            raise ValueError("refine must be non-negative")
        if self.input_size < 1 or self.input_size % 2**self.n_stages:
            raise ValueError(f"input_size {self.input_size} not divisible by 2**{self.n_stages}")
        if math.prod(self.latent_shape) >= self.input_size**2:
            raise ValueError(f"latent {self.latent_shape} does not compress a {self.input_size}^2 image")

    @property
    def n_stages(self) -> int:
        return len(self.widths)

    @property
    def latent_shape(self) -> tuple:
        side = self.input_size // 2**self.n_stages
        return (self.widths[-1], side, side)


class Model:
    """Named parameter container shared by both networks."""

    kind = "model"
    config_cls: type = object

    def __init__(self, config, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.metadata: dict[str, str] = {}

    def _conv(self, name: str, shape: tuple, fan_in: int, rng: np.random.Generator) -> None:
        std = math.sqrt(2.0 / fan_in)
        self.params[name + ".w"] = Tensor((rng.standard_normal(shape) * std).astype(self.dtype), requires_grad=True, name=name + ".w")
        bias_len = shape[1] if name.startswith("dec") else shape[0]
        self.params[name + ".b"] = Tensor(np.zeros(bias_len, self.dtype), requires_grad=True, name=name + ".b")

    def parameters(self) -> list:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def freeze(self) -> "Model":
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        return self

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.params.values())

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) ^ set(state)
            raise CheckpointError(f"parameter names disagree: {sorted(missing)}")
        for k, arr in state.items():
            if arr.shape != self.params[k].shape:
                raise CheckpointError(f"{k}: shape {arr.shape} != expected {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=self.dtype)

    def _input(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        size = self.config.input_size
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected input of shape N,1,H,W, got {x.shape}")
        if x.shape[2] % 2**self.config.n_stages or x.shape[3] % 2**self.config.n_stages:
            raise ValueError(f"input extents {x.shape[2:]} incompatible with config (input_size={size})")
        return x


class Classifier(Model):
    kind = "classifier"
    config_cls = ClassifierConfig

    def __init__(self, config: ClassifierConfig = ClassifierConfig(), seed: int = 0, dtype=np.float32):
        super().__init__(config, dtype)
        rng = np.random.default_rng(seed)
        c = config.base_channels
        self._conv("stem", (c, 1, 3, 3), 9, rng)
        for s in range(config.n_stages):
            out = config.base_channels * 2**s
            self._conv(f"s{s}.down", (out, c, 3, 3), 9 * c, rng)
            for b in range(config.blocks_per_stage):
                self._conv(f"s{s}.b{b}.conv1", (out, out, 3, 3), 9 * out, rng)
                self._conv(f"s{s}.b{b}.conv2", (out, out, 3, 3), 9 * out, rng)
            c = out
        fc = rng.standard_normal((config.n_classes, c)) * math.sqrt(1.0 / c)
        self.params["fc.w"] = Tensor(fc.astype(self.dtype), requires_grad=True, name="fc.w")
        self.params["fc.b"] = Tensor(np.zeros(config.n_classes, self.dtype), requires_grad=True, name="fc.b")

    def block(self, h: Tensor, prefix: str) -> Tensor:
        p = self.params
        r = relu(conv2d(h, p[prefix + ".conv1.w"], p[prefix + ".conv1.b"], 1, 1))
        r = conv2d(r, p[prefix + ".conv2.w"], p[prefix + ".conv2.b"], 1, 1)
        return relu(add(r, h))

    def forward(self, x) -> Tensor:
        """Logits of shape ``[N, 4]``."""
        p = self.params
        h = relu(conv2d(self._input(x), p["stem.w"], p["stem.b"], 1, 1))
        for s in range(self.config.n_stages):
            h = relu(conv2d(h, p[f"s{s}.down.w"], p[f"s{s}.down.b"], 2, 1))
            for b in range(self.config.blocks_per_stage):
                h = self.block(h, f"s{s}.b{b}")
        return affine(global_avg_pool(h), p["fc.w"], p["fc.b"])

    __call__ = forward

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype)
        out = [self.forward(Tensor(x[i : i + batch_size])).data.argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out)


class Autoencoder(Model):
    kind = "autoencoder"
    config_cls = AutoencoderConfig

    def __init__(self, config: AutoencoderConfig = AutoencoderConfig(), seed: int = 0, dtype=np.float32):
        super().__init__(config, dtype)
        rng = np.random.default_rng(seed)
        w = config.widths
        chans = (1,) + w
        for i in range(config.n_stages):
            self._conv(f"enc{i}", (w[i], chans[i], 3, 3), 9 * chans[i], rng)
            for r in range(config.refine):
                self._conv(f"enc{i}.r{r}", (w[i], w[i], 3, 3), 9 * w[i], rng)
        for i in reversed(range(config.n_stages)):
            for r in range(config.refine):
                self._conv(f"mid{i}.r{r}", (w[i], w[i], 3, 3), 9 * w[i], rng)
            # transposed kernels are [in, out, kH, kW]; each output pixel sees in * 4 taps
            out = w[i - 1] if i else w[0]
            self._conv(f"dec{i}", (w[i], out, 4, 4), 4 * w[i], rng)
        self._conv("out", (1, w[0], 3, 3), 9 * w[0], rng)

    def encode(self, x) -> Tensor:
        h = self._input(x)
        p = self.params
        for i in range(self.config.n_stages):
            h = relu(conv2d(h, p[f"enc{i}.w"], p[f"enc{i}.b"], 2, 1))
            for r in range(self.config.refine):
                h = relu(conv2d(h, p[f"enc{i}.r{r}.w"], p[f"enc{i}.r{r}.b"], 1, 1))
        return h

    def decode(self, z: Tensor) -> Tensor:
        p = self.params
        h = z
        for i in reversed(range(self.config.n_stages)):
            for r in range(self.config.refine):
                h = relu(conv2d(h, p[f"mid{i}.r{r}.w"], p[f"mid{i}.r{r}.b"], 1, 1))
            h = relu(conv2d_transpose(h, p[f"dec{i}.w"], p[f"dec{i}.b"], 2, 1))
        return sigmoid(conv2d(h, p["out.w"], p["out.b"], 1, 1))

    def forward(self, x) -> Tensor:
        return self.decode(self.encode(x))

    __call__ = forward

    def denoise(self, image: np.ndarray) -> np.ndarray:
        x = Tensor(np.asarray(image, dtype=self.dtype)[None, None])
        return self.forward(x).data[0, 0].astype(np.float64)


MODEL_KINDS = {cls.kind: cls for cls in (Classifier, Autoencoder)}


def build_classifier(config: ClassifierConfig = ClassifierConfig(), seed: int = 0, dtype=np.float32) -> Classifier:
    return Classifier(config, seed, dtype)


def build_autoencoder(config: AutoencoderConfig = AutoencoderConfig(), seed: int = 0, dtype=np.float32) -> Autoencoder:
    return Autoencoder(config, seed, dtype)


def to_checkpoint(model: Model, metadata: Optional[dict] = None) -> Checkpoint:
    meta = dict(model.metadata)
    meta.update(metadata or {})
    return Checkpoint(model.kind, _config_to_dict(model.config), model.state(), meta)


def from_checkpoint(ckpt: Checkpoint, kind: Optional[str] = None) -> Model:
    if kind is not None and ckpt.kind != kind:
        raise CheckpointError(f"checkpoint holds a {ckpt.kind!r}, expected {kind!r}")
    cls = MODEL_KINDS.get(ckpt.kind)
    if cls is None:
        raise CheckpointError(f"unknown model kind {ckpt.kind!r}")
    try:
        config = _config_from_dict(cls.config_cls, ckpt.config)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from exc
    model = cls(config)
    model.load_state(ckpt.params)
    model.metadata = dict(ckpt.metadata)
    return model


def save_checkpoint(model: Model, path, metadata: Optional[dict] = None) -> None:
    write_checkpoint(to_checkpoint(model, metadata), path)


def load_checkpoint(path, kind: Optional[str] = None) -> Model:
    return from_checkpoint(read_checkpoint(path), kind)
