"""Stacked-LSTM window classifier with an optional ReLU MLP head."""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .data import ALPHABET

MAGIC = b"DMCCLSTM"
FORMAT_VERSION = 1
ALLOWED_WINDOWS = (5, 10, 15, 20)
KAIMING_A = math.sqrt(5.0)


class ModelConfigError(ValueError):
    pass


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    window: int = 20
    lstm_sizes: tuple[int, ...] = (600, 75)
    mlp_size: int = 0
    input_width: int = len(ALPHABET)

    def __post_init__(self):
        object.__setattr__(self, "lstm_sizes", tuple(int(s) for s in self.lstm_sizes))
        if self.window not in ALLOWED_WINDOWS:
            raise ModelConfigError(f"window must be one of {ALLOWED_WINDOWS}, got {self.window}")
        if not 1 <= len(self.lstm_sizes) <= 4 or min(self.lstm_sizes) < 1:
            raise ModelConfigError(f"lstm_sizes must hold 1-4 positive sizes, got {self.lstm_sizes}")
        if self.mlp_size < 0:
            raise ModelConfigError("mlp_size must be >= 0")
        if self.input_width < 1:
            raise ModelConfigError("input_width must be >= 1")

    @property
    def length(self) -> int:
        return 2 * self.window + 1

    def to_text(self) -> str:
        sizes = ",".join(str(s) for s in self.lstm_sizes)
        return (
            f"window = {self.window}\nlstm_sizes = {sizes}\n"
            f"mlp_size = {self.mlp_size}\ninput_width = {self.input_width}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = _parse_kv(text)
        try:
            return cls(
                window=int(kv["window"]),
                lstm_sizes=tuple(int(s) for s in kv["lstm_sizes"].split(",")),
                mlp_size=int(kv["mlp_size"]),
                input_width=int(kv["input_width"]),
            )
        except KeyError as exc:
            raise ModelFileError(f"model config record lacks {exc}") from None


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def kaiming_bound(fan_in: int, a: float = KAIMING_A) -> float:
    """Half-width of the Kaiming-uniform interval, ``sqrt(6 / ((1 + a^2) fan_in))``."""
    gain = math.sqrt(2.0 / (1.0 + a * a))
    return gain * math.sqrt(3.0 / fan_in)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, a: float = KAIMING_A) -> np.ndarray:
    b = kaiming_bound(fan_in, a)
    return rng.uniform(-b, b, size=shape)


@dataclass
class ModelParams:
    """Named parameter tensors of one model, in a fixed order."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()})

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of config and every parameter array."""
        if self.config != other.config or self.names() != other.names():
            return False
        return all(np.array_equal(a.data, b.data) for a, b in zip(self, other))

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        expected = param_shapes(config)
        if list(arrays) != list(expected):
            raise ModelConfigError(f"parameter names {list(arrays)} do not match config {list(expected)}")
        tensors = {}
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != expected[name]:
                raise ModelConfigError(f"{name}: shape {arr.shape}, config expects {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ModelConfigError(f"{name}: non-finite values")
            tensors[name] = Tensor(arr, requires_grad=True)
        return cls(config, tensors)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    width = config.input_width
    for i, h in enumerate(config.lstm_sizes):
        shapes[f"lstm{i}.w_input"] = (width, 4 * h)
        shapes[f"lstm{i}.w_hidden"] = (h, 4 * h)
        shapes[f"lstm{i}.bias"] = (4 * h,)
        width = h
    if config.mlp_size:
        shapes["mlp.weight"] = (width, config.mlp_size)
        shapes["mlp.bias"] = (config.mlp_size,)
        width = config.mlp_size
    shapes["out.weight"] = (width, 1)
    shapes["out.bias"] = (1,)
    return shapes


def _fan_in(name: str, shapes: dict[str, tuple[int, ...]]) -> int:
    if name.endswith("bias"):
        prefix = name.rsplit(".", 1)[0]
        weight = f"{prefix}.w_input" if prefix.startswith("lstm") else f"{prefix}.weight"
        return shapes[weight][0]
    return shapes[name][0]


def init(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Kaiming-uniform (a = sqrt 5) weights; biases uniform in +-1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config)
    arrays = {}
    for name, shape in shapes.items():
        fan_in = _fan_in(name, shapes)
        if name.endswith("bias"):
            b = 1.0 / math.sqrt(fan_in)
            arrays[name] = rng.uniform(-b, b, size=shape)
        else:
            arrays[name] = kaiming_uniform(rng, shape, fan_in)
    return ModelParams.from_arrays(config, arrays)


def lstm_layer(xs: list[Tensor], w_input: Tensor, w_hidden: Tensor, bias: Tensor) -> list[Tensor]:
    """Run one LSTM layer over a list of (B, in) inputs; returns the hidden states.

    Gate blocks in the packed weights are ordered input, forget, cell, output.
    """
    hidden = w_hidden.shape[0]
    if w_input.shape[1] != 4 * hidden or bias.shape != (4 * hidden,):
        raise DimensionError(f"inconsistent LSTM weights {w_input.shape}, {w_hidden.shape}, {bias.shape}")
    batch = xs[0].shape[0]
    h = Tensor(np.zeros((batch, hidden)))
    c = Tensor(np.zeros((batch, hidden)))
    out = []
    for x in xs:
        z = ad.bias_add(ad.matmul(x, w_input) + ad.matmul(h, w_hidden), bias)
        i = ad.sigmoid(ad.slice_axis(z, 0, hidden, axis=1))
        f = ad.sigmoid(ad.slice_axis(z, hidden, 2 * hidden, axis=1))
        g = ad.tanh(ad.slice_axis(z, 2 * hidden, 3 * hidden, axis=1))
        o = ad.sigmoid(ad.slice_axis(z, 3 * hidden, 4 * hidden, axis=1))
        c = f * c + i * g
        h = o * ad.tanh(c)
        out.append(h)
    return out


def forward(params: ModelParams, batch: np.ndarray) -> Tensor:
    """Probabilities of shape (B,) for one-hot windows of shape (B, 2w+1, A)."""
    cfg = params.config
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[1:] != (cfg.length, cfg.input_width):
        raise DimensionError(f"batch shape {batch.shape} does not match (B, {cfg.length}, {cfg.input_width})")
    seq = [Tensor(batch[:, t, :]) for t in range(cfg.length)]
    for i in range(len(cfg.lstm_sizes)):
        seq = lstm_layer(seq, params[f"lstm{i}.w_input"], params[f"lstm{i}.w_hidden"], params[f"lstm{i}.bias"])
    h = seq[-1]
    if cfg.mlp_size:
        h = ad.relu(ad.bias_add(ad.matmul(h, params["mlp.weight"]), params["mlp.bias"]))
    logit = ad.bias_add(ad.matmul(h, params["out.weight"]), params["out.bias"])
    return ad.sigmoid(ad.reshape(logit, (batch.shape[0],)))


def predict_proba(params: ModelParams, batch: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Untaped forward pass in chunks."""
    batch = np.asarray(batch)
    out = np.empty(len(batch))
    with ad.no_grad():
        for start in range(0, len(batch), batch_size):
            out[start : start + batch_size] = forward(params, batch[start : start + batch_size]).data
    return out


# ------------------------------------------------------------------ model file
#
# layout: MAGIC | u32 version | u32 text_len | text (utf-8 key = value lines:
# model config, then "meta." entries) | u32 n_params | per param:
# u16 name_len, name, u8 ndim, u32 dims..., <f8 data | sha256 of all prior bytes


def save(params: ModelParams, path, metadata: Mapping[str, str] | None = None) -> None:
    text = params.config.to_text()
    for k, v in (metadata or {}).items():
        if "\n" in str(v) or "=" in str(k):
            raise ValueError(f"metadata entry {k!r} cannot be stored as one key = value line")
        text += f"meta.{k} = {v}\n"
    buf = io.BytesIO()
    raw = text.encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        nb = name.encode("ascii")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load(path, expected: ModelConfig | None = None) -> tuple[ModelParams, dict[str, str]]:
    """Read a model file; returns the parameters and the stored metadata."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise ModelFileError(f"{path}: not a model file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFileError(f"{path}: checksum mismatch, file is corrupt")
    pos = len(MAGIC)
    version, text_len = struct.unpack_from("<II", body, pos)
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{path}: format version {version}, this reader supports {FORMAT_VERSION}")
    pos += 8
    text = body[pos : pos + text_len].decode("utf-8")
    pos += text_len
    config = ModelConfig.from_text(text)
    if expected is not None and expected != config:
        raise ModelConfigError(f"{path}: stored config {config} does not match expected {expected}")
    metadata = {k[5:]: v for k, v in _parse_kv(text).items() if k.startswith("meta.")}
    (n_params,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arrays = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + name_len].decode("ascii")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    return ModelParams.from_arrays(config, arrays), metadata
