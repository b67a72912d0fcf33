"""The two encoders of the joint embedding space.

Text: token embedding -> three width-3 convolutions at the embedding width
-> a fourth expanding to twice the width -> masked GRU (last valid hidden
state) -> two dense layers -> L2 normalization.

Shape: seven 3-d convolutions (four shape-preserving at 4 channels, then a
stride-3 stack at 64/128/256 channels), 2x2x2 max pool, dense layer, L2
normalization. The stride-3 paddings (1, 1, 2) land the 16^3 input on 2^3
ahead of the pool.

Both forwards have exact reverse-mode counterparts used by the trainer.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import EncoderError
from .geometry import VoxelGrid


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    embed_dim: int = 128
    conv_channels: tuple[int, int, int, int] = (128, 128, 128, 256)
    gru_hidden: int = 256
    fc_hidden: int = 256
    out_dim: int = 128
    max_len: int = 256

    def __post_init__(self):
        if self.vocab_size < 2:
            raise EncoderError("vocab_size must be at least 2 (PAD and UNK)")
        if len(self.conv_channels) != 4:
            raise EncoderError("the text encoder has exactly four convolution layers")


@dataclass(frozen=True)
class ShapeEncoderConfig:
    resolution: int = 16
    num_conv_layers: int = 7
    front_channels: int = 4
    back_channels: tuple[int, int, int] = (64, 128, 256)
    out_dim: int = 128

    _BACK_PADS = (1, 1, 2)

    def __post_init__(self):
        if not 3 <= self.num_conv_layers <= 7:
            raise EncoderError("num_conv_layers must be between 3 and 7")
        if self.resolution != 16:
            raise EncoderError("the shape encoder is laid out for 16^3 grids")
        if len(self.back_channels) != 3:
            raise EncoderError("the stride-3 stack has exactly three layers")

    def layer_plan(self):
        """(in_channels, out_channels, stride, pad) per convolution layer."""
        plan = []
        channels = 1
        for _ in range(self.num_conv_layers - 3):
            plan.append((channels, self.front_channels, 1, 1))
            channels = self.front_channels
        for out_channels, pad in zip(self.back_channels, self._BACK_PADS):
            plan.append((channels, out_channels, 3, pad))
            channels = out_channels
        return plan

    def spatial_trace(self):
        """Cube edge length after each convolution, then after the pool."""
        size = self.resolution
        sizes = []
        for _, _, stride, pad in self.layer_plan():
            size = (size + 2 * pad - 3) // stride + 1
            sizes.append(size)
        return sizes, sizes[-1] - 1


@dataclass
class TextEncoderParams:
    config: TextEncoderConfig
    embed: np.ndarray
    conv_w: list[np.ndarray]
    conv_b: list[np.ndarray]
    gru_w_ih: np.ndarray
    gru_w_hh: np.ndarray
    gru_b_ih: np.ndarray
    gru_b_hh: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def named_arrays(self):
        items = [("embed", self.embed)]
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            items += [(f"conv{i}_w", w), (f"conv{i}_b", b)]
        items += [("gru_w_ih", self.gru_w_ih), ("gru_w_hh", self.gru_w_hh),
                  ("gru_b_ih", self.gru_b_ih), ("gru_b_hh", self.gru_b_hh),
                  ("fc1_w", self.fc1_w), ("fc1_b", self.fc1_b),
                  ("fc2_w", self.fc2_w), ("fc2_b", self.fc2_b)]
        return items

    def param_count(self):
        return sum(a.size for _, a in self.named_arrays())

    def astype(self, dtype):
        return _cast(self, dtype)


@dataclass
class ShapeEncoderParams:
    config: ShapeEncoderConfig
    conv_w: list[np.ndarray]
    conv_b: list[np.ndarray]
    fc_w: np.ndarray
    fc_b: np.ndarray

    def named_arrays(self):
        items = []
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            items += [(f"conv{i}_w", w), (f"conv{i}_b", b)]
        items += [("fc_w", self.fc_w), ("fc_b", self.fc_b)]
        return items

    def param_count(self):
        return sum(a.size for _, a in self.named_arrays())

    def astype(self, dtype):
        return _cast(self, dtype)


def _cast(params, dtype):
    def conv(value):
        if isinstance(value, np.ndarray):
            return value.astype(dtype)
        if isinstance(value, list):
            return [conv(v) for v in value]
        return value

    kwargs = {k: conv(v) for k, v in params.__dict__.items()}
    return type(params)(**kwargs)


def set_named_array(params, name, value):
    """Replace one named parameter array in place (for optimizers/tests)."""
    match = re.match(r"conv(\d+)_([wb])$", name)
    if match:
        target = params.conv_w if match.group(2) == "w" else params.conv_b
        target[int(match.group(1)) - 1] = value
        return
    setattr(params, name, value)


# ---------------------------------------------------------------------------
# initialization

def _uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_text_params(config: TextEncoderConfig, rng, dtype=np.float32) -> TextEncoderParams:
    e = config.embed_dim
    # a lookup has a single active input, so fan_in is 1 (table entries U(-1, 1))
    embed = _uniform(rng, (config.vocab_size, e), 1, dtype)
    conv_w, conv_b = [], []
    cin = e
    for cout in config.conv_channels:
        conv_w.append(_uniform(rng, (cout, cin, 3), cin * 3, dtype))
        conv_b.append(np.zeros(cout, dtype=dtype))
        cin = cout
    h = config.gru_hidden
    x_dim = config.conv_channels[-1]
    return TextEncoderParams(
        config, embed, conv_w, conv_b,
        gru_w_ih=_uniform(rng, (3 * h, x_dim), x_dim, dtype),
        gru_w_hh=_uniform(rng, (3 * h, h), h, dtype),
        gru_b_ih=np.zeros(3 * h, dtype=dtype),
        gru_b_hh=np.zeros(3 * h, dtype=dtype),
        fc1_w=_uniform(rng, (config.fc_hidden, h), h, dtype),
        fc1_b=np.zeros(config.fc_hidden, dtype=dtype),
        fc2_w=_uniform(rng, (config.out_dim, config.fc_hidden), config.fc_hidden, dtype),
        fc2_b=np.zeros(config.out_dim, dtype=dtype))


def init_shape_params(config: ShapeEncoderConfig, rng, dtype=np.float32) -> ShapeEncoderParams:
    conv_w, conv_b = [], []
    for cin, cout, _, _ in config.layer_plan():
        conv_w.append(_uniform(rng, (cout, cin, 3, 3, 3), cin * 27, dtype))
        conv_b.append(np.zeros(cout, dtype=dtype))
    flat = config.back_channels[-1]
    return ShapeEncoderParams(
        config, conv_w, conv_b,
        fc_w=_uniform(rng, (config.out_dim, flat), flat, dtype),
        fc_b=np.zeros(config.out_dim, dtype=dtype))


def init_params(vocab_size: int, seed: int,
                text_config: TextEncoderConfig | None = None,
                shape_config: ShapeEncoderConfig | None = None,
                dtype=np.float32):
    """Seeded initialization of both encoders: weights uniform within
    +-sqrt(1/fan_in) per layer, biases zero."""
    rng = np.random.default_rng(seed)
    text_config = text_config or TextEncoderConfig(vocab_size)
    if text_config.vocab_size != vocab_size:
        raise EncoderError("text_config.vocab_size disagrees with vocab_size")
    shape_config = shape_config or ShapeEncoderConfig()
    return (init_text_params(text_config, rng, dtype),
            init_shape_params(shape_config, rng, dtype))


# ---------------------------------------------------------------------------
# text pipeline

def _token_matrix(tokens, lengths, config):
    ids = np.ascontiguousarray(tokens, dtype=np.int64)
    if ids.ndim != 2:
        raise EncoderError("token batch must be (batch, length)")
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    if (ids < 0).any() or (ids >= config.vocab_size).any():
        bad = int(ids.max())
        raise EncoderError(f"token id {bad} out of range for vocabulary "
                           f"of size {config.vocab_size}")
    # regions past every sample's length cannot influence the embedding:
    # keep a 3-token margin so the four width-3 convolutions see identical
    # neighborhoods as in the full-length evaluation
    keep = int(min(ids.shape[1], max(1, lengths.max() + 4)))
    return ids[:, :keep], lengths


def text_apply(params: TextEncoderParams, tokens, lengths, with_cache=False):
    ids, lengths = _token_matrix(tokens, lengths, params.config)
    caches = []
    x, c = nn.embedding_forward(ids, lengths, params.embed)
    caches.append(("embed", c))
    for i, (w, b) in enumerate(zip(params.conv_w, params.conv_b)):
        x, c = nn.conv1d_forward(x, w, b)
        caches.append((f"conv{i}", c))
        x, c = nn.relu_forward(x)
        caches.append((f"relu{i}", c))
    h, c = nn.gru_forward(x, lengths, params.gru_w_ih, params.gru_w_hh,
                          params.gru_b_ih, params.gru_b_hh, want_trace=with_cache)
    caches.append(("gru", c))
    y, c = nn.linear_forward(h, params.fc1_w, params.fc1_b)
    caches.append(("fc1", c))
    y, c = nn.relu_forward(y)
    caches.append(("fc1_relu", c))
    y, c = nn.linear_forward(y, params.fc2_w, params.fc2_b)
    caches.append(("fc2", c))
    y, c = nn.l2_normalize_forward(y)
    caches.append(("norm", c))
    if not np.isfinite(y).all():
        raise EncoderError("text encoder produced a non-finite embedding")
    return (y, caches) if with_cache else (y, None)


def text_forward(params: TextEncoderParams, tokens, lengths) -> np.ndarray:
    """Embed a token batch; rows are unit norm."""
    return text_apply(params, tokens, lengths)[0]


def text_backward(params: TextEncoderParams, caches, d_emb) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    stack = list(caches)
    dy = d_emb
    dy = nn.l2_normalize_backward(stack.pop()[1], dy)
    dy, grads["fc2_w"], grads["fc2_b"] = nn.linear_backward(stack.pop()[1], dy)
    dy = nn.relu_backward(stack.pop()[1], dy)
    dy, grads["fc1_w"], grads["fc1_b"] = nn.linear_backward(stack.pop()[1], dy)
    (dy, grads["gru_w_ih"], grads["gru_w_hh"],
     grads["gru_b_ih"], grads["gru_b_hh"]) = nn.gru_backward(stack.pop()[1], dy)
    for i in range(len(params.conv_w) - 1, -1, -1):
        dy = nn.relu_backward(stack.pop()[1], dy)
        dy, grads[f"conv{i + 1}_w"], grads[f"conv{i + 1}_b"] = nn.conv1d_backward(
            stack.pop()[1], dy)
    grads["embed"] = nn.embedding_backward(stack.pop()[1], dy)
    return grads


# ---------------------------------------------------------------------------
# shape pipeline

def _grid_batch(grids, config, dtype):
    if isinstance(grids, np.ndarray):
        batch = grids
    else:
        arrays = []
        for g in grids:
            arrays.append(g.occupancy if isinstance(g, VoxelGrid) else np.asarray(g))
        batch = np.stack(arrays)
    n = config.resolution
    if batch.ndim != 4 or batch.shape[1:] != (n, n, n):
        raise EncoderError(f"shape batch must be (batch, {n}, {n}, {n}), "
                           f"got {batch.shape}")
    return batch.astype(dtype)[..., None]


def shape_apply(params: ShapeEncoderParams, grids, with_cache=False):
    dtype = params.fc_w.dtype
    x = _grid_batch(grids, params.config, dtype)
    caches = []
    for i, ((w, b), (_, _, stride, pad)) in enumerate(
            zip(zip(params.conv_w, params.conv_b), params.config.layer_plan())):
        x, c = nn.conv3d_forward(x, w, b, stride, pad)
        caches.append((f"conv{i}", c))
        x, c = nn.relu_forward(x)
        caches.append((f"relu{i}", c))
    x, c = nn.maxpool3d_forward(x)
    caches.append(("pool", c))
    flat = x.reshape(x.shape[0], -1)
    caches.append(("flatten", x.shape))
    y, c = nn.linear_forward(flat, params.fc_w, params.fc_b)
    caches.append(("fc", c))
    y, c = nn.l2_normalize_forward(y)
    caches.append(("norm", c))
    if not np.isfinite(y).all():
        raise EncoderError("shape encoder produced a non-finite embedding")
    return (y, caches) if with_cache else (y, None)


def shape_forward(params: ShapeEncoderParams, grids) -> np.ndarray:
    """Embed a batch of 16^3 grids; rows are unit norm."""
    return shape_apply(params, grids)[0]


def shape_backward(params: ShapeEncoderParams, caches, d_emb) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    stack = list(caches)
    dy = nn.l2_normalize_backward(stack.pop()[1], d_emb)
    dy, grads["fc_w"], grads["fc_b"] = nn.linear_backward(stack.pop()[1], dy)
    dy = dy.reshape(stack.pop()[1])
    dy = nn.maxpool3d_backward(stack.pop()[1], dy)
    for i in range(len(params.conv_w) - 1, -1, -1):
        dy = nn.relu_backward(stack.pop()[1], dy)
        dy, grads[f"conv{i + 1}_w"], grads[f"conv{i + 1}_b"] = nn.conv3d_backward(
            stack.pop()[1], dy)
    return grads


# ---------------------------------------------------------------------------
# checkpoints: one JSON metadata line + concatenated little-endian float32
# blobs, offsets recorded per parameter

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    text: TextEncoderParams
    shape: ShapeEncoderParams
    vocab_words: dict[str, int]
    meta: dict = field(default_factory=dict)
    fingerprint: str = ""


def _config_json(config):
    data = {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in config.__dict__.items()}
    return data


def checkpoint_bytes(text: TextEncoderParams, shape: ShapeEncoderParams,
                     vocab_words: dict[str, int], meta: dict | None = None) -> bytes:
    entries = []
    blob = bytearray()  # parameter blobs concatenated in declared order
    for owner, params in (("text", text), ("shape", shape)):
        for name, array in params.named_arrays():
            data = np.ascontiguousarray(array, dtype="<f4").tobytes()
            entries.append({"name": f"{owner}.{name}", "shape": list(array.shape),
                            "offset": len(blob), "nbytes": len(data)})
            blob.extend(data)
    header = {
        "format": "rodfind-checkpoint",
        "version": CHECKPOINT_VERSION,
        "text_config": _config_json(text.config),
        "shape_config": _config_json(shape.config),
        "vocab": vocab_words,
        "meta": meta or {},
        "params": entries,
    }
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + bytes(blob)


def save_checkpoint(path, text, shape, vocab_words, meta=None) -> str:
    data = checkpoint_bytes(text, shape, vocab_words, meta)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    return parse_checkpoint(data)


def parse_checkpoint(data: bytes) -> Checkpoint:
    newline = data.find(b"\n")
    if newline < 0:
        raise EncoderError("checkpoint is missing its metadata line")
    header = json.loads(data[:newline].decode("utf-8"))
    if header.get("format") != "rodfind-checkpoint":
        raise EncoderError("not a rodfind checkpoint")
    blob = data[newline + 1:]

    text_config = TextEncoderConfig(**{
        k: (tuple(v) if isinstance(v, list) else v)
        for k, v in header["text_config"].items()})
    shape_config = ShapeEncoderConfig(**{
        k: (tuple(v) if isinstance(v, list) else v)
        for k, v in header["shape_config"].items()})
    rng = np.random.default_rng(0)
    text = init_text_params(text_config, rng)
    shape = init_shape_params(shape_config, rng)

    arrays = {}
    for entry in header["params"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise EncoderError(f"checkpoint blob truncated at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(
            entry["shape"]).copy()
    for owner, params in (("text", text), ("shape", shape)):
        for name, array in params.named_arrays():
            key = f"{owner}.{name}"
            if key not in arrays:
                raise EncoderError(f"checkpoint missing parameter {key}")
            if tuple(arrays[key].shape) != array.shape:
                raise EncoderError(f"checkpoint parameter {key} has shape "
                                   f"{arrays[key].shape}, expected {array.shape}")
            set_named_array(params, name, arrays[key])
    return Checkpoint(text, shape, header["vocab"], header.get("meta", {}),
                      hashlib.sha256(data).hexdigest())
