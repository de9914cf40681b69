"""Two-branch answer classifier.

The main path fuses a question embedding with a visual embedding through
a projected elementwise product followed by a small MLP.  A question-only
head reads a detached copy of the question embedding, so its loss can
never push gradients into the shared encoders; that one-way wall is what
lets the head act as a pure bias probe.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import rng
from .autodiff import Parameter, Tensor, embedding_mean, linear, multiply, relu, reshape
from .errors import ConfigError, DataFormatError, ShapeError

_CHECKPOINT_MAGIC = b"DBVQCKPT"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and seed for one model instance.

    The joint fusion space uses ``hidden_dim``; the question-only head is
    a 3-layer MLP of width ``qo_hidden_dim``.  Defaults are deliberately
    tight: with capacity to spare the main path just learns the visual
    mapping outright and no loss reweighting is ever needed.
    """
    vocab_size: int
    num_answers: int
    embed_dim: int = 16
    q_dim: int = 16
    v_in_dim: int = 16
    v_dim: int = 8
    hidden_dim: int = 24
    qo_hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "seed":
                continue
            value = getattr(self, f.name)
            if value <= 0:
                raise ConfigError(f"{f.name} must be positive, got {value}")
        if self.num_answers < 2:
            raise ConfigError(f"num_answers must be at least 2, got {self.num_answers}")

    @property
    def joint_dim(self) -> int:
        return self.hidden_dim


class VqaModelParams:
    """All trainable parameters, grouped by role.

    ``encoder_parameters`` covers everything the main answer path trains
    (embeddings, both encoders, fusion); ``qo_parameters`` is the
    question-only head.  The parameter order is fixed and shared by the
    optimizer and the checkpoint format.
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self._params: dict[str, Parameter] = {
            name: Parameter(array, name=name) for name, array in tensors.items()
        }
        expected = set(_parameter_shapes(config))
        if set(self._params) != expected:
            missing = expected - set(self._params)
            extra = set(self._params) - expected
            raise ConfigError(f"parameter set mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, shape in _parameter_shapes(config).items():
            got = self._params[name].data.shape
            if got != shape:
                raise ShapeError(f"parameter {name}: expected shape {shape}, got {got}")

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(_parameter_shapes(self.config))

    def all_parameters(self) -> list[Parameter]:
        return [self._params[n] for n in self.names()]

    def encoder_parameters(self) -> list[Parameter]:
        return [self._params[n] for n in self.names() if not n.startswith("qo_")]

    def qo_parameters(self) -> list[Parameter]:
        return [self._params[n] for n in self.names() if n.startswith("qo_")]


def _parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    c = config
    return {
        "token_embeddings": (c.vocab_size, c.embed_dim),
        "q_enc_w": (c.embed_dim, c.q_dim),
        "q_enc_b": (c.q_dim,),
        "v_enc_w": (c.v_in_dim, c.v_dim),
        "v_enc_b": (c.v_dim,),
        "fuse_proj_v": (c.v_dim, c.joint_dim),
        "fuse_proj_v_b": (c.joint_dim,),
        "fuse_proj_q": (c.q_dim, c.joint_dim),
        "fuse_w1": (c.joint_dim, c.hidden_dim),
        "fuse_b1": (c.hidden_dim,),
        "fuse_w2": (c.hidden_dim, c.num_answers),
        "fuse_b2": (c.num_answers,),
        "qo_w1": (c.q_dim, c.qo_hidden_dim),
        "qo_b1": (c.qo_hidden_dim,),
        "qo_w2": (c.qo_hidden_dim, c.qo_hidden_dim),
        "qo_b2": (c.qo_hidden_dim,),
        "qo_w3": (c.qo_hidden_dim, c.num_answers),
        "qo_b3": (c.num_answers,),
    }


def init_params(config: ModelConfig) -> VqaModelParams:
    """Seeded initialization: weights uniform in +-1/sqrt(fan_in), biases zero.

    Token embeddings use their own width as fan-in.  One pinned stream is
    consumed in fixed parameter order, so the same seed always yields
    bitwise-identical parameters.
    """
    gen = rng.uniform_stream(rng.mix_seed(config.seed, "init"))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in _parameter_shapes(config).items():
        if len(shape) == 1:  # every 1-D parameter is a bias
            tensors[name] = np.zeros(shape)
            continue
        fan_in = config.embed_dim if name == "token_embeddings" else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = (2.0 * rng.uniform(gen, int(np.prod(shape))) - 1.0).reshape(shape) * bound
    return VqaModelParams(config, tensors)


def _as_token_batch(tokens, vocab_size: int) -> tuple[np.ndarray, bool]:
    ids = np.asarray(tokens)
    if ids.size == 0:
        raise ShapeError("token sequence must be nonempty")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"token ids must be integers, got dtype {ids.dtype}")
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ShapeError(f"tokens must be a sequence or [B, T] batch, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ShapeError(f"token id out of vocabulary [0, {vocab_size}): min={ids.min()}, max={ids.max()}")
    return ids, single


def _as_feature_batch(feature, v_in_dim: int) -> tuple[Tensor, bool]:
    arr = np.asarray(feature, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != v_in_dim:
        raise ShapeError(f"visual feature must have length {v_in_dim}, got shape {np.asarray(feature).shape}")
    return Tensor(arr), single


def encode_question(tokens, params: VqaModelParams) -> Tensor:
    """Embed tokens, mean-pool, and project: [B, T] ids -> [B, q_dim].

    A single 1-D sequence yields a 1-D embedding.  Mean pooling makes the
    encoding order-invariant, which is all the template questions need.
    """
    ids, single = _as_token_batch(tokens, params.config.vocab_size)
    pooled = embedding_mean(params["token_embeddings"], ids)
    q = linear(pooled, params["q_enc_w"], params["q_enc_b"])
    return reshape(q, (params.config.q_dim,)) if single else q


def encode_visual(feature, params: VqaModelParams) -> Tensor:
    """Affine map plus ReLU: [B, v_in_dim] -> [B, v_dim]."""
    x, single = _as_feature_batch(feature, params.config.v_in_dim)
    v = relu(linear(x, params["v_enc_w"], params["v_enc_b"]))
    return reshape(v, (params.config.v_dim,)) if single else v


def _rows(t: Tensor, width: int, what: str) -> tuple[Tensor, bool]:
    if t.data.ndim == 1:
        if t.data.shape[0] != width:
            raise ShapeError(f"{what} must have length {width}, got {t.data.shape[0]}")
        return reshape(t, (1, width)), True
    if t.data.ndim != 2 or t.data.shape[1] != width:
        raise ShapeError(f"{what} must be [B, {width}], got shape {t.data.shape}")
    return t, False


def predict_vqa(v_emb: Tensor, q: Tensor, params: VqaModelParams) -> Tensor:
    """Answer logits from both modalities.

    The two embeddings are projected (bias-free) into a shared joint
    space and multiplied elementwise, so a zero question or zero image
    annihilates the joint vector; a 2-layer MLP maps the product to
    logits.
    """
    c = params.config
    v2, v_single = _rows(v_emb, c.v_dim, "visual embedding")
    q2, q_single = _rows(q, c.q_dim, "question embedding")
    if v2.data.shape[0] != q2.data.shape[0]:
        raise ShapeError(f"batch mismatch: visual {v2.data.shape[0]} vs question {q2.data.shape[0]}")
    # the question projection is bias-free so a zero question annihilates
    # the joint vector; the visual projection keeps a bias, which gives
    # the product a question-passthrough channel
    joint = multiply(linear(v2, params["fuse_proj_v"], params["fuse_proj_v_b"]),
                     linear(q2, params["fuse_proj_q"]))
    hidden = relu(linear(joint, params["fuse_w1"], params["fuse_b1"]))
    logits = linear(hidden, params["fuse_w2"], params["fuse_b2"])
    return reshape(logits, (c.num_answers,)) if (v_single and q_single) else logits


def predict_qo(q: Tensor, params: VqaModelParams) -> Tensor:
    """Question-only answer logits from a detached question embedding.

    The detach is a hard stop-gradient: any loss on these logits trains
    only the qo_* weights, and the gradient reaching the token embeddings
    and encoders through this path is exactly zero.
    """
    c = params.config
    q2, single = _rows(q, c.q_dim, "question embedding")
    h = q2.detach()
    h = relu(linear(h, params["qo_w1"], params["qo_b1"]))
    h = relu(linear(h, params["qo_w2"], params["qo_b2"]))
    logits = linear(h, params["qo_w3"], params["qo_b3"])
    return reshape(logits, (c.num_answers,)) if single else logits


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: VqaModelParams, path) -> None:
    """Write parameter values to a flat binary file.

    Layout: magic, version, config as JSON, then per tensor a name,
    shape, and raw little-endian float64 data in fixed parameter order.
    The format is free of timestamps, so identical parameters produce
    byte-identical files.
    """
    config_blob = json.dumps(
        {f.name: getattr(params.config, f.name) for f in fields(ModelConfig)},
        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", _CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        names = params.names()
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            data = np.ascontiguousarray(params[name].data)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}q", *data.shape))
            fh.write(data.astype("<f8").tobytes())


def load_checkpoint(path) -> VqaModelParams:
    """Read a checkpoint written by :func:`save_checkpoint`, bitwise."""
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise DataFormatError(f"checkpoint truncated at byte {pos} in {path}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(_CHECKPOINT_MAGIC))) != _CHECKPOINT_MAGIC:
        raise DataFormatError(f"not a checkpoint file: {path}")
    (version,) = struct.unpack("<I", take(4))
    if version != _CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version} in {path}")
    (config_len,) = struct.unpack("<I", take(4))
    try:
        config = ModelConfig(**json.loads(bytes(take(config_len)).decode("utf-8")))
    except (json.JSONDecodeError, TypeError) as exc:
        raise DataFormatError(f"bad checkpoint config in {path}: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}q", take(8 * ndim))
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * n_items), dtype="<f8").reshape(shape).copy()
        tensors[name] = data
    if pos != len(view):
        raise DataFormatError(f"trailing bytes in checkpoint {path}")
    return VqaModelParams(config, tensors)
