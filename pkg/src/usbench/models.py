"""Classifiers built from declarative specs.

Two families are supported:

* :class:`ViTSpec` - patch-based vision transformer with fixed 2-D
  sinusoidal position embeddings, pre-norm encoder blocks, mean pooling over
  patches and a single linear head.
* :class:`CNNSpec` - an ordered stack of 1-D conv / pool / relu / dropout /
  flatten / dense layers.

Every model exposes its trainable tensors as an ordered ``name -> Tensor``
mapping; :func:`param_count` sums them, while :func:`count_parameters`
derives the same number from the spec alone.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import SpecError
from .rng import make_rng

# Ultra-Pro frames: 8 transducers, 960 samples after trimming
ULTRA_PRO_INPUT = (8, 960)


@dataclass
class ViTSpec:
    patch_height: int
    patch_width: int
    pe_dimension: int
    heads: int
    encoder_blocks: int
    ffn_mul: int = 1
    dropout: float = 0.0
    classes: int = 6
    kind: str = field(default="vit", init=False)

    def problems(self, input_shape) -> list[str]:
        c, length = input_shape
        out = []
        for name in ("patch_height", "patch_width", "pe_dimension", "heads", "encoder_blocks", "ffn_mul", "classes"):
            if int(getattr(self, name)) < 1:
                out.append(f"{name} must be a positive integer")
        if out:
            return out
        if c % self.patch_height:
            out.append(f"input channels {c} not divisible by patch_height {self.patch_height}")
        if length % self.patch_width:
            out.append(f"input length {length} not divisible by patch_width {self.patch_width}")
        if self.pe_dimension % self.heads:
            out.append(f"pe_dimension {self.pe_dimension} not divisible by heads {self.heads}")
        if self.pe_dimension % 4:
            out.append(f"pe_dimension {self.pe_dimension} must be a multiple of 4 for 2-D sin/cos embeddings")
        if not 0 <= self.dropout < 1:
            out.append(f"dropout {self.dropout} outside [0, 1)")
        return out


# --- CNN layer vocabulary ------------------------------------------------------


@dataclass
class Conv1d:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    op: str = field(default="conv1d", init=False)


@dataclass
class MaxPool1d:
    width: int
    stride: Optional[int] = None
    op: str = field(default="max_pool1d", init=False)


@dataclass
class ReLU:
    op: str = field(default="relu", init=False)


@dataclass
class Dropout:
    rate: float
    op: str = field(default="dropout", init=False)


@dataclass
class Flatten:
    op: str = field(default="flatten", init=False)


@dataclass
class Dense:
    out_features: int
    op: str = field(default="dense", init=False)


Layer = Union[Conv1d, MaxPool1d, ReLU, Dropout, Flatten, Dense]
_LAYERS = {cls.__dataclass_fields__["op"].default: cls for cls in (Conv1d, MaxPool1d, ReLU, Dropout, Flatten, Dense)}


@dataclass
class CNNSpec:
    layers: list
    classes: int = 6
    kind: str = field(default="cnn", init=False)

    def problems(self, input_shape) -> list[str]:
        try:
            _walk_cnn(self, input_shape)
        except SpecError as exc:
            return [str(exc)]
        return []


ModelSpec = Union[ViTSpec, CNNSpec]


def udacnn_ref(classes: int = 6) -> CNNSpec:
    """Four-conv stand-in sized to 50,584 trainable parameters on 8 x 960 input."""
    return CNNSpec(
        layers=[
            Conv1d(8, 9, stride=4),
            ReLU(),
            MaxPool1d(2),
            Conv1d(16, 3),
            ReLU(),
            MaxPool1d(2),
            Conv1d(16, 7),
            ReLU(),
            MaxPool1d(2),
            Conv1d(24, 3),
            ReLU(),
            MaxPool1d(2),
            Flatten(),
            Dropout(0.2),
            Dense(158),
            ReLU(),
            Dense(classes),
        ],
        classes=classes,
    )


def usvit(classes: int = 6, ffn_mul: int = 1) -> ViTSpec:
    """Best ViT configuration of the tuning study; ``ffn_mul`` was not reported."""
    return ViTSpec(
        patch_height=2, patch_width=480, pe_dimension=256, heads=16, encoder_blocks=3,
        ffn_mul=ffn_mul, dropout=0.1, classes=classes,
    )


# --- serialisation -------------------------------------------------------------


def spec_to_dict(spec: ModelSpec) -> dict:
    if isinstance(spec, CNNSpec):
        return {"kind": "cnn", "classes": spec.classes, "layers": [asdict(layer) for layer in spec.layers]}
    return asdict(spec)


def spec_from_dict(d: dict) -> ModelSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "vit":
        return ViTSpec(**d)
    if kind == "cnn":
        layers = []
        for i, entry in enumerate(d.get("layers", [])):
            entry = dict(entry)
            op = entry.pop("op", None)
            if op not in _LAYERS:
                raise SpecError(f"layer {i}: unknown op {op!r}")
            layers.append(_LAYERS[op](**entry))
        return CNNSpec(layers=layers, classes=int(d.get("classes", 6)))
    raise SpecError(f"unknown model kind {kind!r}")


def save_spec(spec: ModelSpec, path):
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")


def load_spec(path) -> ModelSpec:
    return spec_from_dict(json.loads(Path(path).read_text()))


def named_spec(name: str, classes: int = 6) -> ModelSpec:
    """Shipped specs by name (``udacnn_ref`` or ``usvit``)."""
    if name == "udacnn_ref":
        return udacnn_ref(classes)
    if name == "usvit":
        return usvit(classes)
    raise SpecError(f"no shipped model spec named {name!r}")


# --- analytic parameter counts ---------------------------------------------------


def _walk_cnn(spec: CNNSpec, input_shape):
    """Yield (layer index, layer, in shape, out shape, n params); raise on the first illegal layer."""
    shape = tuple(input_shape)
    steps = []
    if not spec.layers:
        raise SpecError("layer 0: empty layer list")
    for i, layer in enumerate(spec.layers):
        n = 0
        if isinstance(layer, Conv1d):
            if len(shape) != 2:
                raise SpecError(f"layer {i} (conv1d): needs (C, L) input, got {shape}")
            c, length = shape
            lout = (length + 2 * layer.padding - layer.kernel) // max(layer.stride, 1) + 1
            if layer.out_channels < 1 or layer.kernel < 1 or layer.stride < 1 or layer.padding < 0 or lout < 1:
                raise SpecError(f"layer {i} (conv1d): illegal for input {shape}")
            n = layer.out_channels * c * layer.kernel + layer.out_channels
            out = (layer.out_channels, lout)
        elif isinstance(layer, MaxPool1d):
            stride = layer.width if layer.stride is None else layer.stride
            if len(shape) != 2 or layer.width < 1 or stride < 1 or shape[1] < layer.width:
                raise SpecError(f"layer {i} (max_pool1d): width {layer.width} illegal for input {shape}")
            out = (shape[0], (shape[1] - layer.width) // stride + 1)
        elif isinstance(layer, (ReLU, Dropout)):
            if isinstance(layer, Dropout) and not 0 <= layer.rate < 1:
                raise SpecError(f"layer {i} (dropout): rate {layer.rate} outside [0, 1)")
            out = shape
        elif isinstance(layer, Flatten):
            out = (int(np.prod(shape)),)
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise SpecError(f"layer {i} (dense): needs flattened input, got {shape}")
            if layer.out_features < 1:
                raise SpecError(f"layer {i} (dense): out_features must be positive")
            n = shape[0] * layer.out_features + layer.out_features
            out = (layer.out_features,)
        else:
            raise SpecError(f"layer {i}: unsupported layer {layer!r}")
        steps.append((i, layer, shape, out, n))
        shape = out
    last = spec.layers[-1]
    if not isinstance(last, Dense) or last.out_features != spec.classes:
        raise SpecError(f"layer {len(spec.layers) - 1}: final layer must be dense({spec.classes})")
    return steps


def count_parameters(spec: ModelSpec, input_shape) -> int:
    """Trainable parameter count from the spec alone."""
    if isinstance(spec, CNNSpec):
        return sum(step[-1] for step in _walk_cnn(spec, input_shape))
    c, length = input_shape
    d, hidden = spec.pe_dimension, spec.ffn_mul * spec.pe_dimension
    patch = spec.patch_height * spec.patch_width
    # q, v and out projections carry a bias; k does not (see ViT)
    per_block = 2 * (2 * d) + 4 * d * d + 3 * d + (d * hidden + hidden) + (hidden * d + d)
    return (patch * d + d) + spec.encoder_blocks * per_block + (d * spec.classes + spec.classes)


# --- models ----------------------------------------------------------------------


def _uniform(rng, fan_in, shape, relu: bool = False):
    """Fan-in scaled uniform: variance 2/fan_in ahead of a relu (He), 1/fan_in otherwise."""
    bound = np.sqrt((6.0 if relu else 3.0) / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _feeds_relu(layers, i) -> bool:
    for layer in layers[i + 1 :]:
        if isinstance(layer, ReLU):
            return True
        if isinstance(layer, (Conv1d, Dense)):
            return False
    return False


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape):
    return Tensor(np.ones(shape), requires_grad=True)


class Model:
    """Parameter container plus a forward function mapping ``(N, C, L)`` to logits."""

    def __init__(self, spec: ModelSpec, input_shape, params: dict):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def __call__(self, x, train: bool = False, rng=None) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != self.input_shape:
            raise SpecError(f"model expects input (N, {self.input_shape[0]}, {self.input_shape[1]}), got {x.shape}")
        return self.forward(x, train, rng)

    def forward(self, x: Tensor, train: bool, rng) -> Tensor:
        raise NotImplementedError

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict):
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise SpecError(f"checkpoint parameter names differ: {sorted(missing)}")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise SpecError(f"parameter {k}: checkpoint shape {v.shape} != model shape {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)


class CNN(Model):
    def __init__(self, spec: CNNSpec, input_shape, rng):
        steps = _walk_cnn(spec, input_shape)
        params = {}
        for i, layer, shape_in, _, _ in steps:
            if isinstance(layer, Conv1d):
                fan_in = shape_in[0] * layer.kernel
                params[f"{i}.weight"] = _uniform(rng, fan_in, (layer.out_channels, shape_in[0], layer.kernel),
                                                 relu=_feeds_relu(spec.layers, i))
                params[f"{i}.bias"] = _zeros((layer.out_channels,))
            elif isinstance(layer, Dense):
                params[f"{i}.weight"] = _uniform(rng, shape_in[0], (shape_in[0], layer.out_features),
                                                 relu=_feeds_relu(spec.layers, i))
                params[f"{i}.bias"] = _zeros((layer.out_features,))
        super().__init__(spec, input_shape, params)

    def forward(self, x, train, rng):
        p = self.params
        for i, layer in enumerate(self.spec.layers):
            if isinstance(layer, Conv1d):
                x = ad.conv1d(x, p[f"{i}.weight"], p[f"{i}.bias"], layer.stride, layer.padding)
            elif isinstance(layer, MaxPool1d):
                x = ad.max_pool1d(x, layer.width, layer.stride)
            elif isinstance(layer, ReLU):
                x = ad.relu(x)
            elif isinstance(layer, Dropout):
                x = ad.dropout(x, layer.rate, train, rng)
            elif isinstance(layer, Flatten):
                x = ad.reshape(x, (x.shape[0], -1))
            elif isinstance(layer, Dense):
                x = ad.dense(x, p[f"{i}.weight"], p[f"{i}.bias"])
        return x


def sinusoidal_2d(rows: int, cols: int, dim: int) -> np.ndarray:
    """Fixed ``(rows*cols, dim)`` embedding: row index in the first half, column in the second.

    Within each half, pair ``k`` holds ``sin(pos * w_k), cos(pos * w_k)`` with
    ``w_k = 10000 ** (-2k / half)``.
    """
    half = dim // 2

    def ladder(n):
        pos = np.arange(n, dtype=np.float64)[:, None]
        w = 10000.0 ** (-np.arange(0, half, 2, dtype=np.float64) / half)
        out = np.empty((n, half))
        out[:, 0::2] = np.sin(pos * w)
        out[:, 1::2] = np.cos(pos * w)
        return out

    r, c = ladder(rows), ladder(cols)
    grid_r = np.repeat(r, cols, axis=0)
    grid_c = np.tile(c, (rows, 1))
    return np.concatenate([grid_r, grid_c], axis=1)


class ViT(Model):
    def __init__(self, spec: ViTSpec, input_shape, rng):
        c, length = input_shape
        d, hidden = spec.pe_dimension, spec.ffn_mul * spec.pe_dimension
        patch = spec.patch_height * spec.patch_width
        self.grid = (c // spec.patch_height, length // spec.patch_width)
        self.pos_embedding = sinusoidal_2d(*self.grid, d)
        params = {
            "embed.weight": _uniform(rng, patch, (patch, d)),
            "embed.bias": _zeros((d,)),
        }
        for b in range(spec.encoder_blocks):
            pre = f"block{b}."
            params[pre + "ln1.gamma"] = _ones((d,))
            params[pre + "ln1.beta"] = _zeros((d,))
            for name in ("q", "k", "v", "out"):
                params[pre + f"{name}.weight"] = _uniform(rng, d, (d, d))
                # a key bias shifts every score of a query equally, so softmax cancels it
                if name != "k":
                    params[pre + f"{name}.bias"] = _zeros((d,))
            params[pre + "ln2.gamma"] = _ones((d,))
            params[pre + "ln2.beta"] = _zeros((d,))
            params[pre + "ffn1.weight"] = _uniform(rng, d, (d, hidden), relu=True)
            params[pre + "ffn1.bias"] = _zeros((hidden,))
            params[pre + "ffn2.weight"] = _uniform(rng, hidden, (hidden, d))
            params[pre + "ffn2.bias"] = _zeros((d,))
        params["head.weight"] = _uniform(rng, d, (d, spec.classes))
        params["head.bias"] = _zeros((spec.classes,))
        super().__init__(spec, input_shape, params)

    def patchify(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        ph, pw = self.spec.patch_height, self.spec.patch_width
        gr, gc = self.grid
        x = ad.reshape(x, (n, gr, ph, gc, pw))
        x = ad.transpose(x, (0, 1, 3, 2, 4))
        return ad.reshape(x, (n, gr * gc, ph * pw))

    def forward(self, x, train, rng):
        p, s = self.params, self.spec
        h = ad.dense(self.patchify(x), p["embed.weight"], p["embed.bias"])
        h = ad.add(h, self.pos_embedding)
        h = ad.dropout(h, s.dropout, train, rng)
        for b in range(s.encoder_blocks):
            pre = f"block{b}."
            z = ad.layer_norm(h, p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
            q = ad.dense(z, p[pre + "q.weight"], p[pre + "q.bias"])
            k = ad.dense(z, p[pre + "k.weight"])
            v = ad.dense(z, p[pre + "v.weight"], p[pre + "v.bias"])
            a = ad.scaled_dot_product_attention(q, k, v, s.heads)
            a = ad.dense(a, p[pre + "out.weight"], p[pre + "out.bias"])
            h = ad.add(h, ad.dropout(a, s.dropout, train, rng))
            z = ad.layer_norm(h, p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
            z = ad.relu(ad.dense(z, p[pre + "ffn1.weight"], p[pre + "ffn1.bias"]))
            z = ad.dense(z, p[pre + "ffn2.weight"], p[pre + "ffn2.bias"])
            h = ad.add(h, ad.dropout(z, s.dropout, train, rng))
        pooled = ad.mean(h, axis=1)
        return ad.dense(pooled, p["head.weight"], p["head.bias"])


def build_vit(spec: ViTSpec, input_shape=ULTRA_PRO_INPUT, seed=0) -> ViT:
    problems = spec.problems(input_shape)
    if problems:
        raise SpecError("; ".join(problems))
    return ViT(spec, input_shape, make_rng(seed))


def build_cnn(spec: CNNSpec, input_shape=ULTRA_PRO_INPUT, seed=0) -> CNN:
    return CNN(spec, input_shape, make_rng(seed))


def build_model(spec: ModelSpec, input_shape=ULTRA_PRO_INPUT, seed=0) -> Model:
    if isinstance(spec, ViTSpec):
        return build_vit(spec, input_shape, seed)
    return build_cnn(spec, input_shape, seed)


def param_count(model: Model) -> int:
    return int(sum(t.size for t in model.parameters()))
