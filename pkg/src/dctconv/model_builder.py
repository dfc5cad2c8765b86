"""Declarative model construction and parameter auditing.

A :class:`ModelConfig` is an ordered list of :class:`LayerSpec` rows, each
expanding to one or more layers (``repeat`` covers "Conv2D x2" style rows).
Residual rows (``conv_block`` / ``ident_block``) expand to bottleneck blocks:
1x1, 3x3 and 1x1 convolutions, each followed by batch norm, summed with a
shortcut that is the identity (``ident_block``) or a strided 1x1 convolution
plus batch norm (``conv_block``).

Configs round-trip through JSON via :meth:`ModelConfig.to_dict` /
:meth:`ModelConfig.from_dict`.
"""

from __future__ import annotations

import copy
import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dct_conv import SpectralConv2D, SpectralPointwise
from .layers import (
    Activation,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool2D,
    MaxPool2D,
    Reshape,
    ResidualBlock,
    Sequential,
    UpSample2D,
    walk,
)
from .tensor_core import DimensionError

LAYER_KINDS = (
    "conv", "conv_transpose", "dense", "maxpool", "upsample", "global_avg_pool",
    "flatten", "reshape", "dropout", "conv_block", "ident_block",
)
SELECTIONS = ("none", "all", "only_3x3", "custom")


class ConfigError(ValueError):
    """Raised when a model config is malformed or shape-inconsistent."""


@dataclass
class LayerSpec:
    kind: str
    filters: int | list | None = None
    units: int | None = None
    size: int = 3
    stride: int | None = None
    padding: str = "same"
    activation: str | None = None
    norm: bool = False
    repeat: int = 1
    rate: float | None = None
    shape: list | None = None
    label: str | None = None
    spectral: bool | None = None
    p: float | None = None

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown layer spec fields {sorted(extra)} in {d}")
        if d.get("kind") not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {d.get('kind')!r}; expected one of {LAYER_KINDS}")
        return cls(**d)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None and v != LayerSpec.__dataclass_fields__[k].default or k == "kind"}


@dataclass
class SpectralSpec:
    """Which convolutions become spectral and how their masks are drawn."""

    selection: str = "none"
    p: float = 0.0
    mask_seed: int = 0
    mode: str = "orthonormal"
    layers: list = field(default_factory=list)

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"switch-off probability must be in [0, 1], got {self.p}")
        if self.mode not in ("orthonormal", "verbatim"):
            raise ConfigError(f"unknown transform mode {self.mode!r}")


@dataclass
class ModelConfig:
    name: str
    input_shape: tuple
    layers: list
    task: str = "classification"
    num_classes: int | None = None
    conv_init: str = "orthogonal"
    dense_init: str = "glorot_uniform"
    spectral: SpectralSpec = field(default_factory=SpectralSpec)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.layers = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in self.layers]
        if isinstance(self.spectral, dict):
            self.spectral = SpectralSpec(**self.spectral)
        if self.task not in ("classification", "autoencoder"):
            raise ConfigError(f"task must be 'classification' or 'autoencoder', got {self.task!r}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "task": self.task,
            "num_classes": self.num_classes,
            "conv_init": self.conv_init,
            "dense_init": self.dense_init,
            "spectral": asdict(self.spectral),
            "layers": [s.to_dict() for s in self.layers],
        }

    def with_spectral(self, selection, p=0.0, mask_seed=0, mode=None, layers=None) -> "ModelConfig":
        cfg = copy.deepcopy(self)
        cfg.spectral = SpectralSpec(
            selection, p, mask_seed, mode or self.spectral.mode,
            list(layers) if layers is not None else list(self.spectral.layers),
        )
        return cfg


def layer_mask_seed(mask_seed: int, layer_name: str) -> int:
    """Per-layer 64-bit mask seed derived from the run's mask seed and the layer name."""
    ss = np.random.SeedSequence([int(mask_seed), zlib.crc32(layer_name.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


class _Builder:
    def __init__(self, config: ModelConfig, rng):
        self.cfg = config
        self.rng = rng

    def _is_spectral(self, name, kernel, spec):
        s = self.cfg.spectral
        if s.selection == "all":
            return True
        if s.selection == "only_3x3":
            return kernel > 1
        if s.selection == "custom":
            return bool(spec.spectral) or name in s.layers
        return False

    def conv(self, name, cin, cout, kernel, stride, padding, transposed, spec):
        s = self.cfg.spectral
        kw = dict(stride=stride, padding=padding, transposed=transposed, initializer=self.cfg.conv_init)
        if self._is_spectral(name, kernel, spec):
            p = spec.p if spec.p is not None else s.p
            kw.update(p=p, mask_seed=layer_mask_seed(s.mask_seed, name), mode=s.mode)
            if kernel == 1:
                return SpectralPointwise(name, cin, cout, rng=self.rng, **kw)
            return SpectralConv2D(name, cin, cout, kernel, rng=self.rng, **kw)
        return Conv2D(name, cin, cout, kernel, rng=self.rng, **kw)

    def block(self, name, cin, spec, conv_block):
        k1, k2, k3 = spec.filters
        stride = (spec.stride or 2) if conv_block else 1
        main = [
            self.conv(f"{name}/conv_a", cin, k1, 1, stride, "same", False, spec),
            BatchNorm(f"{name}/bn_a", k1),
            Activation(f"{name}/relu_a", "relu"),
            self.conv(f"{name}/conv_b", k1, k2, 3, 1, "same", False, spec),
            BatchNorm(f"{name}/bn_b", k2),
            Activation(f"{name}/relu_b", "relu"),
            self.conv(f"{name}/conv_c", k2, k3, 1, 1, "same", False, spec),
            BatchNorm(f"{name}/bn_c", k3),
        ]
        shortcut = []
        if conv_block:
            shortcut = [self.conv(f"{name}/shortcut", cin, k3, 1, stride, "same", False, spec),
                        BatchNorm(f"{name}/bn_s", k3)]
        elif cin != k3:
            raise DimensionError(f"{name}: identity block needs input channels {cin} == {k3}")
        return ResidualBlock(name, main, shortcut)

    def expand(self, index, spec, shape):
        """Return the layers for one spec row and the resulting shape."""
        out = []
        for r in range(spec.repeat):
            name = f"L{index:02d}" + (f".{r}" if spec.repeat > 1 else "")
            layers = self._one(name, spec, shape)
            for layer in layers:
                try:
                    shape = layer.output_shape(shape)
                except DimensionError as e:
                    raise ConfigError(f"layer {index} ({spec.label or spec.kind}, {layer.name}): {e}") from None
            out.extend(layers)
        return out, shape

    def _one(self, name, spec, shape):
        k = spec.kind
        post = []
        if k in ("conv", "conv_transpose"):
            cin = shape[0]
            layer = self.conv(name, cin, spec.filters, spec.size, spec.stride or 1, spec.padding,
                              k == "conv_transpose", spec)
            if spec.norm:
                post.append(BatchNorm(f"{name}/bn", spec.filters))
            if spec.activation:
                post.append(Activation(f"{name}/{spec.activation}", spec.activation))
            return [layer] + post
        if k == "dense":
            if len(shape) != 1:
                raise ConfigError(f"{name}: dense layer needs a flat input, got {shape}")
            layer = Dense(name, shape[0], spec.units, initializer=self.cfg.dense_init, rng=self.rng)
            if spec.norm:
                post.append(BatchNorm(f"{name}/bn", spec.units))
            if spec.activation:
                post.append(Activation(f"{name}/{spec.activation}", spec.activation))
            return [layer] + post
        if k == "maxpool":
            return [MaxPool2D(name)]
        if k == "upsample":
            return [UpSample2D(name, 2)]
        if k == "global_avg_pool":
            return [GlobalAvgPool2D(name)]
        if k == "flatten":
            return [Reshape(name)]
        if k == "reshape":
            return [Reshape(name, spec.shape)]
        if k == "dropout":
            return [Dropout(name, spec.rate if spec.rate is not None else 0.5)]
        if k in ("conv_block", "ident_block"):
            if len(shape) != 3:
                raise ConfigError(f"{name}: residual block needs an image input, got {shape}")
            try:
                return [self.block(name, shape[0], spec, k == "conv_block")]
            except DimensionError as e:
                raise ConfigError(str(e)) from None
        raise ConfigError(f"unknown layer kind {k!r}")


class Model:
    """An executable network built from a :class:`ModelConfig`.

    ``rows`` keeps, for every spec row, the top-level layers it expanded to.
    """

    def __init__(self, config: ModelConfig, rows):
        self.config = config
        self.rows = rows
        self.net = Sequential(config.name, [l for row in rows for l in row])
        self.output_shape = self.net.output_shape(config.input_shape)

    def forward(self, x, train=False):
        return self.net.forward(x, train)

    def backward(self, grad):
        return self.net.backward(grad)

    def params(self):
        return self.net.params()

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def all_layers(self):
        return list(walk(self.net))[1:]

    def spectral_layers(self):
        return [l for l in self.all_layers() if isinstance(l, SpectralConv2D)]

    def conv_layers(self):
        return [l for l in self.all_layers() if isinstance(l, Conv2D)]

    def set_dropout_rng(self, rng):
        for layer in self.all_layers():
            if isinstance(layer, Dropout):
                layer.rng = rng

    def predict(self, x, batch_size=256):
        outs = [self.forward(x[i : i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0,) + tuple(self.output_shape))

    def state_dict(self):
        state = {p.name: p.value for p in self.params()}
        for layer in self.all_layers():
            state.update(layer.buffers())
        return state

    def load_state_dict(self, state):
        for p in self.params():
            if p.name not in state:
                raise KeyError(f"checkpoint has no tensor {p.name!r}")
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise DimensionError(f"{p.name}: checkpoint shape {value.shape} != model shape {p.value.shape}")
            p.value[...] = value
            p.enforce_mask()
        for layer in self.all_layers():
            if isinstance(layer, BatchNorm):
                layer.load_buffers(state)

    def masks(self):
        return {l.name: l.mask.to_json() for l in self.spectral_layers()}


def build_model(config: ModelConfig, seed: int = 0, rng=None, init=True) -> Model:
    """Instantiate ``config``; parameters are initialized from ``rng`` (or ``seed``).

    ``init=False`` leaves weights at zero, which is enough for shape checks
    and parameter audits and avoids large orthogonalizations.
    """
    if rng is None and init:
        rng = np.random.default_rng(seed)
    if len(config.input_shape) not in (1, 3):
        raise ConfigError(f"input_shape must be (C, H, W) or (features,), got {config.input_shape}")
    b = _Builder(config, rng)
    rows, shape = [], tuple(config.input_shape)
    for i, spec in enumerate(config.layers):
        layers, shape = b.expand(i, spec, shape)
        rows.append(layers)
    model = Model(config, rows)
    if config.task == "classification" and config.num_classes is not None:
        if tuple(model.output_shape) != (config.num_classes,):
            raise ConfigError(f"{config.name}: output shape {model.output_shape} != ({config.num_classes},)")
    if config.task == "autoencoder" and tuple(model.output_shape) != tuple(config.input_shape):
        raise ConfigError(f"{config.name}: output shape {model.output_shape} != input {config.input_shape}")
    return model


def replace_conv_with_spectral(model: Model, selection="all", p=0.0, seed=0, mode="orthonormal",
                               layers=None, init_seed=0) -> Model:
    """Return a model whose selected convolutions are spectral layers.

    Selected layers get fresh coefficients (drawn from ``init_seed``) and
    masks drawn from ``seed``; every other parameter is copied over unchanged.
    """
    if selection == "custom" and layers is None:
        layers = model.config.spectral.layers
    cfg = model.config.with_spectral(selection, p, seed, mode, layers)
    new = build_model(cfg, seed=init_seed)
    old = {p_.name: p_ for p_ in model.params()}
    fresh = {l.weight.name for l in new.spectral_layers()} | {l.bias.name for l in new.spectral_layers()}
    for p_ in new.params():
        if p_.name not in fresh and p_.name in old:
            p_.value[...] = old[p_.name].value
    for lo, ln in zip(model.all_layers(), new.all_layers()):
        if isinstance(lo, BatchNorm) and isinstance(ln, BatchNorm):
            ln.state = copy.deepcopy(lo.state)
    return new


# -- parameter audit ---------------------------------------------------------

@dataclass
class LayerCount:
    name: str
    row: int
    group: str  # "3x3", "1x1", "dense", "norm", ...
    weights: int
    bias: int
    total_weights: int  # before switch-off

    @property
    def trainable(self):
        return self.weights + self.bias


@dataclass
class ParamReport:
    model_name: str
    row_labels: list
    layers: list

    def row_counts(self, row):
        """Trained counts of one spec row by group, biases included, norm listed separately."""
        out = {}
        for lc in self.layers:
            if lc.row == row:
                out[lc.group] = out.get(lc.group, 0) + lc.trainable
        return out

    def param_rows(self):
        """Indices of rows that own non-norm parameters (the rows a table lists)."""
        rows = []
        for lc in self.layers:
            if lc.group != "norm" and lc.row not in rows:
                rows.append(lc.row)
        return rows

    def sum(self, groups=None, field_="trainable"):
        return sum(getattr(lc, field_) for lc in self.layers if groups is None or lc.group in groups)

    @property
    def filters_3x3(self):
        return sum(lc.weights for lc in self.layers if lc.group not in ("dense", "norm", "1x1"))

    @property
    def filters_1x1(self):
        return sum(lc.weights for lc in self.layers if lc.group == "1x1")

    @property
    def dense(self):
        return sum(lc.weights for lc in self.layers if lc.group == "dense")

    @property
    def norm(self):
        return sum(lc.weights for lc in self.layers if lc.group == "norm")

    @property
    def bias(self):
        return sum(lc.bias for lc in self.layers)

    @property
    def conv_filter_weights(self):
        return self.filters_3x3 + self.filters_1x1

    @property
    def total(self):
        """Convolution and dense parameters with biases, without norm scale/shift."""
        return self.filters_3x3 + self.filters_1x1 + self.dense + self.bias

    @property
    def total_with_norm(self):
        return self.total + self.norm

    def format_table(self) -> str:
        lines = [f"{'row':<4} {'layer':<34} {'group':>6} {'weights':>11} {'bias':>7} {'trainable':>11}"]
        for lc in self.layers:
            lines.append(f"{lc.row:<4} {lc.name:<34} {lc.group:>6} {lc.weights:>11,} {lc.bias:>7,} {lc.trainable:>11,}")
        lines.append("")
        lines.append(f"{'row':<4} {'label':<34} {'3x3 (w+b)':>12} {'1x1 (w+b)':>12} {'dense':>12} {'norm':>9}")
        for r in self.param_rows() + [r for r in range(len(self.row_labels)) if r not in self.param_rows() and self.row_counts(r)]:
            c = self.row_counts(r)
            three = sum(v for g, v in c.items() if g not in ("1x1", "dense", "norm"))
            lines.append(f"{r:<4} {self.row_labels[r]:<34} {three:>12,} {c.get('1x1', 0):>12,} "
                         f"{c.get('dense', 0):>12,} {c.get('norm', 0):>9,}")
        lines.append("")
        lines.append(f"filters 3x3-and-larger: {self.filters_3x3:,}  filters 1x1: {self.filters_1x1:,}  "
                     f"dense weights: {self.dense:,}  biases: {self.bias:,}  norm: {self.norm:,}")
        lines.append(f"total (conv+dense incl. biases): {self.total:,}  conv filter weights: "
                     f"{self.conv_filter_weights:,}  total incl. norm: {self.total_with_norm:,}")
        return "\n".join(lines)


def _top_row(model: Model):
    owner = {}
    for r, row in enumerate(model.rows):
        for top in row:
            for layer in walk(top):
                owner[id(layer)] = r
    return owner


def param_count(model: Model) -> ParamReport:
    """Exact trained-parameter counts per layer; spectral layers exclude switched-off coefficients."""
    owner = _top_row(model)
    out = []
    for layer in model.all_layers():
        r = owner[id(layer)]
        if isinstance(layer, Conv2D):
            w = layer.weight
            out.append(LayerCount(layer.name, r, w.group, w.trainable_count(), layer.bias.value.size, w.value.size))
        elif isinstance(layer, Dense):
            out.append(LayerCount(layer.name, r, "dense", layer.weight.value.size, layer.bias.value.size,
                                  layer.weight.value.size))
        elif isinstance(layer, BatchNorm):
            n = layer.gamma.value.size + layer.beta.value.size
            out.append(LayerCount(layer.name, r, "norm", n, 0, n))
    labels = [s.label or s.kind for s in model.config.layers]
    return ParamReport(model.config.name, labels, out)
