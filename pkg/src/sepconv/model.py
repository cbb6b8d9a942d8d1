"""MobileNet body, transfer head, and analytic cost accounting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as K
from .kernels import DTYPE, ShapeError

VARIANTS = ("separable", "full_conv", "shallow")
HEADS = ("imagenet1000", "binary_head")
STANDARD_RESOLUTIONS = (128, 160, 192, 224)

# (cin, cout, stride) of the 13 depthwise-separable blocks after the stem.
# The last block maps 7x7 to 7x7, so it runs at stride 1.
SEPARABLE_BLOCKS = (
    (32, 64, 1),
    (64, 128, 2),
    (128, 128, 1),
    (128, 256, 2),
    (256, 256, 1),
    (256, 512, 2),
    (512, 512, 1),
    (512, 512, 1),
    (512, 512, 1),
    (512, 512, 1),
    (512, 512, 1),
    (512, 1024, 2),
    (1024, 1024, 1),
)
SHALLOW_REMOVED = range(6, 11)  # the five 14x14x512 blocks
STEM_CHANNELS = 32
HEAD_HIDDEN = 128
HEAD_L2 = 0.015
HEAD_DROPOUT = 0.4
IMAGENET_CLASSES = 1000

# Reference rows for models that are not implemented here:
# (name, ImageNet accuracy, million mult-adds, million parameters)
REFERENCE_MODELS = (
    ("GoogleNet", 0.698, 1550, 6.8),
    ("VGG 16", 0.715, 15300, 138),
)


def scale_channels(c: int, alpha: float) -> int:
    return int(math.floor(alpha * c + 0.5))


@dataclass(frozen=True)
class ModelConfig:
    alpha: float = 1.0
    resolution: int = 224
    depth_multiplier: int = 1
    variant: str = "separable"
    head: str = "imagenet1000"
    use_batchnorm: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if scale_channels(STEM_CHANNELS, self.alpha) < 1:
            raise ValueError(f"alpha={self.alpha} leaves a layer with zero channels")
        if self.depth_multiplier != 1:
            raise ValueError(f"only depth_multiplier=1 is supported, got {self.depth_multiplier}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise ValueError(f"resolution must be a positive integer, got {self.resolution}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    kind = "layer"
    weighted = False

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def param_shapes(self) -> dict[str, tuple]:
        return {}

    def buffer_shapes(self) -> dict[str, tuple]:
        return {}

    def init(self, rng: np.random.Generator) -> None:
        pass

    def output_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def mult_adds(self, in_shape: tuple) -> int:
        return 0

    def forward(self, x, mode, rng):
        raise NotImplementedError

    def backward(self, d):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def _he_normal(rng, shape, fan_in):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(DTYPE)


class Conv(Layer):
    kind = "conv"
    weighted = True

    def __init__(self, name, cin, cout, k, stride, bias):
        super().__init__(name)
        self.cin, self.cout, self.k, self.stride, self.bias = cin, cout, k, stride, bias

    def param_shapes(self):
        shapes = {"weight": (self.k, self.k, self.cin, self.cout)}
        if self.bias:
            shapes["bias"] = (self.cout,)
        return shapes

    def init(self, rng):
        self.params["weight"] = _he_normal(rng, (self.k, self.k, self.cin, self.cout), self.k * self.k * self.cin)
        if self.bias:
            self.params["bias"] = np.zeros(self.cout, dtype=DTYPE)

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.cin:
            raise ShapeError(f"{self.name}: expected {self.cin} input channels, got {c}")
        s = self.stride
        return (math.ceil(h / s), math.ceil(w / s), self.cout)

    def mult_adds(self, in_shape):
        ho, wo, _ = self.output_shape(in_shape)
        return ho * wo * self.k * self.k * self.cin * self.cout

    def forward(self, x, mode, rng):
        self._cache = x
        return K.conv2d(x, self.params["weight"], self.params.get("bias"), self.stride, "same")

    def backward(self, d):
        g = K.conv2d_backward(self._cache, self.params["weight"], self.stride, "same", d, has_bias=self.bias)
        return g.d_input, g.d_params


class DepthwiseConv(Layer):
    kind = "depthwise"
    weighted = True

    def __init__(self, name, c, k, stride, bias):
        super().__init__(name)
        self.c, self.k, self.stride, self.bias = c, k, stride, bias

    def param_shapes(self):
        shapes = {"weight": (self.k, self.k, self.c)}
        if self.bias:
            shapes["bias"] = (self.c,)
        return shapes

    def init(self, rng):
        self.params["weight"] = _he_normal(rng, (self.k, self.k, self.c), self.k * self.k)
        if self.bias:
            self.params["bias"] = np.zeros(self.c, dtype=DTYPE)

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.c:
            raise ShapeError(f"{self.name}: expected {self.c} input channels, got {c}")
        return (math.ceil(h / self.stride), math.ceil(w / self.stride), c)

    def mult_adds(self, in_shape):
        ho, wo, _ = self.output_shape(in_shape)
        return ho * wo * self.k * self.k * self.c

    def forward(self, x, mode, rng):
        self._cache = x
        return K.depthwise_conv2d(x, self.params["weight"], self.params.get("bias"), self.stride, "same")

    def backward(self, d):
        g = K.depthwise_conv2d_backward(self._cache, self.params["weight"], self.stride, "same", d,
                                        has_bias=self.bias)
        return g.d_input, g.d_params


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, name, c, eps=1e-5, momentum=0.9):
        super().__init__(name)
        self.c, self.eps, self.momentum = c, eps, momentum

    def param_shapes(self):
        return {"gamma": (self.c,), "beta": (self.c,)}

    def buffer_shapes(self):
        return {"running_mean": (self.c,), "running_var": (self.c,)}

    def init(self, rng):
        self.params["gamma"] = np.ones(self.c, dtype=DTYPE)
        self.params["beta"] = np.zeros(self.c, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(self.c, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(self.c, dtype=DTYPE)

    def forward(self, x, mode, rng):
        out, mean, var, self._cache = K.batchnorm(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            mode, self.eps, self.momentum,
        )
        self.buffers["running_mean"], self.buffers["running_var"] = mean, var
        return out

    def backward(self, d):
        g = K.batchnorm_backward(self._cache, d)
        return g.d_input, g.d_params


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode, rng):
        self._cache = x
        return K.relu(x)

    def backward(self, d):
        return K.relu_backward(self._cache, d), {}


class GlobalAvgPool(Layer):
    """Global average pool followed by flattening to N x c."""

    kind = "avgpool"

    def output_shape(self, in_shape):
        return (in_shape[-1],)

    def forward(self, x, mode, rng):
        self._cache = x.shape
        return K.global_avg_pool(x).reshape(x.shape[0], x.shape[3])

    def backward(self, d):
        return K.global_avg_pool_backward(self._cache, d), {}


class Dense(Layer):
    kind = "dense"
    weighted = True

    def __init__(self, name, k, m, l2=0.0):
        super().__init__(name)
        self.k, self.m, self.l2 = k, m, l2

    def param_shapes(self):
        return {"weight": (self.k, self.m), "bias": (self.m,)}

    def init(self, rng):
        self.params["weight"] = _he_normal(rng, (self.k, self.m), self.k)
        self.params["bias"] = np.zeros(self.m, dtype=DTYPE)

    def output_shape(self, in_shape):
        if in_shape != (self.k,):
            raise ShapeError(f"{self.name}: expected ({self.k},) features, got {in_shape}")
        return (self.m,)

    def mult_adds(self, in_shape):
        return self.k * self.m

    def forward(self, x, mode, rng):
        self._cache = x
        return K.dense(x, self.params["weight"], self.params["bias"])

    def backward(self, d):
        g = K.dense_backward(self._cache, self.params["weight"], d)
        if self.l2:
            g.d_params["weight"] += DTYPE(2 * self.l2) * self.params["weight"]
        return g.d_input, g.d_params

    def penalty(self) -> float:
        if not self.l2:
            return 0.0
        w = self.params["weight"].astype(np.float64)
        return float(self.l2 * np.sum(w * w))


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, name, p):
        super().__init__(name)
        self.p = p

    def forward(self, x, mode, rng):
        out, self._cache = K.dropout(x, self.p, mode, rng)
        return out

    def backward(self, d):
        return K.dropout_backward(self._cache, d), {}


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def _conv_unit(layers, name, layer, c, bn):
    layers.append(layer)
    if bn:
        layers.append(BatchNorm(f"{name}_bn", c))
    layers.append(ReLU(f"{name}_relu"))


def plan_layers(config: ModelConfig) -> list[Layer]:
    """Layer sequence for ``config`` with no parameters allocated."""
    a, bn = config.alpha, config.use_batchnorm
    bias = not bn
    layers: list[Layer] = []
    c0 = scale_channels(STEM_CHANNELS, a)
    _conv_unit(layers, "conv1", Conv("conv1", 3, c0, 3, 2, bias), c0, bn)
    blocks = [b for i, b in enumerate(SEPARABLE_BLOCKS)
              if not (config.variant == "shallow" and i in SHALLOW_REMOVED)]
    for i, (cin, cout, stride) in enumerate(blocks, start=1):
        cin, cout = scale_channels(cin, a), scale_channels(cout, a)
        if min(cin, cout) < 1:
            raise ValueError(f"alpha={a} leaves block {i} with zero channels")
        if config.variant == "full_conv":
            name = f"conv_full_{i}"
            _conv_unit(layers, name, Conv(name, cin, cout, 3, stride, bias), cout, bn)
        else:
            dw, pw = f"conv_dw_{i}", f"conv_pw_{i}"
            _conv_unit(layers, dw, DepthwiseConv(dw, cin, 3, stride, bias), cin, bn)
            _conv_unit(layers, pw, Conv(pw, cin, cout, 1, 1, bias), cout, bn)
    features = scale_channels(SEPARABLE_BLOCKS[-1][1], a)
    layers.append(GlobalAvgPool("global_pool"))
    if config.head == "imagenet1000":
        layers.append(Dense("fc", features, IMAGENET_CLASSES))
    else:
        layers.append(Dense("head_dense", features, HEAD_HIDDEN, l2=HEAD_L2))
        layers.append(ReLU("head_relu"))
        layers.append(Dropout("head_dropout", HEAD_DROPOUT))
        layers.append(Dense("head_out", HEAD_HIDDEN, 2))
    return layers


class Model:
    def __init__(self, config: ModelConfig, layers: list[Layer]):
        self.config = config
        self.layers = layers
        self.shapes = self._chain_shapes()

    def _chain_shapes(self) -> list[tuple]:
        """Per-layer input shapes (without batch) plus the final output shape."""
        r = self.config.resolution
        shapes = [(r, r, 3)]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    @property
    def input_shape(self) -> tuple:
        return self.shapes[0]

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    def weighted_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.weighted]

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.buffers.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for l in self.layers:
            for k, v in l.params.items():
                state[f"{l.name}.{k}"] = v
            for k, v in l.buffers.items():
                state[f"{l.name}.{k}"] = v
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = {}
        for l in self.layers:
            for k, shape in l.param_shapes().items():
                expected[f"{l.name}.{k}"] = (l.params, k, shape)
            for k, shape in l.buffer_shapes().items():
                expected[f"{l.name}.{k}"] = (l.buffers, k, shape)
        missing = expected.keys() - state.keys()
        extra = state.keys() - expected.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for key, (store, k, shape) in expected.items():
            arr = np.asarray(state[key])
            if arr.shape != tuple(shape):
                raise ShapeError(f"{key}: expected shape {tuple(shape)}, got {arr.shape}")
            store[k] = K.as_tensor(arr).copy()

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for l in self.layers:
            for k in l.params:
                l.params[k] = params[f"{l.name}.{k}"]

    def forward(self, x, mode="infer", rng=None) -> np.ndarray:
        x = K.as_tensor(x)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeError(f"input must be N x {' x '.join(map(str, self.input_shape))}, got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, mode, rng)
        return x

    def backward(self, d_logits, with_input: bool = False):
        """Gradients for every parameter, including the L2 term of the head.

        Uses the activations cached by the most recent ``forward``. With
        ``with_input`` the gradient w.r.t. the input batch is returned too.
        """
        grads = {}
        d = K.as_tensor(d_logits)
        for layer in reversed(self.layers):
            d, g = layer.backward(d)
            for k, v in g.items():
                grads[f"{layer.name}.{k}"] = v
        return (grads, d) if with_input else grads

    def regularization_loss(self) -> float:
        return sum(l.penalty() for l in self.layers if isinstance(l, Dense))

    def loss_and_grads(self, x, labels, mode="train", rng=None):
        logits = self.forward(x, mode, rng)
        loss, probs, d_logits = K.softmax_cross_entropy(logits, labels)
        grads = self.backward(d_logits)
        return loss + self.regularization_loss(), probs, grads

    def __repr__(self):
        return f"Model({self.config}, {len(self.layers)} layers)"


def build_model(config: ModelConfig, rng: np.random.Generator | None = None) -> Model:
    """Build and initialize the network; ``rng`` defaults to one seeded from ``config.seed``."""
    layers = plan_layers(config)
    model = Model(config, layers)
    rng = K.make_rng(config.seed) if rng is None else rng
    for layer in layers:
        layer.init(rng)
    return model


# ---------------------------------------------------------------------------
# cost accounting
# ---------------------------------------------------------------------------

@dataclass
class CostRow:
    name: str
    kind: str
    mult_adds: int
    params: int


@dataclass
class CostReport:
    config: ModelConfig
    rows: list[CostRow] = field(default_factory=list)

    @property
    def mult_adds(self) -> int:
        return sum(r.mult_adds for r in self.rows)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def million_mult_adds(self) -> int:
        return round(self.mult_adds / 1e6)

    @property
    def million_params(self) -> float:
        return round(self.params / 1e6, 1)

    def summary(self) -> str:
        return f"{self.million_mult_adds}M mult-adds, {self.million_params}M params"


def count_costs(config: ModelConfig) -> CostReport:
    """Mult-adds and trainable parameters per layer.

    One mult-add per multiply-accumulate; bias additions are free. Batch-norm
    running statistics are buffers and are not counted as parameters.
    """
    layers = plan_layers(config)
    shapes = Model(config, layers).shapes
    report = CostReport(config)
    for layer, in_shape in zip(layers, shapes):
        params = sum(math.prod(s) for s in layer.param_shapes().values())
        madds = layer.mult_adds(in_shape)
        if params or madds:
            report.rows.append(CostRow(layer.name, layer.kind, madds, params))
    return report
