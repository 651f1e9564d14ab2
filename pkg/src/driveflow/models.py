"""Image-only (IO), image+depth-map (PCM) and image+PointNet (PN) regressors.

All three map their inputs to a ``B x 2`` output: column 0 is the steering
angle in radians (unsquashed), column 1 the sigmoid-squashed speed in [0, 1].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .autograd import Tensor, ops
from .errors import ConfigError, DimensionError

NVIDIA_INPUT = (3, 66, 200)
NVIDIA_KERNELS = (5, 5, 5, 3, 3)
NVIDIA_STRIDES = (2, 2, 2, 1, 1)

MODEL_KINDS = ("io", "pcm", "pn")


@dataclass(frozen=True)
class BackboneSpec:
    """CNN feature extractor.

    ``nvidia`` is the PilotNet layout (five valid convolutions, then the FC
    stack in ``fc_widths`` when used as a standalone IO head). ``tinyconv``
    stacks one block per entry of ``conv_widths``: 3x3 convolution, ReLU,
    2x2 max-pool.
    """

    variant: str = "tinyconv"
    input_shape: tuple[int, int, int] = (3, 48, 96)
    conv_widths: tuple[int, ...] = (8, 16, 32, 32)
    fc_widths: tuple[int, ...] = (64,)

    @classmethod
    def nvidia(cls) -> "BackboneSpec":
        return cls("nvidia", NVIDIA_INPUT, (24, 36, 48, 64, 64), (100, 50, 10))

    def validate(self) -> None:
        if self.variant not in ("nvidia", "tinyconv"):
            raise ConfigError(f"unknown backbone variant {self.variant!r}; expected nvidia or tinyconv")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input shape must be three positive dims, got {self.input_shape}")
        if not self.conv_widths or min(self.conv_widths) < 1:
            raise ConfigError(f"conv widths must be positive, got {self.conv_widths}")
        if self.fc_widths and min(self.fc_widths) < 1:
            raise ConfigError(f"fc widths must be positive, got {self.fc_widths}")
        if self.variant == "nvidia":
            if tuple(self.input_shape) != NVIDIA_INPUT:
                raise ConfigError(f"nvidia backbone requires input {NVIDIA_INPUT}, got {self.input_shape}")
            if len(self.conv_widths) != len(NVIDIA_KERNELS):
                raise ConfigError("nvidia backbone has exactly five convolutions")
        h, w = self.feature_hw()
        if h < 1 or w < 1:
            raise ConfigError(f"input {self.input_shape} too small for {len(self.conv_widths)} conv blocks")

    def feature_hw(self) -> tuple[int, int]:
        _, h, w = self.input_shape
        if self.variant == "nvidia":
            for k, s in zip(NVIDIA_KERNELS, NVIDIA_STRIDES):
                h, w = (h - k) // s + 1, (w - k) // s + 1
        else:
            for _ in self.conv_widths:
                h, w = (h - 3 + 1) // 2, (w - 3 + 1) // 2
        return h, w

    @property
    def feature_dim(self) -> int:
        h, w = self.feature_hw()
        return self.conv_widths[-1] * h * w


@dataclass(frozen=True)
class PointNetSpec:
    widths: tuple[int, ...] = (64, 64, 128, 1024)
    num_points: int = 16384

    def validate(self) -> None:
        if not self.widths or min(self.widths) < 1:
            raise ConfigError(f"PointNet widths must be positive, got {self.widths}")
        if self.num_points < 1:
            raise ConfigError(f"num_points must be positive, got {self.num_points}")

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True)
class FusionSpec:
    hidden: int = 256

    def validate(self) -> None:
        if self.hidden < 1:
            raise ConfigError(f"fusion hidden width must be positive, got {self.hidden}")


@dataclass(frozen=True)
class Prediction:
    angle: float
    speed: float


@dataclass
class ModelInputs:
    """One batch. ``image`` is ``B x 3 x H x W``; the optional branches are
    ``B x 2 x h x w`` depth maps and ``B x N x 3`` point sets."""

    image: np.ndarray
    depth: np.ndarray | None = None
    points: np.ndarray | None = None

    def __len__(self) -> int:
        return self.image.shape[0]

    def subset(self, idx) -> "ModelInputs":
        return ModelInputs(
            self.image[idx],
            None if self.depth is None else self.depth[idx],
            None if self.points is None else self.points[idx],
        )


# --- layers ------------------------------------------------------------------

# output layers start small so initial predictions sit near angle 0, speed 0.5
OUTPUT_GAIN = 0.1

class Linear:
    """Dense layer, He-initialized; ``gain`` rescales the weight std."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0):
        self.weight = Tensor(gain * rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class PointwiseLinear(Linear):
    """Linear layer shared across points; each point is evaluated independently."""

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(ops.rowwise_matmul(x, self.weight), self.bias)


class Conv:
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, rng: np.random.Generator):
        fan_in = c_in * k * k
        self.kernels = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, k, k)), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.kernels, self.stride, self.bias)

    def params(self):
        return [("kernels", self.kernels), ("bias", self.bias)]


def _mlp(widths, n_in, rng):
    layers = []
    for w in widths:
        layers.append(Linear(n_in, w, rng))
        n_in = w
    return layers, n_in


class Backbone:
    def __init__(self, spec: BackboneSpec, rng: np.random.Generator):
        spec.validate()
        self.spec = spec
        c = spec.input_shape[0]
        if spec.variant == "nvidia":
            plan = zip(spec.conv_widths, NVIDIA_KERNELS, NVIDIA_STRIDES)
        else:
            plan = ((w, 3, 1) for w in spec.conv_widths)
        self.convs = []
        for width, k, s in plan:
            self.convs.append(Conv(c, width, k, s, rng))
            c = width

    def __call__(self, image: Tensor) -> Tensor:
        x = image
        for conv in self.convs:
            x = ops.relu(conv(x))
            if self.spec.variant == "tinyconv":
                x = ops.maxpool2d(x, 2, 2)
        return ops.flatten(x, 1)

    def params(self):
        for i, conv in enumerate(self.convs):
            for name, p in conv.params():
                yield f"conv{i}.{name}", p


class PointNet:
    """Shared per-point MLP (ReLU after every layer) and a global max-pool."""

    def __init__(self, spec: PointNetSpec, rng: np.random.Generator):
        spec.validate()
        self.spec = spec
        self.layers = []
        n_in = 3
        for w in spec.widths:
            self.layers.append(PointwiseLinear(n_in, w, rng))
            n_in = w

    def __call__(self, points: Tensor) -> Tensor:
        x = points
        for layer in self.layers:
            x = ops.relu(layer(x))
        return ops.global_max_over_points(x)

    def params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                yield f"mlp{i}.{name}", p


# --- models ------------------------------------------------------------------

class DrivingModel:
    kind = ""

    def __init__(self, seed: int):
        self.seed = seed

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._named())

    def _named(self) -> Iterator[tuple[str, Tensor]]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self._named()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def spec_dict(self) -> dict:
        raise NotImplementedError

    def _raw(self, inputs: ModelInputs) -> Tensor:
        raise NotImplementedError

    def forward(self, inputs: ModelInputs) -> Tensor:
        out = self._raw(inputs)
        return ops.concat([out[:, 0:1], ops.sigmoid(out[:, 1:2])], axis=1)

    __call__ = forward

    def predict(self, inputs: ModelInputs) -> list[Prediction]:
        out = self.forward(inputs).data
        return [Prediction(float(a), float(s)) for a, s in out]

    def _check(self, arr, expected, what) -> np.ndarray:
        if arr is None:
            raise DimensionError(f"{self.kind} model needs a {what} input")
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == len(expected):
            arr = arr[None]
        if arr.ndim != len(expected) + 1 or tuple(arr.shape[1:]) != tuple(expected):
            raise DimensionError(f"{what} input has shape {arr.shape[1:]}, expected {tuple(expected)}")
        return arr


class IOModel(DrivingModel):
    kind = "io"

    def __init__(self, spec: BackboneSpec, seed: int = 0):
        super().__init__(seed)
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(spec, rng)
        self.head, n = _mlp(spec.fc_widths, spec.feature_dim, rng)
        self.out = Linear(n, 2, rng, OUTPUT_GAIN)

    def _raw(self, inputs):
        x = self.backbone(Tensor._wrap(self._check(inputs.image, self.backbone.spec.input_shape, "image"), False))
        for layer in self.head:
            x = ops.relu(layer(x))
        return self.out(x)

    def _named(self):
        yield from (("image." + n, p) for n, p in self.backbone.params())
        for i, layer in enumerate(self.head):
            yield from ((f"head{i}.{n}", p) for n, p in layer.params())
        yield from (("out." + n, p) for n, p in self.out.params())

    def spec_dict(self):
        return {"kind": self.kind, "seed": self.seed, "image": asdict(self.backbone.spec)}


class _FusionModel(DrivingModel):
    def _init_head(self, fusion: FusionSpec, fused_in: int, rng):
        fusion.validate()
        self.fusion = fusion
        self.fused_width = fused_in
        self.hidden = Linear(fused_in, fusion.hidden, rng)
        self.out = Linear(fusion.hidden, 2, rng, OUTPUT_GAIN)

    def _head(self, a: Tensor, b: Tensor) -> Tensor:
        fused = ops.concat([a, b], axis=1)
        return self.out(ops.relu(self.hidden(fused)))

    def _head_params(self):
        yield from (("fusion." + n, p) for n, p in self.hidden.params())
        yield from (("out." + n, p) for n, p in self.out.params())


class PCMModel(_FusionModel):
    kind = "pcm"

    def __init__(self, img_spec: BackboneSpec, depth_spec: BackboneSpec,
                 fusion: FusionSpec = FusionSpec(), seed: int = 0):
        super().__init__(seed)
        if depth_spec.input_shape[0] != 2:
            raise ConfigError(f"depth branch takes 2 channels (depth, validity), got {depth_spec.input_shape[0]}")
        rng = np.random.default_rng(seed)
        self.image_backbone = Backbone(img_spec, rng)
        self.depth_backbone = Backbone(depth_spec, rng)
        self._init_head(fusion, img_spec.feature_dim + depth_spec.feature_dim, rng)

    def _raw(self, inputs):
        img = self._check(inputs.image, self.image_backbone.spec.input_shape, "image")
        dep = self._check(inputs.depth, self.depth_backbone.spec.input_shape, "depth")
        return self._head(self.image_backbone(Tensor._wrap(img, False)),
                          self.depth_backbone(Tensor._wrap(dep, False)))

    def _named(self):
        yield from (("image." + n, p) for n, p in self.image_backbone.params())
        yield from (("depth." + n, p) for n, p in self.depth_backbone.params())
        yield from self._head_params()

    def spec_dict(self):
        return {"kind": self.kind, "seed": self.seed, "image": asdict(self.image_backbone.spec),
                "depth": asdict(self.depth_backbone.spec), "fusion": asdict(self.fusion)}


class PNModel(_FusionModel):
    kind = "pn"

    def __init__(self, img_spec: BackboneSpec, pn: PointNetSpec = PointNetSpec(),
                 fusion: FusionSpec = FusionSpec(), seed: int = 0):
        super().__init__(seed)
        rng = np.random.default_rng(seed)
        self.image_backbone = Backbone(img_spec, rng)
        self.pointnet = PointNet(pn, rng)
        self._init_head(fusion, img_spec.feature_dim + pn.feature_dim, rng)

    def _raw(self, inputs):
        img = self._check(inputs.image, self.image_backbone.spec.input_shape, "image")
        if inputs.points is None:
            raise DimensionError("pn model needs a points input")
        pts = np.asarray(inputs.points, dtype=np.float64)
        if pts.ndim == 2:
            pts = pts[None]
        if pts.ndim != 3 or pts.shape[2] != 3 or pts.shape[1] < 1:
            raise DimensionError(f"points input has shape {pts.shape}, expected B x N x 3")
        return self._head(self.image_backbone(Tensor._wrap(img, False)),
                          self.pointnet(Tensor._wrap(pts, False)))

    def _named(self):
        yield from (("image." + n, p) for n, p in self.image_backbone.params())
        yield from (("pointnet." + n, p) for n, p in self.pointnet.params())
        yield from self._head_params()

    def spec_dict(self):
        return {"kind": self.kind, "seed": self.seed, "image": asdict(self.image_backbone.spec),
                "pointnet": asdict(self.pointnet.spec), "fusion": asdict(self.fusion)}


def build_io_model(spec: BackboneSpec, seed: int = 0) -> IOModel:
    return IOModel(spec, seed)


def build_pcm_model(img_spec: BackboneSpec, depth_spec: BackboneSpec,
                    fusion: FusionSpec = FusionSpec(), seed: int = 0) -> PCMModel:
    return PCMModel(img_spec, depth_spec, fusion, seed)


def build_pn_model(img_spec: BackboneSpec, pn: PointNetSpec = PointNetSpec(),
                   fusion: FusionSpec = FusionSpec(), seed: int = 0) -> PNModel:
    return PNModel(img_spec, pn, fusion, seed)


def forward(model: DrivingModel, inputs: ModelInputs) -> list[Prediction]:
    return model.predict(inputs)


def _backbone(d: dict) -> BackboneSpec:
    return BackboneSpec(d["variant"], tuple(d["input_shape"]), tuple(d["conv_widths"]), tuple(d["fc_widths"]))


def model_from_spec(spec: dict) -> DrivingModel:
    """Rebuild a freshly initialized model from :meth:`DrivingModel.spec_dict` output."""
    try:
        kind = spec["kind"]
        seed = int(spec.get("seed", 0))
        if kind == "io":
            return IOModel(_backbone(spec["image"]), seed)
        if kind == "pcm":
            return PCMModel(_backbone(spec["image"]), _backbone(spec["depth"]),
                            FusionSpec(**spec["fusion"]), seed)
        if kind == "pn":
            pn = spec["pointnet"]
            return PNModel(_backbone(spec["image"]), PointNetSpec(tuple(pn["widths"]), int(pn["num_points"])),
                           FusionSpec(**spec["fusion"]), seed)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed model spec: {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
