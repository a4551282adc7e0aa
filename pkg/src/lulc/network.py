"""Sequential networks: declarative specs, build, forward/backward, surgery.

A network is an ordered list of named layers. Learnable layers own two blobs,
``<layer>.weights`` and ``<layer>.bias``; an inception layer owns one pair per
convolution, named ``<layer>/<branch>.weights`` and ``<layer>/<branch>.bias``.
"""
from __future__ import annotations

import copy
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import container
from .layers import (
    ACTIVATIONS,
    INCEPTION_BRANCHES,
    InceptionSpec,
    LayerParams,
    LrnParams,
    activation_backward,
    activation_forward,
    conv_backward,
    conv_forward,
    fc_backward,
    fc_forward,
    inception_backward,
    inception_forward,
    lrn_backward,
    lrn_forward,
    maxpool_backward,
    maxpool_forward,
)
from .tensor import GeometryError, ShapeError, conv_geometry

LAYER_KINDS = ("conv", "pool", "lrn", "relu", "sigmoid", "fc", "inception")
LEARNABLE = ("conv", "fc", "inception")


class BuildError(ValueError):
    pass


class SurgeryError(ValueError):
    pass


class LayerLookupError(KeyError):
    def __str__(self):
        return str(self.args[0])


@dataclass
class LayerSpec:
    name: str
    kind: str
    num_output: int = 0
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    activation: str | None = None
    lr_mult: float = 1.0
    lrn: LrnParams | None = None
    inception: InceptionSpec | None = None
    note: str = ""

    @property
    def learnable(self) -> bool:
        return self.kind in LEARNABLE


def conv(name, num_output, kernel, stride=1, pad=0, activation="relu", lr_mult=1.0, note=""):
    return LayerSpec(name, "conv", num_output, kernel, stride, pad, activation, lr_mult, note=note)


def pool(name, kernel, stride, pad=0):
    return LayerSpec(name, "pool", kernel=kernel, stride=stride, pad=pad)


def lrn(name, n=5, alpha=1e-4, beta=0.75, k=1.0):
    return LayerSpec(name, "lrn", lrn=LrnParams(n, alpha, beta, k))


def fc(name, num_output, activation=None, lr_mult=1.0):
    return LayerSpec(name, "fc", num_output, activation=activation, lr_mult=lr_mult)


def act(name, kind):
    return LayerSpec(name, kind)


def inception(name, c1, c3_reduce, c3, c5_reduce, c5, pool_proj, activation="relu", lr_mult=1.0):
    return LayerSpec(name, "inception", activation=activation, lr_mult=lr_mult,
                     inception=InceptionSpec(c1, c3_reduce, c3, c5_reduce, c5, pool_proj))


@dataclass
class NetworkSpec:
    layers: list[LayerSpec]
    input_shape: tuple  # (C, H, W)
    num_classes: int

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise LayerLookupError(
            f"no layer named {name!r}; valid names: {', '.join(s.name for s in self.layers)}")

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "num_classes": self.num_classes,
                "layers": [asdict(s) for s in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = []
        for s in d["layers"]:
            s = dict(s)
            if s.get("lrn") is not None:
                s["lrn"] = LrnParams(**s["lrn"])
            if s.get("inception") is not None:
                s["inception"] = InceptionSpec(**s["inception"])
            layers.append(LayerSpec(**s))
        return cls(layers, tuple(d["input_shape"]), int(d["num_classes"]))

    def param_shapes(self) -> dict[str, tuple]:
        """Blob name to shape for every learnable blob, in layer order."""
        shapes = {}
        for spec, in_shape in zip(self.layers, infer_shapes(self)[:-1]):
            for unit, wshape in _unit_shapes(spec, in_shape).items():
                shapes[f"{unit}.weights"] = wshape
                shapes[f"{unit}.bias"] = (wshape[0],)
        return shapes


def _unit_shapes(spec: LayerSpec, in_shape: tuple) -> dict[str, tuple]:
    if spec.kind == "conv":
        return {spec.name: (spec.num_output, in_shape[0], spec.kernel, spec.kernel)}
    if spec.kind == "fc":
        return {spec.name: (spec.num_output, int(np.prod(in_shape)))}
    if spec.kind == "inception":
        return {f"{spec.name}/{b}": s for b, s in spec.inception.conv_shapes(in_shape[0]).items()}
    return {}


def _layer_output_shape(spec: LayerSpec, shape: tuple) -> tuple:
    kind = spec.kind
    if kind not in LAYER_KINDS:
        raise BuildError(f"unknown layer kind {kind!r}")
    if kind in ("relu", "sigmoid", "lrn"):
        return shape
    if kind == "fc":
        if spec.num_output < 1:
            raise BuildError("fully-connected layer needs num_output >= 1")
        return (spec.num_output,)
    if len(shape) != 3:
        raise ShapeError(f"{kind} layer needs a [C,H,W] input, got {list(shape)}")
    C, H, W = shape
    if kind == "conv":
        if spec.num_output < 1 or spec.kernel < 1:
            raise BuildError("conv layer needs num_output >= 1 and kernel >= 1")
        ho, wo = conv_geometry((1,) + shape, spec.kernel, spec.stride, spec.pad)
        return (spec.num_output, ho, wo)
    if kind == "pool":
        ho, wo = conv_geometry((1,) + shape, spec.kernel, spec.stride, spec.pad)
        return (C, ho, wo)
    inc = spec.inception
    if min(asdict(inc).values()) < 1:
        raise BuildError("inception branch widths must all be >= 1")
    return (inc.out_channels, H, W)


def infer_shapes(spec: NetworkSpec) -> list[tuple]:
    """Per-sample shapes: the input followed by every layer's output.

    Raises BuildError naming the offending pair of adjacent layers.
    """
    if not spec.layers:
        raise BuildError("network spec has no layers")
    names = [s.name for s in spec.layers]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise BuildError(f"duplicate layer names: {dupes}")
    for s in spec.layers:
        if s.activation is not None and s.activation not in ACTIVATIONS:
            raise BuildError(f"layer {s.name!r}: unknown activation {s.activation!r}")
        if s.lr_mult < 0:
            raise BuildError(f"layer {s.name!r}: lr_mult must be >= 0")
    shapes = [tuple(int(d) for d in spec.input_shape)]
    if len(shapes[0]) != 3 or min(shapes[0]) < 1:
        raise BuildError(f"input_shape must be [C,H,W] with positive extents, got {spec.input_shape}")
    prev = "<input>"
    for s in spec.layers:
        try:
            shapes.append(_layer_output_shape(s, shapes[-1]))
        except (GeometryError, ShapeError) as err:
            raise BuildError(f"layer {s.name!r} cannot follow {prev!r}: {err}") from None
        prev = s.name
    last = spec.layers[-1]
    if last.kind != "fc" or last.activation is not None:
        raise BuildError(f"final layer {last.name!r} must be a fully-connected layer without activation")
    if last.num_output != spec.num_classes:
        raise BuildError(
            f"final layer {last.name!r} has {last.num_output} outputs but num_classes is {spec.num_classes}")
    return shapes


def xavier_uniform(rng: np.random.Generator, shape: tuple, dtype) -> np.ndarray:
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


@dataclass
class Checkpoint:
    spec: NetworkSpec
    blobs: dict[str, np.ndarray]
    meta: dict = field(default_factory=lambda: {"iteration": 0, "mean": None})

    def validate(self) -> None:
        expected = self.spec.param_shapes()
        if set(expected) != set(self.blobs):
            missing = sorted(set(expected) - set(self.blobs))
            extra = sorted(set(self.blobs) - set(expected))
            raise BuildError(f"checkpoint blobs do not match spec (missing {missing}, unexpected {extra})")
        for name, shape in expected.items():
            if self.blobs[name].shape != shape:
                raise BuildError(f"blob {name!r} has shape {self.blobs[name].shape}, spec needs {shape}")


class Network:
    """A built network: spec plus live parameters.

    Forward stores per-layer caches; ``backward`` must follow the matching
    ``forward`` call.
    """

    def __init__(self, spec: NetworkSpec, blobs: dict[str, np.ndarray], meta: dict | None = None):
        self.shapes = infer_shapes(spec)
        self.spec = spec
        self.meta = dict(meta or {"iteration": 0, "mean": None})
        self.params: dict[str, LayerParams] = {}
        for layer, in_shape in zip(spec.layers, self.shapes[:-1]):
            for unit, wshape in _unit_shapes(layer, in_shape).items():
                w, b = blobs[f"{unit}.weights"], blobs[f"{unit}.bias"]
                if w.shape != wshape:
                    raise BuildError(f"blob {unit}.weights has shape {w.shape}, expected {wshape}")
                self.params[unit] = LayerParams(w, b, layer.lr_mult)
        self._caches: list = []

    @property
    def dtype(self):
        return next(iter(self.params.values())).weights.dtype if self.params else np.float32

    def blobs(self) -> dict[str, np.ndarray]:
        out = {}
        for unit, p in self.params.items():
            out[f"{unit}.weights"] = p.weights
            out[f"{unit}.bias"] = p.bias
        return out

    def lr_mults(self) -> dict[str, float]:
        out = {}
        for unit, p in self.params.items():
            out[f"{unit}.weights"] = p.lr_mult
            out[f"{unit}.bias"] = p.lr_mult
        return out

    def astype(self, dtype) -> "Network":
        return Network(copy.deepcopy(self.spec),
                       {k: v.astype(dtype) for k, v in self.blobs().items()}, self.meta)

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(copy.deepcopy(self.spec),
                          {k: v.copy() for k, v in self.blobs().items()}, copy.deepcopy(self.meta))

    def _inception_params(self, name):
        return {b: self.params[f"{name}/{b}"] for b in INCEPTION_BRANCHES}

    def forward(self, x: np.ndarray, upto: str | None = None) -> np.ndarray:
        expected = tuple(self.shapes[0])
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"batch shape {x.shape} does not match network input [N, {expected}]")
        if upto is not None:
            self.spec.layer(upto)
        self._caches = []
        for layer in self.spec.layers:
            cache = {"x": x}
            kind = layer.kind
            if kind == "conv":
                pre = conv_forward(x, self.params[layer.name], layer.stride, layer.pad)
            elif kind == "fc":
                pre = fc_forward(x, self.params[layer.name])
            elif kind == "pool":
                pre, cache["mask"] = maxpool_forward(x, layer.kernel, layer.stride, layer.pad)
            elif kind == "lrn":
                pre = lrn_forward(x, layer.lrn)
            elif kind in ("relu", "sigmoid"):
                pre = activation_forward(kind, x)
            else:
                pre, cache["inception"] = inception_forward(
                    x, self._inception_params(layer.name), layer.activation)
            cache["pre"] = pre
            if layer.activation and kind in ("conv", "fc"):
                x = activation_forward(layer.activation, pre)
            else:
                x = pre
            self._caches.append(cache)
            if layer.name == upto:
                break
        return x

    def backward(self, grad: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every learnable blob, given d(loss)/d(logits)."""
        if len(self._caches) != len(self.spec.layers):
            raise RuntimeError("backward requires a preceding full forward pass")
        grads: dict[str, np.ndarray] = {}
        for layer, cache in zip(reversed(self.spec.layers), reversed(self._caches)):
            kind, x = layer.kind, cache["x"]
            if layer.activation and kind in ("conv", "fc"):
                grad = activation_backward(layer.activation, cache["pre"], grad)
            if kind == "conv":
                grad, gw, gb = conv_backward(x, self.params[layer.name], grad, layer.stride, layer.pad)
                grads[f"{layer.name}.weights"], grads[f"{layer.name}.bias"] = gw, gb
            elif kind == "fc":
                grad, gw, gb = fc_backward(x, self.params[layer.name], grad)
                grads[f"{layer.name}.weights"], grads[f"{layer.name}.bias"] = gw, gb
            elif kind == "pool":
                grad = maxpool_backward(cache["mask"], grad)
            elif kind == "lrn":
                grad = lrn_backward(x, layer.lrn, grad)
            elif kind in ("relu", "sigmoid"):
                grad = activation_backward(kind, x, grad)
            else:
                grad, branch = inception_backward(cache["inception"], self._inception_params(layer.name),
                                                  grad, layer.activation)
                for b, (gw, gb) in branch.items():
                    grads[f"{layer.name}/{b}.weights"], grads[f"{layer.name}/{b}.bias"] = gw, gb
        self.input_grad = grad
        blobs = self.blobs()
        return {k: grads[k] for k in blobs}


def build_network(spec: NetworkSpec, init_seed: int = 0, dtype=np.float32) -> Network:
    """Glorot-uniform weights and zero biases, drawn in layer order from one seeded stream."""
    shapes = spec.param_shapes()
    rng = np.random.default_rng(init_seed)
    blobs = {}
    for name, shape in shapes.items():
        if name.endswith(".weights"):
            blobs[name] = xavier_uniform(rng, shape, dtype)
        else:
            blobs[name] = np.zeros(shape, dtype=dtype)
    return Network(spec, blobs)


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def backward(net: Network, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    return net.backward(grad_logits)


def extract_features(net: Network, layer_name: str, batch: np.ndarray) -> np.ndarray:
    """Output of ``layer_name`` (after its activation), one flattened row per sample."""
    out = net.forward(batch, upto=layer_name)
    return out.reshape(out.shape[0], -1)


def replace_head(ckpt: Checkpoint, new_num_classes: int, head_lr_mult: float = 10.0,
                 body_lr_mult: float = 1.0, init_seed: int = 0) -> Checkpoint:
    """Swap the final fully-connected layer for a fresh one with ``new_num_classes`` outputs.

    Every other blob is copied unchanged. Learning-rate multipliers are set to
    ``body_lr_mult`` on all body layers and ``head_lr_mult`` on the new head.
    """
    if not ckpt.spec.layers or ckpt.spec.layers[-1].kind != "fc":
        last = ckpt.spec.layers[-1].name if ckpt.spec.layers else None
        raise SurgeryError(f"final layer {last!r} is not fully-connected; cannot replace head")
    if new_num_classes < 2:
        raise SurgeryError(f"new_num_classes must be >= 2, got {new_num_classes}")
    if head_lr_mult < 0 or body_lr_mult < 0:
        raise SurgeryError("learning-rate multipliers must be >= 0")
    if head_lr_mult <= body_lr_mult:
        warnings.warn(f"head lr_mult {head_lr_mult} is not larger than body lr_mult {body_lr_mult}",
                      stacklevel=2)
    ckpt.validate()
    head = ckpt.spec.layers[-1]
    layers = [replace(s, lr_mult=body_lr_mult) if s.learnable else replace(s) for s in ckpt.spec.layers[:-1]]
    layers.append(replace(head, num_output=new_num_classes, lr_mult=head_lr_mult))
    spec = NetworkSpec(layers, tuple(ckpt.spec.input_shape), new_num_classes)
    blobs = {k: v.copy() for k, v in ckpt.blobs.items()}
    w = blobs[f"{head.name}.weights"]
    shape = (new_num_classes, w.shape[1])
    blobs[f"{head.name}.weights"] = xavier_uniform(np.random.default_rng(init_seed), shape, w.dtype)
    blobs[f"{head.name}.bias"] = np.zeros(new_num_classes, dtype=w.dtype)
    meta = copy.deepcopy(ckpt.meta)
    meta["iteration"] = 0
    out = Checkpoint(spec, blobs, meta)
    out.validate()
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    ckpt.validate()
    meta = {"spec": ckpt.spec.to_dict(), **ckpt.meta}
    container.write_container(path, "checkpoint", meta, ckpt.blobs)


def load_checkpoint(path) -> Checkpoint:
    _, meta, blobs = container.read_container(path, expect_kind="checkpoint")
    meta = dict(meta)
    spec = NetworkSpec.from_dict(meta.pop("spec"))
    ckpt = Checkpoint(spec, blobs, meta)
    try:
        ckpt.validate()
    except BuildError as err:
        raise container.ManifestError(str(err)) from None
    return ckpt


def from_checkpoint(ckpt: Checkpoint) -> Network:
    ckpt.validate()
    return Network(copy.deepcopy(ckpt.spec), {k: v.copy() for k, v in ckpt.blobs.items()},
                   copy.deepcopy(ckpt.meta))


def caffenet_spec(num_classes: int = 1000) -> NetworkSpec:
    """Reference five-conv / three-fc architecture on 3x227x227 input.

    Filter groups of the original are not modelled.
    """
    layers = [
        conv("conv1", 96, 11, stride=4),
        pool("pool1", 3, 2),
        lrn("norm1"),
        conv("conv2", 256, 5, pad=2),
        pool("pool2", 3, 2),
        lrn("norm2"),
        # some write-ups list 344 outputs here; 384 is the published architecture
        conv("conv3", 384, 3, pad=1, note="384 outputs; a 344 figure also circulates"),
        conv("conv4", 384, 3, pad=1),
        conv("conv5", 256, 3, pad=1),
        # canonical pooling follows conv1, conv2 and conv5 only
        pool("pool5", 3, 2),
        fc("fc6", 4096, activation="relu"),
        fc("fc7", 4096, activation="relu"),
        fc("fc8", num_classes),
    ]
    return NetworkSpec(layers, (3, 227, 227), num_classes)


def toy_cnn_spec(input_shape=(3, 16, 16), num_classes: int = 3, width: int = 8,
                 hidden: int = 32) -> NetworkSpec:
    """Small conv-pool-conv-pool-fc-fc-fc net for desk-scale experiments."""
    layers = [
        conv("conv1", width, 3, pad=1),
        pool("pool1", 2, 2),
        conv("conv2", 2 * width, 3, pad=1),
        pool("pool2", 2, 2),
        fc("fc6", hidden, activation="relu"),
        fc("fc7", hidden, activation="relu"),
        fc("fc8", num_classes),
    ]
    return NetworkSpec(layers, tuple(input_shape), num_classes)
