"""Desk-scale detector graph: build, run, pre/postprocess.

The graph is a flat DAG of layers (conv, bn, act, pool, global_pool,
concat, upsample, cbam, detect_head); each layer names the indices of the
layers it consumes, with -1 meaning the graph input. The default build is
a narrow single-scale backbone: stem conv s2, four stages of
[downsampling conv s2 + C2f-style block], SPPF, one CBAM, and an
anchor-free head emitting (4 + num_classes) channels on the stride-32
grid. Weights are drawn uniform in [-0.1, 0.1] from a seeded generator;
batch norm starts at gamma=1, beta=0, mean=0, var=1.

Preprocessing letterboxes raw RGB bytes (aspect-preserving nearest resize,
centered on a 114/255 gray canvas, values scaled to [0, 1]). Decoding maps
head cells back through the inverse letterbox: dx/dy are sigmoids relative
to the cell, dw/dh are exponentials capped at 4 strides, class scores are
per-class sigmoids with the argmax class kept per cell.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .cbam import CbamParams, cbam_forward
from .errors import ContainerError, ContractViolation
from . import container
from .profiling import TRACKER
from .tensor import (
    ConvSpec,
    Tensor,
    _sigmoid64,
    activation,
    batchnorm_infer,
    concat_channels,
    conv2d,
    global_pool,
    pool,
    upsample_nearest2x,
)

LAYER_KINDS = (
    "conv",
    "bn",
    "act",
    "pool",
    "global_pool",
    "concat",
    "upsample",
    "cbam",
    "detect_head",
)

HEAD_SLOT = "head"
GRID_STRIDE = 32
PAD_GRAY = 114.0 / 255.0

_SLOT_ARRAYS = {
    "conv": ("weight", "bias"),
    "detect_head": ("weight", "bias"),
    "bn": ("gamma", "beta", "mean", "var"),
    "cbam": ("mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "spatial_weight", "spatial_bias"),
}


@dataclass(frozen=True)
class Layer:
    kind: str
    inputs: tuple[int, ...]
    slot: str | None = None
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelMeta:
    input_size: int
    num_classes: int
    class_names: tuple[str, ...]
    stride: int = GRID_STRIDE


@dataclass
class ModelGraph:
    layers: list[Layer]
    weights: dict[str, dict[str, np.ndarray]]
    meta: ModelMeta

    def __post_init__(self) -> None:
        validate_graph(self)
        total = 0
        for slot in self.weights.values():
            for arr in slot.values():
                TRACKER.register(arr.nbytes)
                total += arr.nbytes
        weakref.finalize(self, TRACKER.unregister, total)

    @property
    def head_index(self) -> int:
        return len(self.layers) - 1

    def param_count(self) -> int:
        return sum(int(a.size) for slot in self.weights.values() for a in slot.values())


def validate_graph(model: ModelGraph) -> None:
    """Structural checks: topology, arity, slot presence, one trailing head."""
    if not model.layers:
        raise ContractViolation("graph has no layers")
    head_indices = [i for i, l in enumerate(model.layers) if l.kind == "detect_head"]
    if len(head_indices) != 1 or head_indices[0] != len(model.layers) - 1:
        raise ContractViolation("graph must end with exactly one detect_head layer")
    for idx, layer in enumerate(model.layers):
        if layer.kind not in LAYER_KINDS:
            raise ContractViolation(f"layer {idx}: unknown kind {layer.kind!r}")
        want_arity = 2 if layer.kind == "concat" else 1
        if len(layer.inputs) != want_arity:
            raise ContractViolation(
                f"layer {idx} ({layer.kind}): expected {want_arity} inputs, got {len(layer.inputs)}"
            )
        for ref in layer.inputs:
            if not -1 <= ref < idx:
                raise ContractViolation(
                    f"layer {idx} ({layer.kind}): input {ref} is not a strictly earlier layer"
                )
        needed = _SLOT_ARRAYS.get(layer.kind)
        if needed is not None:
            if layer.slot is None or layer.slot not in model.weights:
                raise ContractViolation(f"layer {idx} ({layer.kind}): missing slot {layer.slot!r}")
            have = model.weights[layer.slot]
            for name in needed:
                if name not in have:
                    raise ContractViolation(
                        f"slot {layer.slot!r} is missing array {name!r} for layer {idx}"
                    )
    head = model.layers[-1]
    producer = model.layers[head.inputs[0]] if head.inputs[0] >= 0 else None
    if producer is None or producer.kind != "cbam":
        raise ContractViolation("detect_head must consume a cbam layer output")
    infer_shapes(model)


def infer_shapes(model: ModelGraph) -> list[tuple[int, int, int]]:
    """Symbolically propagate (c, h, w) through the graph, checking geometry."""
    s = model.meta.input_size
    shapes: list[tuple[int, int, int]] = []

    def shape_of(ref: int) -> tuple[int, int, int]:
        return (3, s, s) if ref == -1 else shapes[ref]

    def conv_out(idx: int, layer: Layer, c: int, h: int, w: int) -> tuple[int, int, int]:
        weight = model.weights[layer.slot]["weight"]
        oc, icg, k, _ = weight.shape
        groups = int(layer.attrs.get("groups", 1))
        if icg * groups != c:
            raise ContractViolation(
                f"layer {idx}: conv expects {icg * groups} input channels, got {c}"
            )
        stride = int(layer.attrs.get("stride", 1))
        padding = int(layer.attrs.get("padding", 0))
        oh = (h + 2 * padding - k) // stride + 1
        ow = (w + 2 * padding - k) // stride + 1
        if oh < 1 or ow < 1:
            raise ContractViolation(f"layer {idx}: conv output would be empty")
        return (oc, oh, ow)

    for idx, layer in enumerate(model.layers):
        c, h, w = shape_of(layer.inputs[0])
        if layer.kind in ("conv", "detect_head"):
            out = conv_out(idx, layer, c, h, w)
        elif layer.kind == "bn":
            if model.weights[layer.slot]["gamma"].shape != (c,):
                raise ContractViolation(f"layer {idx}: bn params do not match {c} channels")
            out = (c, h, w)
        elif layer.kind == "act":
            out = (c, h, w)
        elif layer.kind == "pool":
            k = int(layer.attrs["kernel"])
            stride = int(layer.attrs.get("stride", k))
            padding = int(layer.attrs.get("padding", 0))
            oh = (h + 2 * padding - k) // stride + 1
            ow = (w + 2 * padding - k) // stride + 1
            if oh < 1 or ow < 1:
                raise ContractViolation(f"layer {idx}: pool output would be empty")
            out = (c, oh, ow)
        elif layer.kind == "global_pool":
            out = (c, 1, 1)
        elif layer.kind == "concat":
            c2, h2, w2 = shape_of(layer.inputs[1])
            if (h, w) != (h2, w2):
                raise ContractViolation(f"layer {idx}: concat spatial mismatch")
            out = (c + c2, h, w)
        elif layer.kind == "upsample":
            out = (c, 2 * h, 2 * w)
        else:  # cbam
            ch = model.weights[layer.slot]["mlp_w1"].shape[1]
            if ch != c:
                raise ContractViolation(f"layer {idx}: cbam params are for {ch} channels, got {c}")
            out = (c, h, w)
        shapes.append(out)
    return shapes


def _round_scaled(base: int, mult: float) -> int:
    return max(1, int(round(base * mult)))


def build_model(
    num_classes: int,
    width_multiple: float = 0.25,
    depth_multiple: float = 0.33,
    input_size: int = 320,
    seed: int = 42,
    cbam_reduction: int = 16,
    cbam_kernel: int = 7,
    cbam_per_stage: bool = False,
    class_names: tuple[str, ...] | None = None,
) -> ModelGraph:
    """Assemble the desk detector with seeded uniform [-0.1, 0.1] weights."""
    if num_classes < 1:
        raise ContractViolation(f"num_classes must be >= 1, got {num_classes}")
    if input_size < GRID_STRIDE or input_size % GRID_STRIDE != 0:
        raise ContractViolation(
            f"input_size must be a positive multiple of {GRID_STRIDE}, got {input_size}"
        )
    if width_multiple <= 0 or depth_multiple <= 0:
        raise ContractViolation("width/depth multiples must be > 0")
    if class_names is None:
        class_names = tuple(f"class{i}" for i in range(num_classes))
    if len(class_names) != num_classes:
        raise ContractViolation(
            f"got {len(class_names)} class names for {num_classes} classes"
        )

    rng = np.random.Generator(np.random.PCG64(seed))
    layers: list[Layer] = []
    weights: dict[str, dict[str, np.ndarray]] = {}

    def uniform(shape: tuple[int, ...]) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=shape).astype(np.float32)

    def add(layer: Layer) -> int:
        layers.append(layer)
        return len(layers) - 1

    def conv(src: int, c_in: int, c_out: int, k: int, s: int, name: str) -> int:
        weights[name] = {"weight": uniform((c_out, c_in, k, k)), "bias": uniform((c_out,))}
        return add(Layer("conv", (src,), name, {"stride": s, "padding": k // 2, "groups": 1}))

    def bn(src: int, c: int, name: str) -> int:
        weights[name] = {
            "gamma": np.ones(c, dtype=np.float32),
            "beta": np.zeros(c, dtype=np.float32),
            "mean": np.zeros(c, dtype=np.float32),
            "var": np.ones(c, dtype=np.float32),
        }
        return add(Layer("bn", (src,), name, {"eps": 1e-5}))

    def cbs(src: int, c_in: int, c_out: int, k: int, s: int, name: str) -> int:
        x = conv(src, c_in, c_out, k, s, f"{name}.conv")
        x = bn(x, c_out, f"{name}.bn")
        return add(Layer("act", (x,), None, {"fn": "silu"}))

    def concat(a: int, b: int) -> int:
        return add(Layer("concat", (a, b)))

    def c2f(src: int, c: int, n: int, name: str) -> int:
        hid = max(1, c // 2)
        a = cbs(src, c, hid, 1, 1, f"{name}.cv1a")
        b = cbs(src, c, hid, 1, 1, f"{name}.cv1b")
        parts = [a, b]
        prev = b
        for j in range(n):
            prev = cbs(prev, hid, hid, 3, 1, f"{name}.m{j}")
            parts.append(prev)
        cat = parts[0]
        for part in parts[1:]:
            cat = concat(cat, part)
        return cbs(cat, hid * (2 + n), c, 1, 1, f"{name}.cv2")

    def cbam(src: int, c: int, name: str) -> int:
        r = cbam_reduction
        while c % r != 0:
            r -= 1
        weights[name] = {
            "mlp_w1": uniform((c // r, c)),
            "mlp_b1": uniform((c // r,)),
            "mlp_w2": uniform((c, c // r)),
            "mlp_b2": uniform((c,)),
            "spatial_weight": uniform((1, 2, cbam_kernel, cbam_kernel)),
            "spatial_bias": uniform((1,)),
        }
        return add(Layer("cbam", (src,), name))

    base_channels = (64, 128, 256, 512, 1024)
    base_depths = (3, 6, 6, 3)
    ch = [_round_scaled(b, width_multiple) for b in base_channels]
    depths = [max(1, int(round(d * depth_multiple))) for d in base_depths]

    x = cbs(-1, 3, ch[0], 3, 2, "stem")
    for i in range(4):
        x = cbs(x, ch[i], ch[i + 1], 3, 2, f"s{i + 1}.ds")
        x = c2f(x, ch[i + 1], depths[i], f"s{i + 1}.c2f")
        if cbam_per_stage:
            x = cbam(x, ch[i + 1], f"s{i + 1}.cbam")

    c_top = ch[4]
    hid = max(1, c_top // 2)
    a = cbs(x, c_top, hid, 1, 1, "sppf.cv1")
    p1 = add(Layer("pool", (a,), None, {"pool": "max", "kernel": 5, "stride": 1, "padding": 2}))
    p2 = add(Layer("pool", (p1,), None, {"pool": "max", "kernel": 5, "stride": 1, "padding": 2}))
    p3 = add(Layer("pool", (p2,), None, {"pool": "max", "kernel": 5, "stride": 1, "padding": 2}))
    cat = concat(concat(concat(a, p1), p2), p3)
    x = cbs(cat, hid * 4, c_top, 1, 1, "sppf.cv2")

    x = cbam(x, c_top, "cbam")
    weights[HEAD_SLOT] = {
        "weight": uniform((4 + num_classes, c_top, 1, 1)),
        "bias": uniform((4 + num_classes,)),
    }
    add(Layer("detect_head", (x,), HEAD_SLOT, {"stride": 1, "padding": 0, "groups": 1}))

    meta = ModelMeta(input_size, num_classes, tuple(class_names))
    return ModelGraph(layers, weights, meta)


def _apply_layer(model: ModelGraph, layer: Layer, ins: list[Tensor]) -> Tensor:
    if layer.kind in ("conv", "detect_head"):
        slot = model.weights[layer.slot]
        spec = ConvSpec(
            slot["weight"],
            slot["bias"],
            stride=int(layer.attrs.get("stride", 1)),
            padding=int(layer.attrs.get("padding", 0)),
            groups=int(layer.attrs.get("groups", 1)),
        )
        return conv2d(ins[0], spec)
    if layer.kind == "bn":
        slot = model.weights[layer.slot]
        return batchnorm_infer(
            ins[0], slot["gamma"], slot["beta"], slot["mean"], slot["var"],
            float(layer.attrs.get("eps", 1e-5)),
        )
    if layer.kind == "act":
        return activation(ins[0], layer.attrs["fn"])
    if layer.kind == "pool":
        return pool(
            ins[0],
            layer.attrs["pool"],
            int(layer.attrs["kernel"]),
            int(layer.attrs.get("stride", layer.attrs["kernel"])),
            int(layer.attrs.get("padding", 0)),
        )
    if layer.kind == "global_pool":
        return global_pool(ins[0], layer.attrs["pool"])
    if layer.kind == "concat":
        return concat_channels(ins[0], ins[1])
    if layer.kind == "upsample":
        return upsample_nearest2x(ins[0])
    if layer.kind == "cbam":
        return cbam_forward(ins[0], CbamParams(**model.weights[layer.slot]))
    raise ContractViolation(f"unknown layer kind {layer.kind!r}")


def forward(model: ModelGraph, x: Tensor, hook=None) -> Tensor:
    """Run the graph on a (1, 3, S, S) input, freeing intermediates eagerly.

    Intermediate outputs are dropped as soon as their last consumer has run,
    so the instrumented allocator sees a deterministic peak. hook(idx, out)
    is called for every layer output; calibration uses it.
    """
    n, c, h, w = x.shape
    s = model.meta.input_size
    if (n, c, h, w) != (1, 3, s, s):
        raise ContractViolation(f"forward expects input (1, 3, {s}, {s}), got {(n, c, h, w)}")
    remaining = [0] * len(model.layers)
    for layer in model.layers:
        for ref in layer.inputs:
            if ref >= 0:
                remaining[ref] += 1
    outputs: list[Tensor | None] = [None] * len(model.layers)
    for idx, layer in enumerate(model.layers):
        ins = [x if ref == -1 else outputs[ref] for ref in layer.inputs]
        out = _apply_layer(model, layer, ins)
        if hook is not None:
            hook(idx, out)
        outputs[idx] = out
        del ins
        for ref in layer.inputs:
            if ref >= 0:
                remaining[ref] -= 1
                if remaining[ref] == 0:
                    outputs[ref] = None
    return outputs[-1]


# --- preprocessing -----------------------------------------------------------


@dataclass(frozen=True)
class LetterboxMeta:
    orig_w: int
    orig_h: int
    scale: float
    pad_x: float
    pad_y: float
    target: int


def _nearest_indices(dst: int, src: int) -> np.ndarray:
    return np.minimum(((np.arange(dst) + 0.5) * (src / dst)).astype(np.int64), src - 1)


def letterbox(rgb: bytes, width: int, height: int, target: int) -> tuple[Tensor, LetterboxMeta]:
    """Raw 8-bit RGB bytes -> (1, 3, target, target) tensor in [0, 1].

    Aspect-preserving nearest-neighbor resize, centered with integer pad
    offsets, gray 114/255 padding.
    """
    if width < 1 or height < 1:
        raise ContractViolation(f"image dims must be >= 1, got {width}x{height}")
    if target < 1:
        raise ContractViolation(f"letterbox target must be >= 1, got {target}")
    if len(rgb) != width * height * 3:
        raise ContractViolation(
            f"expected {width * height * 3} RGB bytes for {width}x{height}, got {len(rgb)}"
        )
    img = np.frombuffer(rgb, dtype=np.uint8).reshape(height, width, 3)
    scale = min(target / width, target / height)
    new_w = max(1, int(round(width * scale)))
    new_h = max(1, int(round(height * scale)))
    pad_x = (target - new_w) // 2
    pad_y = (target - new_h) // 2
    resized = img[_nearest_indices(new_h, height)][:, _nearest_indices(new_w, width)]
    canvas = np.full((target, target, 3), np.float32(PAD_GRAY), dtype=np.float32)
    canvas[pad_y : pad_y + new_h, pad_x : pad_x + new_w] = resized.astype(np.float32) / 255.0
    chw = np.transpose(canvas, (2, 0, 1))[None]
    return Tensor(chw), LetterboxMeta(width, height, scale, float(pad_x), float(pad_y), target)


def letterbox_point(meta: LetterboxMeta, x: float, y: float) -> tuple[float, float]:
    """Original-image coordinates -> letterboxed-canvas coordinates."""
    return x * meta.scale + meta.pad_x, y * meta.scale + meta.pad_y


def unletterbox_point(meta: LetterboxMeta, x: float, y: float) -> tuple[float, float]:
    """Letterboxed-canvas coordinates -> original-image coordinates."""
    return (x - meta.pad_x) / meta.scale, (y - meta.pad_y) / meta.scale


# --- postprocessing ----------------------------------------------------------


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: tuple[float, float, float, float]  # x1, y1, x2, y2 in original pixels

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ContractViolation(f"score must be in [0, 1], got {self.score}")
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ContractViolation(f"box corners must be ordered, got {self.box}")


_MAX_SIDE_LOG = math.log(4.0)  # dw/dh exponent cap: 4 strides


def decode(
    raw: Tensor, meta: LetterboxMeta, conf_threshold: float = 0.25
) -> list[Detection]:
    """Raw (1, 4+K, G, G) head tensor -> detections in original pixel coords.

    Per cell: class = argmax of the K sigmoid scores (kept if score >=
    conf_threshold); center = (cell + sigmoid(dx/dy)) * stride; size =
    exp(dw/dh) * stride capped at 4 strides. Boxes are mapped through the
    inverse letterbox, clipped to the image, and dropped if clipping
    degenerates them, so every returned box satisfies 0 <= x1 < x2 <= W.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise ContractViolation(f"conf_threshold must be in [0, 1], got {conf_threshold}")
    n, ck, gh, gw = raw.shape
    if n != 1 or ck < 5:
        raise ContractViolation(f"head tensor must be (1, 4+K, G, G) with K >= 1, got {raw.shape}")
    arr = raw.arr[0].astype(np.float64)
    stride = meta.target / gh
    scores = _sigmoid64(arr[4:])
    cls = scores.argmax(axis=0)
    best = scores.max(axis=0)
    gy, gx = np.mgrid[0:gh, 0:gw]
    cx = (gx + _sigmoid64(arr[0])) * stride
    cy = (gy + _sigmoid64(arr[1])) * stride
    bw = np.exp(np.minimum(arr[2], _MAX_SIDE_LOG)) * stride
    bh = np.exp(np.minimum(arr[3], _MAX_SIDE_LOG)) * stride
    dets: list[Detection] = []
    for iy in range(gh):
        for ix in range(gw):
            score = float(best[iy, ix])
            if score < conf_threshold:
                continue
            x1, y1 = unletterbox_point(meta, cx[iy, ix] - bw[iy, ix] / 2, cy[iy, ix] - bh[iy, ix] / 2)
            x2, y2 = unletterbox_point(meta, cx[iy, ix] + bw[iy, ix] / 2, cy[iy, ix] + bh[iy, ix] / 2)
            x1, x2 = max(0.0, x1), min(float(meta.orig_w), x2)
            y1, y2 = max(0.0, y1), min(float(meta.orig_h), y2)
            if x1 >= x2 or y1 >= y2:
                continue
            dets.append(Detection(int(cls[iy, ix]), score, (x1, y1, x2, y2)))
    return dets


def iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Intersection over union of two corner-form boxes (0 when disjoint)."""
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _det_order_key(d: Detection):
    return (-d.score, d.class_id, d.box[0], d.box[1])


def nms(dets: list[Detection], iou_threshold: float = 0.45) -> list[Detection]:
    """Greedy per-class suppression of overlaps with IoU strictly above the
    threshold (IoU exactly equal to the threshold survives).

    Candidates are ordered by (score desc, class_id asc, x1 asc, y1 asc);
    the survivors come back in that same deterministic order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ContractViolation(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    ordered = sorted(dets, key=_det_order_key)
    kept: list[Detection] = []
    kept_by_class: dict[int, list[Detection]] = {}
    for d in ordered:
        rivals = kept_by_class.setdefault(d.class_id, [])
        if all(iou(d.box, r.box) <= iou_threshold for r in rivals):
            rivals.append(d)
            kept.append(d)
    return kept


# --- detection record text format -------------------------------------------


def format_detection(d: Detection) -> str:
    """One text record: class_id, score to 4 decimals, corners to 1 decimal."""
    x1, y1, x2, y2 = d.box
    return f"{d.class_id} {d.score:.4f} {x1:.1f} {y1:.1f} {x2:.1f} {y2:.1f}"


def parse_detection(line: str) -> Detection:
    parts = line.split()
    if len(parts) != 6:
        raise ContractViolation(f"detection record needs 6 fields, got {len(parts)}: {line!r}")
    return Detection(int(parts[0]), float(parts[1]), tuple(float(p) for p in parts[2:]))


# --- serialization -----------------------------------------------------------


def _layers_to_json(layers: list[Layer]) -> list[dict]:
    return [
        {"kind": l.kind, "inputs": list(l.inputs), "slot": l.slot, "attrs": l.attrs}
        for l in layers
    ]


def _layers_from_json(doc: list[dict]) -> list[Layer]:
    return [
        Layer(d["kind"], tuple(int(i) for i in d["inputs"]), d.get("slot"), dict(d.get("attrs") or {}))
        for d in doc
    ]


def _meta_to_json(meta: ModelMeta) -> dict:
    return {
        "input_size": meta.input_size,
        "num_classes": meta.num_classes,
        "class_names": list(meta.class_names),
        "stride": meta.stride,
    }


def _meta_from_json(doc: dict) -> ModelMeta:
    return ModelMeta(
        int(doc["input_size"]),
        int(doc["num_classes"]),
        tuple(doc["class_names"]),
        int(doc.get("stride", GRID_STRIDE)),
    )


def save_model_bytes(model: ModelGraph) -> bytes:
    """Serialize the float graph to the weights-container byte format."""
    tensors: list[tuple[str, np.ndarray]] = []
    for slot in sorted(model.weights):
        for name in sorted(model.weights[slot]):
            tensors.append((f"{slot}/{name}", model.weights[slot][name]))
    doc = {
        "container": "float",
        "layers": _layers_to_json(model.layers),
        "meta": _meta_to_json(model.meta),
    }
    return container.write_container(doc, tensors)


def save_model(model: ModelGraph, path: str) -> int:
    blob = save_model_bytes(model)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_model(path_or_bytes) -> ModelGraph:
    doc, tensors = container.read_container(path_or_bytes)
    if doc.get("container") != "float":
        raise ContainerError(f"expected a float container, got {doc.get('container')!r}")
    weights: dict[str, dict[str, np.ndarray]] = {}
    for key, arr in tensors.items():
        slot, _, name = key.rpartition("/")
        weights.setdefault(slot, {})[name] = arr
    return ModelGraph(_layers_from_json(doc["layers"]), weights, _meta_from_json(doc["meta"]))


def model_size_bytes(model: ModelGraph) -> int:
    """Exact serialized container length in bytes."""
    return len(save_model_bytes(model))
