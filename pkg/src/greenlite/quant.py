"""Post-training int8 quantization and the quantized inference path.

Scheme (fixed): conv weights are per-channel symmetric int8 (scale =
max|w_c| / 127, zero point 0, one scale per output channel); activations
are per-tensor affine int8 with scale = (max' - min') / 255 over a
calibrated range widened to include 0, so real zero is exactly
representable. Rounding is half-away-from-zero everywhere. Biases are
stored as int32 at scale s_in * s_w_c. Batch norm is folded into the
preceding conv before quantization; CBAM attention arithmetic stays in
float (its weights are stored int8 and dequantized on load); the detect
head's accumulator is dequantized exactly, so the model output is float32
while every internal activation is int8.

Convolutions accumulate in exact integer arithmetic:
  acc = sum (q_in - z_in) * q_w + q_bias          (int32 range)
  q_out = clamp(round(acc * s_in * s_w_c / s_out) + z_out, -128, 127)

Activation functions run as exact 256-entry lookup tables composing
dequantize -> f -> requantize. Max pooling and nearest upsampling reuse
their input's params (value-preserving, no requantization error); concat
inputs are requantized only if their params differ from the output's.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from . import container as container_io
from .cbam import CbamParams, cbam_forward
from .errors import (
    CalibrationCoverageError,
    ContainerError,
    ContractViolation,
    DegenerateRangeError,
)
from .graph import (
    Layer,
    ModelGraph,
    ModelMeta,
    _layers_from_json,
    _layers_to_json,
    _meta_from_json,
    _meta_to_json,
    validate_graph,
)
from .profiling import TRACKER
from .tensor import Tensor, _sigmoid64, batchnorm_infer, global_pool, pool

PER_TENSOR_AFFINE = "per_tensor_affine"
PER_CHANNEL_SYMMETRIC = "per_channel_symmetric"

I32_MIN, I32_MAX = -(2**31), 2**31 - 1


def round_half_away(x):
    """Round to nearest with ties away from zero (scalar or ndarray)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class QuantParams:
    """int8 grid: x ~ scale * (q - zero_point); arrays are length 1 or C."""

    scheme: str
    scale: np.ndarray
    zero_point: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale", np.atleast_1d(np.asarray(self.scale, dtype=np.float64)))
        object.__setattr__(
            self, "zero_point", np.atleast_1d(np.asarray(self.zero_point, dtype=np.int64))
        )
        if self.scheme not in (PER_TENSOR_AFFINE, PER_CHANNEL_SYMMETRIC):
            raise ContractViolation(f"unknown quant scheme {self.scheme!r}")
        if self.scale.shape != self.zero_point.shape:
            raise ContractViolation("scale and zero_point must have matching lengths")
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale <= 0):
            raise ContractViolation("quant scales must be finite and > 0")
        if np.any(self.zero_point < -128) or np.any(self.zero_point > 127):
            raise ContractViolation("zero points must lie in [-128, 127]")
        if self.scheme == PER_CHANNEL_SYMMETRIC and np.any(self.zero_point != 0):
            raise ContractViolation("symmetric params must have zero_point 0")

    def same_grid(self, other: "QuantParams") -> bool:
        return (
            self.scheme == other.scheme
            and np.array_equal(self.scale, other.scale)
            and np.array_equal(self.zero_point, other.zero_point)
        )


def choose_params(vmin: float, vmax: float, scheme: str = PER_TENSOR_AFFINE) -> QuantParams:
    """Pick int8 params for an observed [vmin, vmax] value range.

    Affine widens the range to include 0 (so 0 is exactly representable)
    and spreads it over 255 steps; symmetric centers max(|vmin|, |vmax|)
    over +-127. An all-zero/empty range has no usable grid.
    """
    if not (math.isfinite(vmin) and math.isfinite(vmax)) or vmin > vmax:
        raise ContractViolation(f"bad range [{vmin}, {vmax}]")
    if scheme == PER_TENSOR_AFFINE:
        lo, hi = min(vmin, 0.0), max(vmax, 0.0)
        if lo == 0.0 and hi == 0.0:
            raise DegenerateRangeError("cannot quantize an all-zero range")
        scale = (hi - lo) / 255.0
        zp = int(np.clip(round_half_away(-lo / scale) - 128, -128, 127))
        return QuantParams(PER_TENSOR_AFFINE, np.array([scale]), np.array([zp]))
    if scheme == PER_CHANNEL_SYMMETRIC:
        m = max(abs(vmin), abs(vmax))
        if m == 0.0:
            raise DegenerateRangeError("cannot quantize an all-zero range")
        return QuantParams(PER_CHANNEL_SYMMETRIC, np.array([m / 127.0]), np.array([0]))
    raise ContractViolation(f"unknown quant scheme {scheme!r}")


def weight_params(weight: np.ndarray) -> QuantParams:
    """Per-channel symmetric params along the leading (out-channel) axis.

    All-zero channels get scale 1.0; they quantize to exact zeros either way.
    """
    flat = np.abs(weight.reshape(weight.shape[0], -1)).max(axis=1).astype(np.float64)
    scales = np.where(flat > 0, flat / 127.0, 1.0)
    return QuantParams(PER_CHANNEL_SYMMETRIC, scales, np.zeros(len(scales), dtype=np.int64))


def quantize_array(arr: np.ndarray, params: QuantParams) -> np.ndarray:
    x = np.asarray(arr, dtype=np.float64)
    if len(params.scale) == 1:
        scale, zp = params.scale[0], params.zero_point[0]
        q = round_half_away(x / scale) + zp
    else:
        if x.shape[0] != len(params.scale):
            raise ContractViolation(
                f"per-channel params are for {len(params.scale)} channels, got {x.shape[0]}"
            )
        shape = (len(params.scale),) + (1,) * (x.ndim - 1)
        q = round_half_away(x / params.scale.reshape(shape)) + params.zero_point.reshape(shape)
    return np.clip(q, -128, 127).astype(np.int8)


def dequantize_array(q: np.ndarray, params: QuantParams) -> np.ndarray:
    qi = np.asarray(q, dtype=np.float64)
    if len(params.scale) == 1:
        x = params.scale[0] * (qi - params.zero_point[0])
    else:
        shape = (len(params.scale),) + (1,) * (qi.ndim - 1)
        x = params.scale.reshape(shape) * (qi - params.zero_point.reshape(shape))
    return x.astype(np.float32)


class QuantizedTensor:
    """Dense (n, c, h, w) int8 payload carrying its own per-tensor params."""

    __slots__ = ("arr", "params", "__weakref__")

    def __init__(self, arr: np.ndarray, params: QuantParams) -> None:
        arr = np.ascontiguousarray(arr, dtype=np.int8)
        if arr.ndim != 4:
            raise ContractViolation(f"quantized tensor must be 4-d, got ndim={arr.ndim}")
        if len(params.scale) != 1:
            raise ContractViolation("activation tensors use per-tensor params")
        self.arr = arr
        self.params = params
        nbytes = arr.size
        TRACKER.register(nbytes)
        weakref.finalize(self, TRACKER.unregister, nbytes)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(int(d) for d in self.arr.shape)  # type: ignore[return-value]


def quantize_tensor(x: Tensor, params: QuantParams) -> QuantizedTensor:
    return QuantizedTensor(quantize_array(x.arr, params), params)


def dequantize(q: QuantizedTensor) -> Tensor:
    return Tensor(dequantize_array(q.arr, q.params))


# --- calibration --------------------------------------------------------------


INPUT_SLOT = "input"


def slot_key(layer_index: int) -> str:
    return INPUT_SLOT if layer_index == -1 else f"L{layer_index:03d}"


@dataclass
class SlotRange:
    vmin: float
    vmax: float
    count: int


class CalibrationStats:
    """Per-activation-slot running min/max over calibration images."""

    def __init__(self) -> None:
        self.ranges: dict[str, SlotRange] = {}

    def observe(self, key: str, arr: np.ndarray) -> None:
        vmin, vmax = float(arr.min()), float(arr.max())
        cur = self.ranges.get(key)
        if cur is None:
            self.ranges[key] = SlotRange(vmin, vmax, 1)
        else:
            cur.vmin = min(cur.vmin, vmin)
            cur.vmax = max(cur.vmax, vmax)
            cur.count += 1

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        out = CalibrationStats()
        for src in (self, other):
            for key, r in src.ranges.items():
                cur = out.ranges.get(key)
                if cur is None:
                    out.ranges[key] = SlotRange(r.vmin, r.vmax, r.count)
                else:
                    cur.vmin = min(cur.vmin, r.vmin)
                    cur.vmax = max(cur.vmax, r.vmax)
                    cur.count += r.count
        return out

    def keys(self):
        return self.ranges.keys()


def calibrate(model: ModelGraph, images) -> CalibrationStats:
    """Run the float graph over images, recording every slot's min/max."""
    from .graph import forward  # local import keeps module load order simple

    stats = CalibrationStats()
    count = 0
    for img in images:
        count += 1
        stats.observe(INPUT_SLOT, img.arr)
        forward(model, img, hook=lambda idx, out: stats.observe(slot_key(idx), out.arr))
    if count == 0:
        raise ContractViolation("calibration needs at least one image")
    return stats


# --- batch norm folding -------------------------------------------------------


def fold_batchnorm(model: ModelGraph) -> tuple[ModelGraph, list[str]]:
    """Fold conv+bn pairs; returns the folded graph and, per new layer, the
    calibration key of its output in the original model's indexing."""
    consumers = [0] * len(model.layers)
    for layer in model.layers:
        for ref in layer.inputs:
            if ref >= 0:
                consumers[ref] += 1
    foldable: dict[int, int] = {}  # bn index -> conv index
    for idx, layer in enumerate(model.layers):
        if layer.kind != "bn":
            continue
        src = layer.inputs[0]
        if src >= 0 and model.layers[src].kind in ("conv", "detect_head") and consumers[src] == 1:
            foldable[idx] = src

    new_weights = {
        slot: {name: arr.copy() for name, arr in arrays.items()}
        for slot, arrays in model.weights.items()
    }
    new_layers: list[Layer] = []
    stats_keys: list[str] = []
    remap: dict[int, int] = {}
    conv_new_index: dict[int, int] = {}

    for idx, layer in enumerate(model.layers):
        if idx in foldable:
            conv_idx = foldable[idx]
            conv_layer = model.layers[conv_idx]
            bn = model.weights[layer.slot]
            eps = float(layer.attrs.get("eps", 1e-5))
            k = bn["gamma"].astype(np.float64) / np.sqrt(bn["var"].astype(np.float64) + eps)
            slot = new_weights[conv_layer.slot]
            w64 = slot["weight"].astype(np.float64) * k[:, None, None, None]
            b64 = (slot["bias"].astype(np.float64) - bn["mean"].astype(np.float64)) * k
            b64 += bn["beta"].astype(np.float64)
            slot["weight"] = w64.astype(np.float32)
            slot["bias"] = b64.astype(np.float32)
            del new_weights[layer.slot]
            new_idx = conv_new_index[conv_idx]
            remap[idx] = new_idx
            # The folded conv now produces what the bn produced.
            stats_keys[new_idx] = slot_key(idx)
            continue
        new_inputs = tuple(ref if ref == -1 else remap[ref] for ref in layer.inputs)
        new_layers.append(Layer(layer.kind, new_inputs, layer.slot, dict(layer.attrs)))
        remap[idx] = len(new_layers) - 1
        if layer.kind in ("conv", "detect_head"):
            conv_new_index[idx] = len(new_layers) - 1
        stats_keys.append(slot_key(idx))

    folded = ModelGraph(new_layers, new_weights, model.meta)
    return folded, stats_keys


# --- quantized model ----------------------------------------------------------


_CBAM_WEIGHTS = ("mlp_w1", "mlp_w2", "spatial_weight")
_CBAM_FLOATS = ("mlp_b1", "mlp_b2", "spatial_bias")


class QuantizedModel:
    """Folded graph with int8 conv weights and per-slot activation params."""

    def __init__(
        self,
        layers: list[Layer],
        meta: ModelMeta,
        conv_weights: dict[str, dict[str, np.ndarray]],
        cbam_weights: dict[str, dict[str, np.ndarray]],
        act_params: dict[str, QuantParams],
    ) -> None:
        self.layers = layers
        self.meta = meta
        self.conv_weights = conv_weights
        self.cbam_weights = cbam_weights
        self.act_params = act_params
        self._cbam_cache: dict[str, CbamParams] = {}
        total = 0
        for slot in list(conv_weights.values()) + list(cbam_weights.values()):
            for arr in slot.values():
                TRACKER.register(arr.nbytes)
                total += arr.nbytes
        weakref.finalize(self, TRACKER.unregister, total)

    def cbam_params(self, slot: str) -> CbamParams:
        if slot not in self._cbam_cache:
            w = self.cbam_weights[slot]
            kwargs = {}
            for name in _CBAM_WEIGHTS:
                params = QuantParams(
                    PER_CHANNEL_SYMMETRIC,
                    w[f"{name}_scale"],
                    np.zeros(len(w[f"{name}_scale"]), dtype=np.int64),
                )
                kwargs[name] = dequantize_array(w[f"{name}_q"], params)
            for name in _CBAM_FLOATS:
                kwargs[name] = w[name]
            self._cbam_cache[slot] = CbamParams(**kwargs)
        return self._cbam_cache[slot]

    def param_count(self) -> int:
        groups = list(self.conv_weights.values()) + list(self.cbam_weights.values())
        return sum(int(a.size) for slot in groups for a in slot.values())


def quantize_model(model: ModelGraph, stats: CalibrationStats) -> QuantizedModel:
    """Fold bn, check stats coverage, pick activation params, quantize weights."""
    folded, stats_keys = fold_batchnorm(model)
    needed = {INPUT_SLOT} | set(stats_keys)
    missing = needed - set(stats.keys())
    if missing:
        raise CalibrationCoverageError(sorted(missing))

    def from_stats(key: str) -> QuantParams:
        r = stats.ranges[key]
        return choose_params(r.vmin, r.vmax, PER_TENSOR_AFFINE)

    act_params: dict[str, QuantParams] = {INPUT_SLOT: from_stats(INPUT_SLOT)}
    for j, layer in enumerate(folded.layers):
        if layer.kind == "detect_head":
            continue  # head output stays float
        is_max_pool = layer.kind == "pool" and layer.attrs.get("pool") == "max"
        if is_max_pool or layer.kind == "upsample":
            # Value-preserving ops inherit their input's grid exactly.
            act_params[slot_key(j)] = act_params[slot_key(layer.inputs[0])]
        else:
            act_params[slot_key(j)] = from_stats(stats_keys[j])

    conv_weights: dict[str, dict[str, np.ndarray]] = {}
    for j, layer in enumerate(folded.layers):
        if layer.kind not in ("conv", "detect_head"):
            continue
        slot = folded.weights[layer.slot]
        wp = weight_params(slot["weight"])
        in_scale = act_params[slot_key(layer.inputs[0])].scale[0]
        bias_scale = in_scale * wp.scale
        q_bias = np.clip(round_half_away(slot["bias"].astype(np.float64) / bias_scale), I32_MIN, I32_MAX)
        conv_weights[layer.slot] = {
            "q_weight": quantize_array(slot["weight"], wp),
            "w_scale": wp.scale.copy(),
            "q_bias": q_bias.astype(np.int32),
        }

    cbam_weights: dict[str, dict[str, np.ndarray]] = {}
    for layer in folded.layers:
        if layer.kind != "cbam" or layer.slot in cbam_weights:
            continue
        slot = folded.weights[layer.slot]
        packed: dict[str, np.ndarray] = {}
        for name in _CBAM_WEIGHTS:
            wp = weight_params(slot[name])
            packed[f"{name}_q"] = quantize_array(slot[name], wp)
            packed[f"{name}_scale"] = wp.scale.copy()
        for name in _CBAM_FLOATS:
            packed[name] = slot[name].copy()
        cbam_weights[layer.slot] = packed

    return QuantizedModel(folded.layers, folded.meta, conv_weights, cbam_weights, act_params)


# --- quantized kernels --------------------------------------------------------


def _int_conv_acc(
    q_in: np.ndarray,
    z_in: int,
    q_weight: np.ndarray,
    q_bias: np.ndarray,
    stride: int,
    padding: int,
    groups: int,
) -> np.ndarray:
    """Exact integer accumulator (n, oc, oh, ow) including the int32 bias.

    Accumulation runs in float64: every product |(q - z) * w| <= 255 * 127,
    so any partial sum stays below 2^53 for fan-in < 2^38 and float64 adds
    of integers that small are exact regardless of summation order. The
    result is integer-valued bit for bit, but BLAS does the matmul.
    """
    n, c, h, w = q_in.shape
    oc, icg, k, _ = q_weight.shape
    if icg * groups != c:
        raise ContractViolation(f"quantized conv expects {icg * groups} channels, got {c}")
    if icg * k * k > 2**38:
        raise ContractViolation("conv fan-in too large for exact float64 accumulation")
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ContractViolation("quantized conv output would be empty")
    padded = np.pad(
        q_in, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=np.int8(z_in),
    )
    cols = np.empty((n, c, k, k, oh, ow), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, ky, kx] = padded[
                :, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride
            ]
    cols -= float(z_in)
    cols = cols.reshape(n, groups, icg * k * k, oh * ow)
    wmat = q_weight.reshape(groups, oc // groups, icg * k * k).astype(np.float64)
    acc = np.matmul(wmat[None], cols).reshape(n, oc, oh, ow)
    return acc + q_bias.astype(np.float64).reshape(1, oc, 1, 1)


@dataclass
class QConvSpec:
    """int8 conv weights: per-channel scales, int32 bias at s_in * s_w_c."""

    q_weight: np.ndarray
    w_scale: np.ndarray
    q_bias: np.ndarray
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self) -> None:
        self.q_weight = np.ascontiguousarray(self.q_weight, dtype=np.int8)
        self.w_scale = np.asarray(self.w_scale, dtype=np.float64).reshape(-1)
        self.q_bias = np.ascontiguousarray(self.q_bias, dtype=np.int32)
        oc = self.q_weight.shape[0]
        if self.w_scale.shape != (oc,) or self.q_bias.shape != (oc,):
            raise ContractViolation("per-channel scale/bias length must equal out_channels")
        if np.any(self.w_scale <= 0):
            raise ContractViolation("weight scales must be > 0")


def quantized_conv2d(x: QuantizedTensor, spec: QConvSpec, out_params: QuantParams) -> QuantizedTensor:
    """int8 conv: integer accumulation, then one requantization to out_params."""
    if len(out_params.scale) != 1:
        raise ContractViolation("conv output params must be per-tensor")
    acc = _int_conv_acc(
        x.arr, int(x.params.zero_point[0]), spec.q_weight, spec.q_bias,
        spec.stride, spec.padding, spec.groups,
    )
    m = x.params.scale[0] * spec.w_scale / out_params.scale[0]
    q = round_half_away(acc * m.reshape(1, -1, 1, 1)) + out_params.zero_point[0]
    return QuantizedTensor(np.clip(q, -128, 127).astype(np.int8), out_params)


def _conv_float_out(x: QuantizedTensor, spec: QConvSpec) -> Tensor:
    """int8 conv with an exactly dequantized float32 output (used by the head)."""
    acc = _int_conv_acc(
        x.arr, int(x.params.zero_point[0]), spec.q_weight, spec.q_bias,
        spec.stride, spec.padding, spec.groups,
    )
    scale = (x.params.scale[0] * spec.w_scale).reshape(1, -1, 1, 1)
    return Tensor((acc * scale).astype(np.float32))


def _pointwise_lut(in_params: QuantParams, out_params: QuantParams, fn) -> np.ndarray:
    """256-entry int8 -> int8 table for quant(fn(dequant(v)))."""
    v = np.arange(-128, 128, dtype=np.float64)
    x = in_params.scale[0] * (v - in_params.zero_point[0])
    q = round_half_away(fn(x) / out_params.scale[0]) + out_params.zero_point[0]
    return np.clip(q, -128, 127).astype(np.int8)


_ACT_FNS = {
    "silu": lambda x: x * _sigmoid64(x),
    "sigmoid": _sigmoid64,
    "identity": lambda x: x,
}


def _apply_lut(q: QuantizedTensor, lut: np.ndarray, out_params: QuantParams) -> QuantizedTensor:
    return QuantizedTensor(np.take(lut, q.arr.astype(np.int16) + 128), out_params)


def _requant(q: QuantizedTensor, out_params: QuantParams) -> QuantizedTensor:
    if q.params.same_grid(out_params):
        return q
    return _apply_lut(q, _pointwise_lut(q.params, out_params, lambda x: x), out_params)


def _maxpool_int8(q: QuantizedTensor, kernel: int, stride: int, padding: int) -> QuantizedTensor:
    n, c, h, w = q.shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ContractViolation("pool output would be empty")
    padded = np.pad(
        q.arr, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=np.int8(-128),
    )
    out = None
    for ky in range(kernel):
        for kx in range(kernel):
            sl = padded[:, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride]
            out = sl.copy() if out is None else np.maximum(out, sl)
    return QuantizedTensor(out, q.params)


def forward_quantized(model: QuantizedModel, x: Tensor) -> Tensor:
    """Run the int8 graph on a float (1, 3, S, S) input; returns the float head."""
    n, c, h, w = x.shape
    s = model.meta.input_size
    if (n, c, h, w) != (1, 3, s, s):
        raise ContractViolation(f"forward expects input (1, 3, {s}, {s}), got {(n, c, h, w)}")
    remaining = [0] * len(model.layers)
    for layer in model.layers:
        for ref in layer.inputs:
            if ref >= 0:
                remaining[ref] += 1

    q_input = quantize_tensor(x, model.act_params[INPUT_SLOT])
    outputs: list[object] = [None] * len(model.layers)

    def fetch(ref: int):
        return q_input if ref == -1 else outputs[ref]

    result: Tensor | None = None
    for idx, layer in enumerate(model.layers):
        out_params = model.act_params.get(slot_key(idx))
        if layer.kind in ("conv", "detect_head"):
            qw = model.conv_weights[layer.slot]
            spec = QConvSpec(
                qw["q_weight"], qw["w_scale"], qw["q_bias"],
                stride=int(layer.attrs.get("stride", 1)),
                padding=int(layer.attrs.get("padding", 0)),
                groups=int(layer.attrs.get("groups", 1)),
            )
            if layer.kind == "detect_head":
                out = _conv_float_out(fetch(layer.inputs[0]), spec)
            else:
                out = quantized_conv2d(fetch(layer.inputs[0]), spec, out_params)
        elif layer.kind == "act":
            qin = fetch(layer.inputs[0])
            lut = _pointwise_lut(qin.params, out_params, _ACT_FNS[layer.attrs["fn"]])
            out = _apply_lut(qin, lut, out_params)
        elif layer.kind == "pool" and layer.attrs.get("pool") == "max":
            qin = fetch(layer.inputs[0])
            out = _requant(
                _maxpool_int8(
                    qin,
                    int(layer.attrs["kernel"]),
                    int(layer.attrs.get("stride", layer.attrs["kernel"])),
                    int(layer.attrs.get("padding", 0)),
                ),
                out_params,
            )
        elif layer.kind == "upsample":
            qin = fetch(layer.inputs[0])
            rep = np.repeat(np.repeat(qin.arr, 2, axis=2), 2, axis=3)
            out = _requant(QuantizedTensor(rep, qin.params), out_params)
        elif layer.kind == "concat":
            parts = [_requant(fetch(ref), out_params) for ref in layer.inputs]
            out = QuantizedTensor(np.concatenate([p.arr for p in parts], axis=1), out_params)
        elif layer.kind == "cbam":
            qin = fetch(layer.inputs[0])
            refined = cbam_forward(dequantize(qin), model.cbam_params(layer.slot))
            out = quantize_tensor(refined, out_params)
        elif layer.kind == "bn":
            raise ContractViolation("quantized graph contains an unfolded bn layer")
        elif layer.kind == "pool":
            qin = fetch(layer.inputs[0])
            f = pool(
                dequantize(qin), layer.attrs["pool"], int(layer.attrs["kernel"]),
                int(layer.attrs.get("stride", layer.attrs["kernel"])),
                int(layer.attrs.get("padding", 0)),
            )
            out = quantize_tensor(f, out_params)
        elif layer.kind == "global_pool":
            out = quantize_tensor(global_pool(dequantize(fetch(layer.inputs[0])), layer.attrs["pool"]), out_params)
        else:
            raise ContractViolation(f"unsupported quantized layer kind {layer.kind!r}")
        outputs[idx] = out
        if layer.kind == "detect_head":
            result = out
        for ref in layer.inputs:
            if ref >= 0:
                remaining[ref] -= 1
                if remaining[ref] == 0:
                    outputs[ref] = None
    return result


# --- serialization ------------------------------------------------------------


def save_quantized_bytes(model: QuantizedModel) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = []
    for slot in sorted(model.conv_weights):
        for name in ("q_weight", "w_scale", "q_bias"):
            tensors.append((f"{slot}/{name}", model.conv_weights[slot][name]))
    for slot in sorted(model.cbam_weights):
        for name in sorted(model.cbam_weights[slot]):
            tensors.append((f"{slot}/{name}", model.cbam_weights[slot][name]))
    doc = {
        "container": "int8",
        "layers": _layers_to_json(model.layers),
        "meta": _meta_to_json(model.meta),
        "act_params": {
            key: {"scale": float(p.scale[0]), "zero_point": int(p.zero_point[0])}
            for key, p in sorted(model.act_params.items())
        },
        "conv_slots": sorted(model.conv_weights),
        "cbam_slots": sorted(model.cbam_weights),
    }
    return container_io.write_container(doc, tensors)


def save_quantized(model: QuantizedModel, path: str) -> int:
    blob = save_quantized_bytes(model)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_quantized(path_or_bytes) -> QuantizedModel:
    doc, tensors = container_io.read_container(path_or_bytes)
    if doc.get("container") != "int8":
        raise ContainerError(f"expected an int8 container, got {doc.get('container')!r}")
    conv_weights: dict[str, dict[str, np.ndarray]] = {}
    for slot in doc["conv_slots"]:
        conv_weights[slot] = {
            name: tensors[f"{slot}/{name}"] for name in ("q_weight", "w_scale", "q_bias")
        }
    cbam_weights: dict[str, dict[str, np.ndarray]] = {}
    for slot in doc["cbam_slots"]:
        packed = {}
        for name in _CBAM_WEIGHTS:
            packed[f"{name}_q"] = tensors[f"{slot}/{name}_q"]
            packed[f"{name}_scale"] = tensors[f"{slot}/{name}_scale"]
        for name in _CBAM_FLOATS:
            packed[name] = tensors[f"{slot}/{name}"]
        cbam_weights[slot] = packed
    act_params = {
        key: QuantParams(PER_TENSOR_AFFINE, np.array([p["scale"]]), np.array([p["zero_point"]]))
        for key, p in doc["act_params"].items()
    }
    return QuantizedModel(
        _layers_from_json(doc["layers"]),
        _meta_from_json(doc["meta"]),
        conv_weights,
        cbam_weights,
        act_params,
    )


def load_any(path_or_bytes):
    """Load either container kind; returns ModelGraph or QuantizedModel."""
    doc, _ = container_io.read_container(path_or_bytes)
    kind = doc.get("container")
    if kind == "float":
        from .graph import load_model

        return load_model(path_or_bytes)
    if kind == "int8":
        return load_quantized(path_or_bytes)
    raise ContainerError(f"unknown container kind {kind!r}")


def quantized_size_bytes(model: QuantizedModel) -> int:
    return len(save_quantized_bytes(model))


def format_reduction(orig_size: float, quant_size: float) -> str:
    """Size reduction percent, one decimal: 6.1 -> 3.5 renders as '42.6%'."""
    if orig_size <= 0:
        raise ContractViolation("original size must be > 0")
    return f"{(1.0 - quant_size / orig_size) * 100.0:.1f}%"
