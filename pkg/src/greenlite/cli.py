"""Command-line entry point: synth, build, quantize, detect, bench.

Exit codes are a fixed contract: 0 success, 1 usage error, 2 data or
validation error, 3 partial bench failure. Sizes print as decimal MB
(1 MB = 10^6 bytes) everywhere.

Bench twin discovery: a float model `m.glw` reports the quantized size of
a sibling `m.q.glw` when that file exists; a quantized model reports its
own size in both columns. A failed model keeps its row, marked in the
markdown report, and turns the final exit code into 3.
"""

from __future__ import annotations

import argparse
import gc
import itertools
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .data import (
    DEFAULT_CLASS_NAMES,
    class_distribution,
    load_manifest,
    read_ppm,
    save_manifest,
    synth_dataset,
)
from .errors import ContractViolation, ManifestError
from .graph import (
    ModelGraph,
    build_model,
    decode,
    format_detection,
    forward,
    letterbox,
    load_model,
    nms,
    save_model,
)
from .metrics import detection_prf, map50, metrics_csv_row, METRICS_CSV_HEADER
from .profiling import (
    EMISSIONS_CSV_HEADER,
    EmissionRecord,
    load_config,
    resolve_energy_settings,
    time_stage,
    track_memory,
)
from .quant import (
    QuantizedModel,
    calibrate,
    format_reduction,
    forward_quantized,
    load_any,
    quantize_model,
    save_quantized,
)

DEFAULT_CONF = 0.25
DEFAULT_IOU = 0.45

BENCH_CSV_HEADER = (
    METRICS_CSV_HEADER + ",mean_latency_s,peak_mem_bytes,total_carbon_kg"
)
MEMORY_CSV_HEADER = (
    "model,stage,peak_live_tensor_bytes,current_live_tensor_bytes,allocation_count"
)
BENCH_EMISSIONS_CSV_HEADER = "model," + EMISSIONS_CSV_HEADER

MD_HEADER = "| Model | Acc | P | R | F1 | mAP | Size (MB) | Q-Size (MB) |"
MD_RULE = "|---|---|---|---|---|---|---|---|"


def _read_image(path: str) -> np.ndarray:
    """Load an image file as (h, w, 3) uint8; PPM natively, others via Pillow."""
    if path.lower().endswith(".ppm"):
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError:
        raise ContractViolation(
            f"{path}: only PPM is supported without Pillow (pip install Pillow)"
        ) from None
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _image_tensor(path: str, target: int):
    arr = _read_image(path)
    h, w = arr.shape[:2]
    return letterbox(arr.tobytes(), w, h, target)


def _resolve(manifest_path: str, image_path: str) -> str:
    if os.path.isabs(image_path):
        return image_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), image_path)


def _forward_fn(model):
    return forward_quantized if isinstance(model, QuantizedModel) else forward


def _run_detector(model, x, meta, conf: float, iou_thr: float):
    raw = _forward_fn(model)(model, x)
    return nms(decode(raw, meta, conf), iou_thr)


# --- subcommands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    ds = synth_dataset(
        args.out,
        num_images=args.images,
        num_classes=args.classes,
        max_boxes_per_image=args.max_boxes,
        image_size=args.size,
        seed=args.seed,
    )
    manifest = os.path.join(args.out, "manifest.tsv")
    save_manifest(ds, manifest)
    dist = class_distribution(ds)
    print(f"wrote {len(ds.images)} images and {manifest}")
    print("class\tboxes\timages")
    for name, boxes, imgs in zip(ds.class_names, dist["box_counts"], dist["image_counts"]):
        print(f"{name}\t{boxes}\t{imgs}")
    print(f"total\t{sum(dist['box_counts'])}\t{len(ds.images)}")
    return 0


def cmd_build(args) -> int:
    names = None
    if args.classes <= len(DEFAULT_CLASS_NAMES):
        names = DEFAULT_CLASS_NAMES[: args.classes]
    model = build_model(
        num_classes=args.classes,
        input_size=args.input_size,
        seed=args.seed,
        class_names=names,
    )
    nbytes = save_model(model, args.out)
    print(f"parameters: {model.param_count()}")
    print(f"size: {nbytes / 1e6:.4f} MB")
    print(f"wrote {args.out}")
    return 0


def cmd_quantize(args) -> int:
    model = load_model(args.model)
    ds = load_manifest(args.calib_manifest)
    picked = ds.images[: args.calib_count]
    if not picked:
        raise ContractViolation("calibration manifest has no images")
    tensors = [
        _image_tensor(_resolve(args.calib_manifest, img.image_path), model.meta.input_size)[0]
        for img in picked
    ]
    stats = calibrate(model, tensors)
    qmodel = quantize_model(model, stats)
    out = args.out or (args.model[: -len(".glw")] + ".q.glw" if args.model.endswith(".glw") else args.model + ".q.glw")
    qbytes = save_quantized(qmodel, out)
    fbytes = os.path.getsize(args.model)
    print(f"calibrated on {len(tensors)} images")
    print(f"size: {fbytes / 1e6:.4f} MB")
    print(f"qsize: {qbytes / 1e6:.4f} MB")
    print(f"reduction: {format_reduction(fbytes, qbytes)}")
    print(f"wrote {out}")
    return 0


def cmd_detect(args) -> int:
    model = load_any(args.model)
    arr = _read_image(args.image)
    h, w = arr.shape[:2]
    x, meta = letterbox(arr.tobytes(), w, h, model.meta.input_size)
    dets = _run_detector(model, x, meta, args.conf, args.iou)
    if args.emit == "json":
        payload = [
            {
                "class": model.meta.class_names[d.class_id],
                "class_id": d.class_id,
                "score": d.score,
                "box": list(d.box),
            }
            for d in dets
        ]
        print(json.dumps(payload, indent=2))
    else:
        for d in dets:
            print(format_detection(d))
    return 0


@dataclass
class BenchRow:
    model_name: str
    acc: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    map_50: float | None = None
    size_mb: float | None = None
    qsize_mb: float | None = None
    mean_latency_s: float | None = None
    peak_mem_bytes: int | None = None
    total_carbon_kg: float | None = None
    failed: bool = False

    def to_csv(self) -> str:
        prefix = metrics_csv_row(
            self.model_name, self.acc, self.precision, self.recall,
            self.f1, self.map_50, self.size_mb, self.qsize_mb,
        )
        lat = "" if self.mean_latency_s is None else f"{self.mean_latency_s:.6f}"
        mem = "" if self.peak_mem_bytes is None else str(self.peak_mem_bytes)
        co2 = "" if self.total_carbon_kg is None else f"{self.total_carbon_kg:.6f}"
        return f"{prefix},{lat},{mem},{co2}"

    def to_md(self) -> str:
        def cell(v) -> str:
            return "-" if v is None else f"{v:.4f}"

        name = self.model_name + (" (failed)" if self.failed else "")
        cells = [name] + [
            cell(v)
            for v in (self.acc, self.precision, self.recall, self.f1,
                      self.map_50, self.size_mb, self.qsize_mb)
        ]
        return "| " + " | ".join(cells) + " |"


def _bench_one(path: str, manifest_path: str, images, gts, args, power, intensity, conf, iou_thr):
    """Bench a single model; returns (BenchRow, emission rows, memory row)."""
    records: list[EmissionRecord] = []

    t0 = time.perf_counter()
    model = load_any(path)
    records.append(EmissionRecord.measure("load", time.perf_counter() - t0, power, intensity))

    run = _forward_fn(model)
    target = model.meta.input_size
    tensors = [_image_tensor(_resolve(manifest_path, p), target) for p in images]

    cycle = itertools.cycle(tensors)

    def step():
        x, _ = next(cycle)
        run(model, x)

    t0 = time.perf_counter()
    latency = time_stage(step, warmup=args.warmup, iterations=args.iters)
    records.append(EmissionRecord.measure("inference", time.perf_counter() - t0, power, intensity))

    mem = track_memory(lambda: run(model, tensors[0][0]))

    t0 = time.perf_counter()
    dets_per_image = [
        nms(decode(run(model, x), meta, conf), iou_thr) for x, meta in tensors
    ]
    detection = map50(dets_per_image, gts, model.meta.num_classes)
    prf = detection_prf(dets_per_image, gts)
    records.append(EmissionRecord.measure("evaluate", time.perf_counter() - t0, power, intensity))

    size_mb = os.path.getsize(path) / 1e6
    qsize_mb = None
    if isinstance(model, QuantizedModel):
        qsize_mb = size_mb
    elif path.endswith(".glw"):
        twin = path[: -len(".glw")] + ".q.glw"
        if os.path.exists(twin):
            qsize_mb = os.path.getsize(twin) / 1e6

    row = BenchRow(
        model_name=os.path.basename(path),
        acc=None,  # detector rows have no classification accuracy
        precision=prf["precision"],
        recall=prf["recall"],
        f1=prf["f1"],
        map_50=detection["map"],
        size_mb=size_mb,
        qsize_mb=qsize_mb,
        mean_latency_s=latency.mean_s,
        peak_mem_bytes=mem.peak_live_tensor_bytes,
        total_carbon_kg=math.fsum(r.carbon_kg for r in records),
    )
    emission_rows = [
        f"{row.model_name},{r.stage},{r.duration_s:.6f},{r.energy_kwh:.6f},{r.carbon_kg:.6f}"
        for r in records
    ]
    memory_row = (
        f"{row.model_name},inference,{mem.peak_live_tensor_bytes},"
        f"{mem.current_live_tensor_bytes},{mem.allocation_count}"
    )
    del model, tensors, cycle
    gc.collect()
    return row, emission_rows, memory_row


def cmd_bench(args) -> int:
    config = load_config(args.config) if args.config else {}
    power, intensity = resolve_energy_settings(config)
    conf = args.conf if args.conf is not None else float(config.get("conf", DEFAULT_CONF))
    iou_thr = args.iou if args.iou is not None else float(config.get("iou", DEFAULT_IOU))

    ds = load_manifest(args.manifest)
    image_paths = [img.image_path for img in ds.images]
    gts = [img.ground_truth() for img in ds.images]

    os.makedirs(args.out_dir, exist_ok=True)
    rows: list[BenchRow] = []
    emissions_lines = [BENCH_EMISSIONS_CSV_HEADER]
    memory_lines = [MEMORY_CSV_HEADER]
    any_failed = False
    for path in args.models:
        try:
            row, emission_rows, memory_row = _bench_one(
                path, args.manifest, image_paths, gts, args, power, intensity, conf, iou_thr
            )
            emissions_lines.extend(emission_rows)
            memory_lines.append(memory_row)
        except Exception as exc:  # noqa: BLE001  (a bad model must not kill the run)
            print(f"bench failed for {path}: {exc}", file=sys.stderr)
            row = BenchRow(model_name=os.path.basename(path), failed=True)
            any_failed = True
        rows.append(row)
        gc.collect()

    bench_csv = os.path.join(args.out_dir, "bench.csv")
    with open(bench_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(BENCH_CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.to_csv() + "\n")
    with open(os.path.join(args.out_dir, "emissions.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(emissions_lines) + "\n")
    with open(os.path.join(args.out_dir, "memory.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(memory_lines) + "\n")
    report = [MD_HEADER, MD_RULE] + [row.to_md() for row in rows]
    with open(os.path.join(args.out_dir, "report.md"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(report) + "\n")

    print("\n".join(report))
    print(f"wrote {args.out_dir}/bench.csv, emissions.csv, memory.csv, report.md")
    return 3 if any_failed else 0


# --- argument parsing ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="greenlite", description="Detector benchmarking toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic shapes dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--images", type=int, default=60)
    p.add_argument("--classes", type=int, default=len(DEFAULT_CLASS_NAMES))
    p.add_argument("--max-boxes", type=int, default=3)
    p.add_argument("--size", type=int, default=320, help="square image size in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("build", help="build a randomly initialized detector container")
    p.add_argument("--classes", type=int, default=len(DEFAULT_CLASS_NAMES))
    p.add_argument("--input-size", type=int, default=320)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="output .glw path")
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("quantize", help="post-training int8 quantization")
    p.add_argument("--model", required=True, help="float .glw container")
    p.add_argument("--calib-manifest", required=True)
    p.add_argument("--calib-count", type=int, default=32)
    p.add_argument("--out", default=None, help="output path (default: <model>.q.glw)")
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("detect", help="run detection on one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--conf", type=float, default=DEFAULT_CONF)
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--emit", choices=("text", "json"), default="text")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("bench", help="benchmark models against a manifest")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--conf", type=float, default=None)
    p.add_argument("--iou", type=float, default=None)
    p.add_argument("--config", default=None, help="key=value file: power, intensity, conf, iou")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ContractViolation, ManifestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
