"""Command-line front end and experiment harness.

Subcommands: synth, convert, reduce, train, segment, baseline, evaluate.
Every artifact embeds the resolved configuration so runs are
self-describing, and everything is deterministic under (config, seed); wall
times go to a ``timings.json`` sidecar (and stderr) so the primary JSON
artifacts are byte-reproducible.

Exit codes: 0 success, 1 contract/configuration error, 2 I/O error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import cae, clustering, metrics, reduction, synth, train
from .archive import save_archive
from .cube import (HsiCube, load_cube, load_labels, write_cube, write_labels,
                   write_ppm, SegmentationMap, normalize)
from .errors import (DataError, HsisegError, NumericalError, ParameterError,
                     ShapeError)

REDUCTIONS = ("none", "pca", "smsi", "external")
METHODS = ("cae3d", "kmeans", "gmm")


@dataclass
class RunConfig:
    """Everything a training or baseline run depends on."""

    seed: int = 0
    patch_spatial: int = 5
    embedding_dim: int = 25
    clusters: int = 2
    alpha: float = 0.1
    lr: float = 1e-4
    batch_size: int = 256
    stage2_epochs: int = 25
    epsilon: float = 1e-6
    reduction: str = "none"
    method: str = "cae3d"
    # architecture knobs with paper-scale defaults
    kernels_per_layer: int = 32
    kernel_spatial: int = 3
    kernel_depth: int = 9
    dropout_p: float = 0.5
    stage1_max_epochs: int = 500

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.reduction not in REDUCTIONS:
            raise ParameterError(f"reduction must be one of {REDUCTIONS}")
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}")
        for name in ("patch_spatial", "embedding_dim", "clusters", "batch_size",
                     "stage2_epochs", "kernels_per_layer", "kernel_spatial",
                     "kernel_depth", "stage1_max_epochs"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict) -> "RunConfig":
        data: dict = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except OSError as exc:
                raise DataError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ParameterError(f"config {path} is not valid JSON: {exc}") from exc
            unknown = set(data) - set(cls.__dataclass_fields__)
            if unknown:
                raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _load_scene(cube_path: str, truth_path: str | None) -> HsiCube:
    cube = load_cube(cube_path)
    if truth_path is not None:
        labels = load_labels(truth_path)
        if labels.shape != (cube.height, cube.width):
            raise ShapeError(f"truth raster {labels.shape} does not match cube "
                             f"{(cube.height, cube.width)}")
        cube.labels = labels
    return cube


def _apply_reduction(cube: HsiCube, method: str, dims: int) -> HsiCube:
    if method == "pca":
        return reduction.pca_reduce(cube, dims)
    if method == "smsi":
        return reduction.smsi_reduce(cube, dims)
    return cube  # "none" and "external" (features already reduced)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cube = synth.generate_cube(width=args.width, height=args.height,
                               bands=args.bands, classes=args.classes,
                               seed=args.seed, noise=args.noise,
                               layout=args.layout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cube(cube, out / "cube.hsic")
    write_labels(cube.labels, out / "truth.gt")
    signatures = synth.class_signatures(args.classes, args.bands)
    _write_json(out / "synth.json", {
        "config": {"width": args.width, "height": args.height, "bands": args.bands,
                   "classes": args.classes, "seed": args.seed, "noise": args.noise,
                   "layout": args.layout},
        "signature_separation": synth.signature_separation(signatures),
    })
    return 0


def cmd_convert(args) -> int:
    try:
        values = np.load(args.values)
    except OSError as exc:
        raise DataError(f"cannot read {args.values}: {exc}") from exc
    if values.ndim != 3:
        raise ShapeError(f"expected a (height, width, bands) array, got {values.shape}")
    wavelengths = np.load(args.wavelengths) if args.wavelengths else None
    cube = HsiCube(values=values.astype(np.float64), wavelengths=wavelengths)
    write_cube(cube, args.out)
    if args.labels:
        labels = np.load(args.labels)
        if labels.shape != values.shape[:2]:
            raise ShapeError(f"labels {labels.shape} do not match grid {values.shape[:2]}")
        truth_path = args.out_truth or str(Path(args.out).with_suffix(".gt"))
        write_labels(labels, truth_path)
    return 0


def cmd_reduce(args) -> int:
    cube = load_cube(args.cube)
    if args.method == "pca":
        reduced = reduction.pca_reduce(cube, args.dims)
    else:
        reduced = reduction.smsi_reduce(cube, args.dims)
    write_cube(reduced, args.out)
    return 0


def cmd_train(args) -> int:
    config = RunConfig.load(args.config, {
        "seed": args.seed, "clusters": args.clusters, "alpha": args.alpha,
        "reduction": args.reduction,
    })
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cube = _load_scene(args.cube, args.truth)
    t0 = time.perf_counter()
    cube = normalize(cube)
    cube = _apply_reduction(cube, config.reduction, config.embedding_dim)
    reduction_sec = time.perf_counter() - t0

    arch = cae.CaeConfig(
        bands=cube.bands, clusters=config.clusters,
        patch_spatial=config.patch_spatial,
        kernels_per_layer=config.kernels_per_layer,
        kernel_spatial=config.kernel_spatial, kernel_depth=config.kernel_depth,
        embedding_dim=config.embedding_dim, dropout_p=config.dropout_p)
    schedule = train.TrainConfig(
        batch_size=config.batch_size, epsilon=config.epsilon,
        stage1_max_epochs=config.stage1_max_epochs,
        stage2_epochs=config.stage2_epochs, alpha=config.alpha, lr=config.lr)

    params, report = train.run_training(cube, arch, schedule, config.seed)

    cae.save_checkpoint(params, out / "checkpoint.zip",
                        extra_meta={"pipeline": {"reduction": config.reduction,
                                                 "normalized": True},
                                    "run_config": asdict(config)})
    _write_json(out / "report.json", {"config": asdict(config), **report.to_dict()})
    _write_json(out / "timings.json", {
        "config": asdict(config),
        "seconds": {"reduction": reduction_sec, **report.phase_seconds,
                    "total_training": report.wall_time},
    })
    print(f"stage 1: {report.stage1_epochs} epochs, "
          f"stage 2: {len(report.stage2_losses)} epochs, "
          f"{report.wall_time:.1f}s", file=sys.stderr)
    return 0


def _segment_with_checkpoint(checkpoint_path: str, cube: HsiCube):
    params, meta = cae.load_checkpoint(checkpoint_path)
    pipeline = meta.get("pipeline", {})
    if pipeline.get("normalized", False):
        cube = normalize(cube)
    cube = _apply_reduction(cube, pipeline.get("reduction", "none"),
                            params.config.embedding_dim)
    if cube.bands != params.config.bands:
        raise ShapeError(f"cube has {cube.bands} bands after preprocessing, "
                         f"checkpoint expects {params.config.bands}")
    return train.segment(params, cube), meta


def cmd_segment(args) -> int:
    cube = _load_scene(args.cube, args.truth)
    t0 = time.perf_counter()
    segmap, meta = _segment_with_checkpoint(args.checkpoint, cube)
    inference_sec = time.perf_counter() - t0
    write_labels(segmap.labels, args.out)
    if args.ppm:
        write_ppm(segmap, args.ppm)
    sidecar = Path(args.out).with_name(Path(args.out).stem + "_timings.json")
    _write_json(sidecar, {"config": meta.get("run_config", {}),
                          "seconds": {"inference": inference_sec}})
    return 0


def cmd_baseline(args) -> int:
    config = RunConfig.load(args.config, {
        "seed": args.seed, "clusters": args.clusters,
        "reduction": args.reduction, "method": args.method,
    })
    if config.method not in ("kmeans", "gmm"):
        raise ParameterError("baseline method must be kmeans or gmm")
    if config.clusters < 2:
        raise ParameterError("baselines need at least two clusters")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cube = _load_scene(args.cube, args.truth)
    t0 = time.perf_counter()
    work = normalize(cube)
    work = _apply_reduction(work, config.reduction, config.embedding_dim)
    reduction_sec = time.perf_counter() - t0

    points = work.pixel_matrix()
    t1 = time.perf_counter()
    if config.method == "kmeans":
        model, flat = clustering.kmeans(points, config.clusters, seed=config.seed)
        meta = {"format": "hsiseg-kmeans", "inertia": model.inertia,
                "iterations": model.iterations, "config": asdict(config)}
        arrays = [("centers", model.centers)]
    else:
        model, flat = clustering.gmm_em(points, config.clusters, seed=config.seed)
        meta = {"format": "hsiseg-gmm",
                "log_likelihood_trace": model.log_likelihood_trace,
                "config": asdict(config)}
        arrays = [("weights", model.weights), ("means", model.means),
                  ("covariances", model.covariances)]
    cluster_sec = time.perf_counter() - t1

    labels = flat.reshape(cube.height, cube.width) + 1
    background = (cube.labels == 0) if cube.labels is not None else None
    segmap = SegmentationMap(labels=labels, background=background)
    write_labels(segmap.labels, out / "map.gt")
    save_archive(out / "model.zip", meta, arrays)
    if cube.labels is not None:
        scores = metrics.evaluate_labelings(segmap.labels, cube.labels)
        _write_json(out / "metrics.json", {"config": asdict(config), **scores})
    _write_json(out / "timings.json", {
        "config": asdict(config),
        "seconds": {"reduction": reduction_sec, "clustering": cluster_sec},
    })
    return 0


def cmd_evaluate(args) -> int:
    predicted = load_labels(args.map)
    truth = load_labels(args.truth)
    if predicted.shape != truth.shape:
        raise ShapeError(f"map {predicted.shape} and truth {truth.shape} disagree")
    scores = metrics.evaluate_labelings(predicted, truth)
    payload = {"config": {"map": str(args.map), "truth": str(args.truth)}, **scores}
    text = json.dumps(payload, sort_keys=True, indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are contract errors, not exit 2
        raise ParameterError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hsiseg",
                     description="Unsupervised hyperspectral image segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic scene")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--bands", type=int, default=40)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--layout", choices=("voronoi", "stripes"), default="voronoi")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert .npy arrays to the cube format")
    p.add_argument("--values", required=True, help="(height, width, bands) .npy file")
    p.add_argument("--labels", help="(height, width) .npy label map")
    p.add_argument("--wavelengths", help="(bands,) .npy band centers")
    p.add_argument("--out", required=True, help="output .hsic header path")
    p.add_argument("--out-truth", help="output .gt path (default: alongside cube)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("reduce", help="reduce a cube's spectral dimensionality")
    p.add_argument("--cube", required=True)
    p.add_argument("--method", choices=("pca", "smsi"), required=True)
    p.add_argument("--dims", type=int, default=25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("train", help="two-stage training of the autoencoder")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--cube", required=True)
    p.add_argument("--truth", help="ground truth; excludes background from training")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--reduction", choices=REDUCTIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="label every pixel with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--truth", help="ground truth used only to flag background")
    p.add_argument("--out", required=True, help="output .gt raster path")
    p.add_argument("--ppm", help="also write a color visualization")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("baseline", help="classical clustering over pixel spectra")
    p.add_argument("--method", choices=("kmeans", "gmm"), required=True)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--cube", required=True)
    p.add_argument("--truth")
    p.add_argument("--clusters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reduction", choices=REDUCTIONS)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="score a segmentation map against ground truth")
    p.add_argument("--map", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (DataError, OSError) as exc:
        print(f"hsiseg: i/o error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"hsiseg: numerical error: {exc}", file=sys.stderr)
        return 3
    except (HsisegError, ValueError) as exc:
        print(f"hsiseg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
