"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 inference/protocol
error. Diagnostics go to standard error; directory inputs are processed in
lexicographic order so logs and outputs are reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__, pngio
from .errors import InferenceError, InvalidInputError, MitopipeError, PipelineError, ProtocolError
from .evaluation import (
    DEFAULT_RADIUS,
    evaluate_detections,
    read_ground_truth_csv,
    read_predictions_csv,
)
from .pipeline import PipelineConfig, build_ensembles, detect
from .postproc import PostprocConfig
from .refine import RefineConfig
from .sampler import make_folds, sample_epoch
from .stain import SnmfConfig, StainProfile, build_profile, normalize_to_profile

ENV_CONFIG = "MITOPIPE_CONFIG"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFERENCE = 3


def format_coord(v: float) -> str:
    """Serialize a coordinate with 2 decimals, ties rounded away from zero."""
    return str(Decimal(repr(float(v))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_score(v: float) -> str:
    """Serialize a score with 4 decimals, ties rounded away from zero."""
    return str(Decimal(repr(float(v))).quantize(Decimal("0.0001"), rounding=ROUND_HALF_UP))


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    """Parse the TOML config file into a PipelineConfig.

    Sections and keys (all optional, defaults shown):

        [stain]      profile = "<none>", lambda = 0.1, code_lambda = 0.01,
                     outer_iters = 50, tol = 1e-4, max_pixels = 100000,
                     beta = 0.15, seed = 0
        [tiling]     tile = 512, overlap = 75
        [postproc]   t_seg = 0.4, open_radius = 2, min_area = 30
        [refine]     t_cls = 0.6
        [predictors] seg = [<command or tcp://host:port>, ...], cls = [...]
        [inference]  tta = true, workers = 1, timeout = 30.0

    Relative paths are resolved against the config file's directory.
    """
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}")
    stain_doc = doc.get("stain", {})
    snmf = SnmfConfig.from_dict(stain_doc)
    profile = None
    if "profile" in stain_doc:
        profile_path = Path(stain_doc["profile"])
        if not profile_path.is_absolute():
            profile_path = path.parent / profile_path
        try:
            profile = StainProfile.load(profile_path)
        except (OSError, ValueError, KeyError) as exc:
            raise InvalidInputError(f"cannot load stain profile {profile_path}: {exc}")
    tiling = doc.get("tiling", {})
    post = doc.get("postproc", {})
    ref = doc.get("refine", {})
    predictors = doc.get("predictors", {})
    inference = doc.get("inference", {})
    return PipelineConfig(
        stain=snmf,
        profile=profile,
        tile=int(tiling.get("tile", 512)),
        overlap=int(tiling.get("overlap", 75)),
        postproc=PostprocConfig(
            t_seg=float(post.get("t_seg", 0.4)),
            open_radius=int(post.get("open_radius", 2)),
            min_area=int(post.get("min_area", 30)),
        ),
        refine=RefineConfig(t_cls=float(ref.get("t_cls", 0.6))),
        seg_endpoints=tuple(predictors.get("seg", ())),
        cls_endpoints=tuple(predictors.get("cls", ())),
        tta=bool(inference.get("tta", True)),
        workers=int(inference.get("workers", 1)),
        timeout=float(inference.get("timeout", 30.0)),
    )


def _png_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise InvalidInputError(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise InvalidInputError(f"no .png files in {directory}")
    return files


def _cmd_fit_target(args) -> int:
    cfg = SnmfConfig(
        lam=args.lam, code_lam=args.code_lam, outer_iters=args.outer_iters,
        tol=args.tol, max_pixels=args.max_pixels, beta=args.beta, seed=args.seed,
    )
    image = pngio.read_rgb(args.image)
    profile = build_profile(image, cfg)
    profile.save(args.out)
    print(f"fit-target: wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_normalize(args) -> int:
    profile = StainProfile.load(args.profile)
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in _png_files(in_dir):
        result = normalize_to_profile(pngio.read_rgb(path), profile)
        if result.warning:
            print(f"WARN {path.name}: {result.warning}", file=sys.stderr)
        pngio.write_rgb(result.image, out_dir / path.name)
    return EXIT_OK


def _apply_detect_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    updates = {}
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.t_seg is not None:
        updates["postproc"] = dataclasses.replace(cfg.postproc, t_seg=args.t_seg)
    if args.t_cls is not None:
        updates["refine"] = dataclasses.replace(cfg.refine, t_cls=args.t_cls)
    if args.tta is not None:
        updates["tta"] = args.tta == "on"
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _cmd_detect(args) -> int:
    config_path = args.config or os.environ.get(ENV_CONFIG)
    if not config_path:
        raise _UsageError(f"--config is required (or set ${ENV_CONFIG})")
    cfg = _apply_detect_overrides(load_pipeline_config(config_path), args)
    files = _png_files(Path(args.in_dir))
    seg, cls = build_ensembles(cfg)
    rows = []
    reports = {}
    try:
        for path in files:
            image = pngio.read_rgb(path)
            detections, report = detect(image, cfg, seg=seg, cls=cls)
            image_id = path.stem
            reports[image_id] = report.to_dict()
            for det in detections:
                rows.append((image_id, format_coord(det.x), format_coord(det.y),
                             format_score(det.score)))
            print(f"detect: {path.name} -> {len(detections)} detections", file=sys.stderr)
    finally:
        for member in (*seg.members, *cls.members):
            close = getattr(member, "close", None)
            if close:
                close()
    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="") as f:
        f.write("image_id,x,y,score\n")
        for row in rows:
            f.write(",".join(row) + "\n")
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    report_path.write_text(json.dumps({"config": str(config_path), "images": reports}, indent=2))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    preds = read_predictions_csv(args.pred)
    gts = read_ground_truth_csv(args.gt)
    result = evaluate_detections(preds, gts, radius=args.radius)
    text = json.dumps(result.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def _cmd_folds(args) -> int:
    folds = make_folds(list(range(1, args.n + 1)))
    doc = [
        {"fold": f.fold_id, "val": list(f.val_ids), "train": list(f.train_ids)}
        for f in folds
    ]
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _read_lines(path: str) -> list[str]:
    try:
        return [line for line in Path(path).read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}")


def _cmd_sample_epoch(args) -> int:
    manifest = sample_epoch(
        _read_lines(args.pos), _read_lines(args.neg), epoch=args.epoch, seed=args.seed
    )
    lines = [f"{label},{ref}" for ref, label in manifest.entries]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_grid(text: str, name: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise _UsageError(f"--{name} expects a comma-separated list of numbers")
    if not values:
        raise _UsageError(f"--{name} is empty")
    return values


def _cmd_sweep_thresholds(args) -> int:
    from .core import Detection

    rows = []
    with open(args.pred_scored, newline="", encoding="utf-8") as f:
        import csv as _csv

        reader = _csv.DictReader(f)
        required = {"image_id", "x", "y", "seg_score", "cls_score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InvalidInputError(
                f"{args.pred_scored}: expected header image_id,x,y,seg_score,cls_score"
            )
        for row in reader:
            rows.append(
                (row["image_id"], float(row["x"]), float(row["y"]),
                 float(row["seg_score"]), float(row["cls_score"]))
            )
    gts = read_ground_truth_csv(args.gt)
    grid = []
    for t_seg in _parse_grid(args.t_seg, "t-seg"):
        for t_cls in _parse_grid(args.t_cls, "t-cls"):
            preds: dict[str, list[Detection]] = {}
            for image_id, x, y, seg_score, cls_score in rows:
                if seg_score >= t_seg and cls_score >= t_cls:
                    preds.setdefault(image_id, []).append(Detection(x, y, cls_score))
            result = evaluate_detections(preds, gts, radius=args.radius)
            grid.append({
                "t_seg": t_seg, "t_cls": t_cls,
                "tp": result.tp, "fp": result.fp, "fn": result.fn,
                "precision": result.metrics.precision,
                "recall": result.metrics.recall,
                "f1": result.metrics.f1,
            })
    text = json.dumps(grid, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mitopipe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mitopipe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-target", help="estimate a stain profile from a target image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--code-lambda", dest="code_lam", type=float, default=0.01)
    p.add_argument("--outer-iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-pixels", type=int, default=100_000)
    p.add_argument("--beta", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_fit_target)

    p = sub.add_parser("normalize", help="normalize a directory of PNGs to a stain profile")
    p.add_argument("--profile", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(fn=_cmd_normalize)

    p = sub.add_parser("detect", help="run the detection pipeline over a directory of PNGs")
    p.add_argument("--config", help=f"TOML config file (default: ${ENV_CONFIG})")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True, help="detections CSV output path")
    p.add_argument("--report", help="run report JSON path (default: <out>.report.json)")
    p.add_argument("--workers", type=int)
    p.add_argument("--t-seg", type=float, dest="t_seg")
    p.add_argument("--t-cls", type=float, dest="t_cls")
    p.add_argument("--tta", choices=("on", "off"))
    p.set_defaults(fn=_cmd_detect)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("folds", help="print the scanner-based cross-validation folds")
    p.add_argument("--n", type=int, default=150)
    p.set_defaults(fn=_cmd_folds)

    p = sub.add_parser("sample-epoch", help="write a balanced epoch manifest")
    p.add_argument("--pos", required=True, help="file with one positive patch reference per line")
    p.add_argument("--neg", required=True, help="file with one negative patch reference per line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_sample_epoch)

    p = sub.add_parser("sweep-thresholds", help="F1 over a (t_seg, t_cls) grid")
    p.add_argument("--pred-scored", dest="pred_scored", required=True,
                   help="CSV with header image_id,x,y,seg_score,cls_score")
    p.add_argument("--gt", required=True)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--t-seg", dest="t_seg", default="0.3,0.4,0.5,0.6,0.7")
    p.add_argument("--t-cls", dest="t_cls", default="0.4,0.5,0.6,0.7,0.8")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_sweep_thresholds)
    return parser


def _is_inference_failure(exc: BaseException) -> bool:
    seen = set()
    while exc is not None and id(exc) not in seen:
        if isinstance(exc, (InferenceError, ProtocolError)):
            return True
        seen.add(id(exc))
        exc = exc.__cause__ or exc.__context__
    return False


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _UsageError as exc:
        print(f"mitopipe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InferenceError, ProtocolError) as exc:
        print(f"mitopipe: inference error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except PipelineError as exc:
        if _is_inference_failure(exc):
            print(f"mitopipe: inference error: {exc}", file=sys.stderr)
            return EXIT_INFERENCE
        print(f"mitopipe: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (MitopipeError, OSError, ValueError, KeyError) as exc:
        print(f"mitopipe: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
