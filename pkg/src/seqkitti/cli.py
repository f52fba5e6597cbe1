"""Command-line frontend.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import datamodel, kitti_io
from .convert import box_to_kitti, kitti_to_box
from .datamodel import MANIFEST_NAME, BoxClass, CalibrationSet
from .errors import DataError, SeqKittiError
from .evaluation import DEFAULT_THRESHOLDS, EvalConfig, evaluate
from .postprocess import DetectionSet, dimension_suppression, nms_merge_by_class, remove_empty
from .synth import generate, load_scene_spec
from .temporal import DEFAULT_N_PREV, DEFAULT_RANGE, AccumulationConfig, PointRange, accumulate

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pool_map(fn, items, jobs):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _sequence_dirs(root: Path) -> list[Path]:
    if (root / MANIFEST_NAME).exists():
        return [root]
    if not root.is_dir():
        raise datamodel.MissingFile(f"{root}: no such directory")
    found = sorted(p for p in root.iterdir() if (p / MANIFEST_NAME).exists())
    if not found:
        raise datamodel.MissingFile(f"{root}: no {MANIFEST_NAME} found in it or its subdirectories")
    return found


def _publish(tmp: Path, final: Path):
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def _to_kitti(seq_dir: Path, out: Path, jobs: int):
    seq = datamodel.read_sequence(seq_dir, jobs=jobs)
    calib = seq.calib or CalibrationSet.default_front()
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{seq.id}.", dir=out))
    try:
        for sub in ("velodyne", "label_2", "calib"):
            (tmp / sub).mkdir()

        def write_frame(i):
            frame = seq.frames[i]
            name = f"{i:06d}"
            kitti_io.write_velodyne(frame.cloud, tmp / "velodyne" / f"{name}.bin")
            kitti_io.write_labels([box_to_kitti(b, calib) for b in frame.boxes], tmp / "label_2" / f"{name}.txt")
            kitti_io.write_calib(calib, tmp / "calib" / f"{name}.txt")

        _pool_map(write_frame, range(len(seq.frames)), jobs)
        kitti_io.write_poses(seq, tmp / "poses.txt")
        _publish(tmp, out / seq.id)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _kitti_sequence_dirs(root: Path) -> list[Path]:
    if (root / "label_2").is_dir():
        return [root]
    if not root.is_dir():
        raise datamodel.MissingFile(f"{root}: no such directory")
    found = sorted(p for p in root.iterdir() if (p / "label_2").is_dir())
    if not found:
        raise datamodel.MissingFile(f"{root}: no label_2 directory found in it or its subdirectories")
    return found


def _from_kitti(kitti_dir: Path, out: Path, jobs: int):
    labels = sorted((kitti_dir / "label_2").glob("*.txt"))
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{kitti_dir.name}.", dir=out))
    try:
        (tmp / "boxes").mkdir()

        def convert_file(path: Path):
            calib_path = kitti_dir / "calib" / path.name
            calib = kitti_io.read_calib(calib_path) if calib_path.exists() else CalibrationSet.default_front()
            boxes = [kitti_to_box(l, calib) for l in kitti_io.read_labels(path) if l.type != kitti_io.DONT_CARE]
            datamodel.write_boxes(boxes, tmp / "boxes" / path.name)

        _pool_map(convert_file, labels, jobs)
        _publish(tmp, out / kitti_dir.name)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def cmd_convert(args) -> int:
    src, out = Path(args.input), Path(args.output)
    if args.direction == "to-kitti":
        for seq_dir in _sequence_dirs(src):
            _to_kitti(seq_dir, out, args.jobs)
    else:
        for kitti_dir in _kitti_sequence_dirs(src):
            _from_kitti(kitti_dir, out, args.jobs)
    return EXIT_OK


def cmd_accumulate(args) -> int:
    seq = datamodel.read_sequence(args.sequence, jobs=args.jobs)
    rng = None if args.no_crop else PointRange.coerce(args.range)
    pc = accumulate(seq, args.anchor, AccumulationConfig(n_prev=args.n_prev, range=rng))
    kitti_io.write_velodyne(pc, args.output)
    print(f"wrote {len(pc)} points (stride {pc.stride}) to {args.output}")
    return EXIT_OK


def _class_values(items, flag) -> dict[BoxClass, float]:
    out = {}
    for item in items or []:
        for part in item.split(","):
            if not part.strip():
                continue
            name, sep, value = part.partition("=")
            if not sep:
                raise argparse.ArgumentTypeError(f"{flag} expects CLASS=VALUE, got {part!r}")
            try:
                out[BoxClass.parse(name.strip())] = float(value)
            except (ValueError, DataError) as e:
                raise argparse.ArgumentTypeError(f"{flag}: {e}") from None
    return out


def cmd_postprocess(args) -> int:
    sets = [DetectionSet(datamodel.read_boxes(p, require_score=True)) for p in [args.dets, *args.ensemble]]
    dets = DetectionSet(tuple(b for s in sets for b in s.boxes))
    if args.remove_empty:
        cloud = kitti_io.read_velodyne(args.cloud, stride=args.cloud_stride)
        dets = remove_empty(dets, cloud)
    limits = {}
    if args.min_dim is not None:
        limits[BoxClass.VEHICLE] = args.min_dim
    limits.update(args.min_dim_for)
    if limits:
        dets = dimension_suppression(dets, limits)
    if args.nms_merge is not None:
        dets = nms_merge_by_class([dets], args.nms_merge)
    datamodel.write_boxes(dets.boxes, args.output, require_score=True)
    print(f"kept {len(dets)} of {sum(len(s) for s in sets)} boxes")
    return EXIT_OK


def _load_box_dir(path: Path, require_score: bool) -> dict[str, list]:
    if (path / MANIFEST_NAME).exists():
        seq = datamodel.read_sequence(path)
        return {f"{i:06d}": list(f.boxes) for i, f in enumerate(seq.frames)}
    if not path.is_dir():
        raise datamodel.MissingFile(f"{path}: no such directory")
    return {p.stem: datamodel.read_boxes(p, require_score) for p in sorted(path.glob("*.txt"))}


def cmd_evaluate(args) -> int:
    config = EvalConfig(
        thresholds=args.thresholds,
        iou=args.iou,
        difficulty=args.difficulty,
        cumulative=not args.non_cumulative,
    )
    preds = _load_box_dir(Path(args.preds), require_score=True)
    gts = _load_box_dir(Path(args.gts), require_score=False)
    report = evaluate(preds, gts, config)
    sys.stdout.write(report.table())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return EXIT_OK


def cmd_synth(args) -> int:
    scene = generate(load_scene_spec(args.spec))
    datamodel.write_sequence(scene.sequence, args.output)
    print(f"wrote {len(scene.sequence)} frames to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seqkitti", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", help="convert native sequences to KITTI layout or KITTI labels back")
    c.add_argument("input", help="native sequence directory (to-kitti) or KITTI tree (from-kitti)")
    c.add_argument("output", help="output directory; one subdirectory per sequence")
    c.add_argument("--direction", choices=("to-kitti", "from-kitti"), default="to-kitti")
    c.add_argument("--jobs", type=int, default=1, help="parallel file workers (output does not depend on it)")
    c.set_defaults(func=cmd_convert)

    a = sub.add_parser("accumulate", help="stack preceding frames into the anchor frame with rel_time")
    a.add_argument("sequence", help="native sequence directory")
    a.add_argument("anchor", type=int, help="anchor frame index")
    a.add_argument("-o", "--output", required=True, help="output stride-5 point blob")
    a.add_argument("--n-prev", type=int, default=DEFAULT_N_PREV,
                   help=f"preceding frames to stack (default {DEFAULT_N_PREV})")
    a.add_argument("--range", type=float, nargs=6, default=tuple(DEFAULT_RANGE),
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX", "ZMIN", "ZMAX"),
                   help="closed crop box in metres (default x,y in [-102.4, 102.4], z in [-10, 15])")
    a.add_argument("--no-crop", action="store_true", help="skip the range crop")
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_accumulate)

    pp = sub.add_parser("postprocess", help="filter detections; steps run as remove-empty, min-dim, nms")
    pp.add_argument("dets", help="detection box file (score column required)")
    pp.add_argument("cloud", help="accumulated point blob of the anchor frame")
    pp.add_argument("--ensemble", action="append", default=[], metavar="DETS",
                    help="additional detection file from another checkpoint (repeatable)")
    pp.add_argument("--cloud-stride", type=int, choices=(4, 5), default=5)
    pp.add_argument("--remove-empty", action="store_true",
                    help="drop boxes without any current-frame point")
    pp.add_argument("--min-dim", type=float, nargs="?", const=0.5, default=None,
                    help="drop vehicles with all dimensions below this many metres (flag alone: 0.5)")
    pp.add_argument("--min-dim-for", action="append", default=[], metavar="CLASS=M",
                    help="per-class dimension threshold, e.g. Pedestrian=0.2 (repeatable)")
    pp.add_argument("--nms-merge", type=float, default=None, metavar="IOU",
                    help="greedy BEV NMS across all inputs at this IoU threshold")
    pp.add_argument("-o", "--output", required=True)
    pp.set_defaults(func=cmd_postprocess)

    e = sub.add_parser("evaluate", help="per-class AP/APH table")
    e.add_argument("preds", help="directory of detection box files")
    e.add_argument("gts", help="directory of ground-truth box files, or a native sequence")
    e.add_argument("--thresholds", action="append", default=[], metavar="CLASS=IOU",
                   help="matching IoU per class (default Vehicle=0.7,Pedestrian=0.5,Cyclist=0.5)")
    e.add_argument("--difficulty", choices=("L1", "L2"), default="L2")
    e.add_argument("--non-cumulative", action="store_true", help="L2 counts only sparse boxes")
    e.add_argument("--iou", choices=("bev", "3d"), default="bev")
    e.add_argument("--csv", help="also write the table as CSV")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="generate a synthetic sequence from a JSON scene spec")
    s.add_argument("spec")
    s.add_argument("output")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "postprocess":
            args.min_dim_for = _class_values(args.min_dim_for, "--min-dim-for")
        if args.command == "evaluate":
            th = dict(DEFAULT_THRESHOLDS)
            th.update(_class_values(args.thresholds, "--thresholds"))
            args.thresholds = th
        if getattr(args, "jobs", 1) < 1:
            raise argparse.ArgumentTypeError("--jobs must be at least 1")
    except argparse.ArgumentTypeError as e:
        parser.error(str(e))
    try:
        return args.func(args)
    except (SeqKittiError, OSError) as e:
        print(f"seqkitti {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
