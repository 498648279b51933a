"""Command-line driver.

Reports are JSON; the loss log and ``fcmap`` output are JSON Lines with one
object per iteration / per cube. Exit status is 0 on success, 1 on a runtime
error and 2 on a usage error.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import evalsuite, funcconn, warp
from ..objective import register
from ..volume import BrainMask, DisplacementField, LabelVolume, ScalarVolume, TimeSeriesVolume
from .config import RunConfig, load_config
from .nifti import atomic_write_bytes, read_nifti, write_nifti
from .phantom import PhantomSpec, make_phantom

logger = logging.getLogger("fcreg")

WORKERS_ENV = "FCREG_WORKERS"

PHANTOM_FILES = {
    "fixed_t1": "fixed_t1.nii",
    "moving_t1": "moving_t1.nii",
    "fixed_fmri": "fixed_fmri.nii",
    "moving_fmri": "moving_fmri.nii",
    "labels_fixed": "labels_fixed.nii",
    "labels_moving": "labels_moving.nii",
    "truth": "truth_field.nii",
    "mask": "mask.nii",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def worker_count():
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def _write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _write_jsonl(path, rows):
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    atomic_write_bytes(path, text.encode())


def _read(path, kind):
    vol = read_nifti(path, kind)
    return vol


def cmd_synth(args):
    spec = PhantomSpec(
        size=tuple(args.size),
        timepoints=args.timepoints,
        seed=args.seed,
        max_displacement=args.max_displacement,
        n_regions=args.n_regions,
        noise_std=args.noise_std,
        factor=args.factor,
        flat_interior=args.flat_interior,
    )
    ph = make_phantom(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    for key, name in PHANTOM_FILES.items():
        vol = getattr(ph, key)
        if isinstance(vol, BrainMask):
            vol = LabelVolume(vol.inside.astype(np.int64))
        write_nifti(vol, os.path.join(args.out_dir, name))
    return 0


def cmd_register(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    fT1 = _read(args.fixed_t1, "scalar")
    mT1 = _read(args.moving_t1, "scalar")
    ff = _read(args.fixed_fmri, "timeseries")
    mf = _read(args.moving_fmri, "timeseries")
    field, history = register(
        fT1, mT1, ff, mf, cfg.loss_weights(), cfg.fc_config(), cfg.optimizer_config(), cfg.downsample_factor
    )
    write_nifti(field, args.out_field)
    if args.out_warped_t1:
        write_nifti(warp.warp_scalar(mT1, field), args.out_warped_t1)
    if args.out_warped_fmri:
        coarse = warp.downsample_field(field, cfg.downsample_factor)
        write_nifti(warp.warp_time_series(mf, DisplacementField(coarse.vectors, mf.spacing)), args.out_warped_fmri)
    if args.loss_log:
        rows = [dict(iteration=i, **bd.as_dict()) for i, bd in enumerate(history)]
        _write_jsonl(args.loss_log, rows)
    return 0


def cmd_warp(args):
    field = _read(args.field, "field")
    vol = read_nifti(args.input)
    if args.downsample:
        field = warp.downsample_field(field, args.downsample)
    if isinstance(vol, TimeSeriesVolume):
        out = warp.warp_time_series(vol, field)
    elif isinstance(vol, LabelVolume):
        out = LabelVolume(warp.warp_labels(vol.labels, field), vol.spacing)
    elif isinstance(vol, ScalarVolume):
        out = warp.warp_scalar(vol, field)
    else:
        raise ValueError("warp input must be a 3D or 4D image")
    write_nifti(out, args.out)
    return 0


def cmd_fcmap(args):
    vol = _read(args.input, "timeseries")
    cfg = funcconn.FCConfig(w=args.w, bins=args.bins, soft=not args.hard)
    rows = [
        {"center": [int(c) for c in h.center], "counts": [float(x) for x in h.counts], "total": h.total}
        for h in funcconn.fc_histograms(vol, cfg)
    ]
    _write_jsonl(args.out, rows)
    return 0


def cmd_dice(args):
    a = _read(args.a, "labels")
    b = _read(args.b, "labels")
    res = evalsuite.dice(a, b, args.labels)
    report = res.as_dict()
    if args.out:
        _write_json(args.out, report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_tmap(args):
    maps = [_read(p, "scalar") for p in args.inputs]
    mask = BrainMask(_read(args.mask, "labels").labels > 0) if args.mask else None
    if args.zscore:
        maps = [evalsuite.zscore_map(m, mask) for m in maps]
    tm = evalsuite.one_sample_tmap(maps, mask)
    rep = evalsuite.threshold_report(tm, args.threshold)
    if args.out:
        write_nifti(ScalarVolume(np.nan_to_num(tm.t, posinf=np.finfo(np.float32).max,
                                               neginf=-np.finfo(np.float32).max), maps[0].spacing), args.out)
    report = dict(rep.as_dict(), n=tm.n, infinite_voxels=int(np.sum(np.isinf(tm.t))))
    if args.report:
        _write_json(args.report, report)
    print(json.dumps(report, sort_keys=True))
    return 0


def build_parser():
    p = _Parser(prog="fcreg", description="Structural/functional MRI deformable registration.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a phantom pair")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--size", type=int, nargs=3, default=[24, 24, 24])
    s.add_argument("--timepoints", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-displacement", type=float, default=2.0)
    s.add_argument("--n-regions", type=int, default=8)
    s.add_argument("--noise-std", type=float, default=0.1)
    s.add_argument("--factor", type=int, default=1)
    s.add_argument("--flat-interior", action="store_true")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("register", help="register a T1/fMRI pair")
    r.add_argument("--fixed-t1", required=True)
    r.add_argument("--moving-t1", required=True)
    r.add_argument("--fixed-fmri", required=True)
    r.add_argument("--moving-fmri", required=True)
    r.add_argument("--config")
    r.add_argument("--out-field", required=True)
    r.add_argument("--out-warped-t1")
    r.add_argument("--out-warped-fmri")
    r.add_argument("--loss-log")
    r.set_defaults(func=cmd_register)

    w = sub.add_parser("warp", help="apply a displacement field")
    w.add_argument("--field", required=True)
    w.add_argument("--in", dest="input", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--downsample", type=int)
    w.set_defaults(func=cmd_warp)

    f = sub.add_parser("fcmap", help="per-cube local-FC histograms")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--w", type=int, default=21)
    f.add_argument("--bins", type=int, default=21)
    f.add_argument("--hard", action="store_true")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fcmap)

    d = sub.add_parser("dice", help="Dice overlap of two label images")
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    d.add_argument("--labels", type=int, nargs="+")
    d.add_argument("--out")
    d.set_defaults(func=cmd_dice)

    t = sub.add_parser("tmap", help="one-sample group t-map and threshold report")
    t.add_argument("--inputs", nargs="+", required=True)
    t.add_argument("--threshold", type=float, required=True)
    t.add_argument("--out")
    t.add_argument("--report")
    t.add_argument("--mask")
    t.add_argument("--zscore", action="store_true")
    t.set_defaults(func=cmd_tmap)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        worker_count()
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"fcreg {args.command}: {exc}", file=sys.stderr)
        return 1


cli_dispatch = main

if __name__ == "__main__":
    sys.exit(main())
