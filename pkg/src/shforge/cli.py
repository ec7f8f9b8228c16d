"""Command-line front end: generate, split, stats, eval, preview.

Exit codes: 0 success, 1 input error, 2 I/O error. ``SHFORGE_LOG`` sets the
log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .body_model import load_model, toy_model
from .camera import intrinsics_from_physical
from .dataset_io import (REFERENCE_COUNTS, dataset_stats, format_stats_table, iter_clip_dirs, read_clip_meta,
                         read_frame, read_manifest, write_manifest)
from .errors import InputError
from .metrics import MetricsAccumulator
from .motion import OVERLAPS, load_motions, toy_motions
from .pipeline import generate_dataset
from .scene_sampler import load_banks
from .splitter import assign_split

log = logging.getLogger("shforge")

EXIT_OK, EXIT_INPUT, EXIT_IO = 0, 1, 2

SEGM_PALETTE = np.array([
    [0, 0, 0], [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
    [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60],
    [250, 190, 212], [0, 128, 128], [220, 190, 255], [170, 110, 40], [128, 0, 0],
], dtype=np.uint8)


def _depth_palette() -> np.ndarray:
    from matplotlib import colormaps

    colors = (colormaps["viridis"](np.linspace(0.0, 1.0, 19))[:, :3] * 255).round().astype(np.uint8)
    return np.vstack([[0, 0, 0], colors]).astype(np.uint8)


def flow_to_rgb(flow: np.ndarray) -> np.ndarray:
    """Hue = direction, saturation = magnitude relative to the frame maximum."""
    from matplotlib.colors import hsv_to_rgb

    mag = np.linalg.norm(flow, axis=-1)
    peak = mag.max() if mag.max() > 0 else 1.0
    hsv = np.stack([
        (np.arctan2(flow[..., 1], flow[..., 0]) / (2 * np.pi)) % 1.0,
        np.clip(mag / peak, 0.0, 1.0),
        np.ones_like(mag),
    ], axis=-1)
    return (hsv_to_rgb(hsv) * 255).round().astype(np.uint8)


def preview_panel(clip_dir: str | Path, frame: int) -> np.ndarray:
    record, metas = read_clip_meta(clip_dir)
    if not 0 <= frame < len(metas):
        raise InputError(f"frame {frame} out of range (clip has {len(metas)} frames)")
    p = read_frame(clip_dir, record, metas[frame])
    return np.concatenate([p.rgb, SEGM_PALETTE[p.segm], _depth_palette()[p.depth_labels],
                           flow_to_rgb(p.flow)], axis=1)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.toy:
        model = load_model(args.model) if args.model else toy_model()
        motions = load_motions(args.motions) if args.motions else toy_motions()
    else:
        if not args.model or not args.motions:
            raise InputError("--model and --motions are required unless --toy is given")
        model = load_model(args.model)
        motions = load_motions(args.motions)
    banks = load_banks(args.textures, args.backgrounds, args.shapes)
    overlaps = OVERLAPS if args.overlap == "all" else (float(args.overlap),)
    intr = intrinsics_from_physical(60.0, 32.0, args.width, args.height)
    manifest = generate_dataset(
        model, motions, banks, args.out, seed=args.seed, overlaps=overlaps, intr=intr,
        workers=args.workers, max_clips=args.max_clips, max_clothing=args.max_clothing,
        overwrite=args.overwrite, test_fraction=None if args.no_split else args.test_frac,
    )
    print(format_stats_table(dataset_stats(manifest)))
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = read_manifest(args.data)
    banks = load_banks(args.textures, args.backgrounds, args.shapes)
    manifest.split = assign_split(manifest, banks, args.test_frac, args.seed)
    write_manifest(manifest, args.data)
    s = manifest.split
    held_tex, held_bg = set(s.test_texture_ids), set(s.test_background_ids)
    conflicts = sum(
        1 for c in manifest.clips
        if ((c.scene.texture_id in held_tex) != (s.subjects[c.subject_id] == "test") and held_tex)
        or ((c.scene.background_id in held_bg) != (s.subjects[c.subject_id] == "test") and held_bg)
    )
    n_test = sum(v == "test" for v in s.subjects.values())
    print(f"test subjects: {n_test}/{len(s.subjects)}  test frame fraction: {s.test_fraction:.4f}")
    if conflicts:
        print(f"warning: {conflicts} existing clips use assets from the other split; regenerate to enforce hold-out")
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.reference:
        rows = list(REFERENCE_COUNTS)
    else:
        rows = dataset_stats(read_manifest(args.data))
    if args.json:
        print(json.dumps({name: dict(zip(("subjects", "sequences", "clips", "frames"), vals))
                          for name, vals in rows}, indent=1))
    else:
        print(format_stats_table(rows))
    return EXIT_OK


def _read_label_png(path: Path) -> np.ndarray:
    if not path.exists():
        raise InputError(f"missing prediction {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def cmd_eval(args) -> int:
    gt_root, pred_root = Path(args.gt), Path(args.pred)
    acc = MetricsAccumulator()
    clip_dirs = list(iter_clip_dirs(gt_root))
    if not clip_dirs:
        raise InputError(f"no clips under {gt_root}")
    for clip_dir in clip_dirs:
        rel = clip_dir.relative_to(gt_root)
        record, metas = read_clip_meta(clip_dir)
        for meta in metas:
            p = read_frame(clip_dir, record, meta)
            files = meta["files"]
            pred_segm = _read_label_png(pred_root / rel / files["segm"])
            pred_depth = _read_label_png(pred_root / rel / files["depth_labels"])
            valid = ~p.joints_behind if p.joints_behind is not None and p.joints_behind.size else None
            acc.add(pred_segm, p.segm, pred_depth, p.depth_labels, p.joints2d, valid)
    report = acc.report()
    doc = report.to_dict()
    if args.json:
        Path(args.json).write_text(json.dumps(doc, indent=1) + "\n")
    print(report.format_text())
    return EXIT_OK


def cmd_preview(args) -> int:
    panel = preview_panel(args.clip_dir, args.frame)
    Image.fromarray(panel).save(args.out)
    print(f"wrote {args.out} ({panel.shape[1]}x{panel.shape[0]})")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a dataset")
    g.add_argument("--model", help="body model file (sh-forge-model/1)")
    g.add_argument("--motions", help="motion file or directory of motion files")
    g.add_argument("--textures", help="directory of UV texture images")
    g.add_argument("--backgrounds", help="directory of background images")
    g.add_argument("--shapes", help="JSON array of 10-d shape vectors")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--overlap", choices=["0.3", "0.5", "0.7", "all"], default="all")
    g.add_argument("--width", type=int, default=320)
    g.add_argument("--height", type=int, default=240)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--max-clips", type=int)
    g.add_argument("--max-clothing", type=int)
    g.add_argument("--test-frac", type=float, default=0.2)
    g.add_argument("--no-split", action="store_true", help="skip the subject split and asset hold-out")
    g.add_argument("--toy", action="store_true", help="use the bundled toy model and motions")
    g.add_argument("--overwrite", action="store_true")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("split", help="assign subjects to train/test in a dataset manifest")
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-frac", type=float, default=0.2)
    s.add_argument("--textures")
    s.add_argument("--backgrounds")
    s.add_argument("--shapes")
    s.set_defaults(func=cmd_split)

    st = sub.add_parser("stats", help="subject/sequence/clip/frame counts per split")
    st.add_argument("--data", default=".")
    st.add_argument("--json", action="store_true")
    st.add_argument("--reference", action="store_true", help="print the full-scale reference counts")
    st.set_defaults(func=cmd_stats)

    e = sub.add_parser("eval", help="segmentation and depth metrics of predictions against a dataset")
    e.add_argument("--pred", required=True, help="directory mirroring the dataset layout")
    e.add_argument("--gt", required=True, help="dataset root")
    e.add_argument("--json", help="write the report as JSON here")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("preview", help="RGB | segmentation | depth labels | flow panel")
    p.add_argument("clip_dir")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preview)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SHFORGE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors are input errors; --help exits 0
        return EXIT_OK if not exc.code else EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
