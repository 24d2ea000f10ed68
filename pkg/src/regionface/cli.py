"""Command line entry point: ``regionface {gen-db,render-db,make-input,fit,texture}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .mesh import validate_database
from .pipeline import Database, PipelineError, run_pipeline, run_texture, write_region_db
from .synth import gen_synthetic_db, write_input
from .texture import read_rgb


def _cmd_gen_db(args):
    gen_synthetic_db(args.seed, args.count, args.out, texture_size=args.texture_size)
    print(f"wrote {args.count} heads to {args.out}")


def _cmd_render_db(args):
    cfg = load_config(args.config, workers=args.workers)
    db = Database.load(args.db)
    report = validate_database(db.meshes, db.regions, db.lmap)
    if not report.ok:
        sys.exit("database validation failed:\n  " + "\n  ".join(report.failures()))
    rdb = write_region_db(db, cfg, args.out)
    print(f"rendered {len(rdb)} models x 4 regions to {args.out}")


def _cmd_make_input(args):
    cfg = load_config(args.config)
    db = Database.load(args.db)
    k = db.model_ids.index(args.head)
    tex = read_rgb(Path(args.db) / "textures" / f"{args.head}.png") if args.color else None
    write_input(db.meshes[k], db.lmap, cfg.render, args.out, tuple(args.yaw), tex)
    print(f"wrote {len(args.yaw)} frames of head {args.head} to {args.out}")


def _cmd_fit(args):
    cfg = load_config(args.config, db=Path(args.db), top_n=args.top_n, workers=args.workers)
    result = run_pipeline(cfg, args.input, args.out, regions_dir=args.regions, texture=not args.no_texture)
    top = {r: v["selected"][0] for r, v in result.report["regions"].items()}
    print(f"wrote {args.out}/head.obj; top matches {top}")


def _cmd_texture(args):
    cfg = load_config(args.config, db=Path(args.db))
    run_texture(cfg, args.frames, args.landmarks, args.out)
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regionface", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-db", help="generate the synthetic head database")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=32)
    s.add_argument("--out", required=True)
    s.add_argument("--texture-size", type=int, default=2048)
    s.set_defaults(func=_cmd_gen_db)

    s = sub.add_parser("render-db", help="render and crop the region database")
    s.add_argument("--db", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=_cmd_render_db)

    s = sub.add_parser("make-input", help="render input frames + landmark files of one database head")
    s.add_argument("--db", required=True)
    s.add_argument("--head", required=True, help="model id, e.g. 0003")
    s.add_argument("--out", required=True)
    s.add_argument("--yaw", type=float, nargs="+", default=[-30.0, 0.0, 30.0])
    s.add_argument("--color", action="store_true", help="shade the head's texture instead of plain gray")
    s.add_argument("--config")
    s.set_defaults(func=_cmd_make_input)

    s = sub.add_parser("fit", help="reconstruct a textured head from frames + landmarks")
    s.add_argument("--db", required=True)
    s.add_argument("--input", required=True, help="directory of <id>.png frames and <id>.json landmarks")
    s.add_argument("--out", required=True)
    s.add_argument("--top-n", type=int, choices=(1, 3))
    s.add_argument("--config")
    s.add_argument("--regions", help="render-db output; rebuilt in memory when absent or stale")
    s.add_argument("--workers", type=int)
    s.add_argument("--no-texture", action="store_true")
    s.set_defaults(func=_cmd_fit)

    s = sub.add_parser("texture", help="build only the texture atlas")
    s.add_argument("--frames", required=True)
    s.add_argument("--landmarks", required=True)
    s.add_argument("--db", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=_cmd_texture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
