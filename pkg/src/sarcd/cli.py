"""Command-line entry point: `sarcd synth | run | eval`.

Exit codes: 0 ok, 1 I/O or parse error, 2 dimension mismatch or non-binary
map, 3 degenerate clustering.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, imaging, metrics, pcanet, synthgen
from .clustering import DegenerateClustering
from .imaging import DimensionMismatch, ImageFormatError
from .pipeline import (ConfigError, PipelineConfig, config_to_text, format_report,
                       parse_config, run_full)

log = logging.getLogger("sarcd")

EXIT_OK, EXIT_IO, EXIT_SHAPE, EXIT_DEGENERATE = 0, 1, 2, 3
CONFIG_ENV = "SARCD_CONFIG"


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions():
    import sklearn

    return {"sarcd": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scikit-learn": sklearn.__version__}


def _write_manifest(out: Path, **entries):
    manifest = {"versions": _versions(), **entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    text = Path(args.spec).read_text()
    spec = synthgen.parse_scene(text)
    if args.seed is not None:
        spec = synthgen.SceneSpec(**{**spec.__dict__, "rng_seed": args.seed})
    t0 = time.perf_counter()
    I1, I2, truth = synthgen.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in (("I1.pgm", I1), ("I2.pgm", I2)):
        imaging.save_image(out / name, np.clip(np.rint(img), 0, 65535))
    imaging.write_pgm(out / "truth.pgm", truth * 255, maxval=255)
    _write_manifest(out, command="synth", scene=synthgen.scene_to_text(spec),
                    seed=spec.rng_seed, spec_sha256=sha256(args.spec),
                    timings={"generate": round(time.perf_counter() - t0, 3)})
    print(f"wrote {out}/I1.pgm, I2.pgm, truth.pgm ({spec.rows}x{spec.cols})")
    return EXIT_OK


# ------------------------------------------------------------------------ run

def _load_config(path):
    """Config from `path`, else $SARCD_CONFIG, else defaults (every key a fallback)."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        cfg, fallbacks = parse_config("")
        return cfg, fallbacks, None
    cfg, fallbacks = parse_config(Path(path).read_text())
    return cfg, fallbacks, str(path)


def _dump_debug(debug: Path, result, I1):
    debug.mkdir(parents=True, exist_ok=True)
    p1, p2 = result.phase1, result.phase2
    imaging.save_change_map_png(debug / "phase1_cc.png", p1.labels)
    imaging.save_boundary_png(debug / "phase1_superpixels.png", I1, p1.smap.labels)
    if p1.model is not None:
        pcanet.save_model(p1.model, debug / "pcanet1.bin")
    if p2 is not None and p2.smap is not None:
        imaging.save_boundary_png(debug / "phase2_superpixels.png",
                                  imaging.mask_unchanged(I1, p1.labels), p2.smap.labels)
        if p2.model is not None:
            pcanet.save_model(p2.model, debug / "pcanet2.bin")
        if p2.lrsd is not None:
            rows = ["iteration,residual,rank,e_l21"]
            rows += [f"{i},{r:.6e},{k},{e:.6e}" for i, (r, k, e) in
                     enumerate(p2.lrsd.history, start=1)]
            (debug / "lrsd_history.csv").write_text("\n".join(rows) + "\n")


def cmd_run(args) -> int:
    from threadpoolctl import threadpool_limits

    cfg, fallbacks, cfg_path = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    I1 = imaging.load_image(args.i1)
    I2 = imaging.load_image(args.i2)
    imaging.check_same_shape(I1, I2)

    out = Path(args.out or time.strftime("sarcd-run-%Y%m%d-%H%M%S"))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with threadpool_limits(limits=args.threads):
        result = run_full(I1, I2, cfg, phase1_only=args.phase1_only)
    elapsed = time.perf_counter() - t0

    change = result.change_map
    imaging.write_pgm(out / "change.pgm", change * 255, maxval=255)
    imaging.save_change_map_png(out / "change.png", change)
    report = dict(result.report)
    report["config.source"] = cfg_path or "defaults"
    report["config.fallbacks"] = ", ".join(fallbacks) if fallbacks else "none"
    (out / "report.txt").write_text(format_report(report))
    if args.debug_dir:
        _dump_debug(Path(args.debug_dir), result, I1)
    _write_manifest(out, command="run", config=config_to_text(cfg),
                    config_fallbacks=fallbacks, seed=cfg.seed,
                    phase1_only=bool(args.phase1_only), threads=args.threads,
                    inputs={"i1": {"path": str(args.i1), "sha256": sha256(args.i1)},
                            "i2": {"path": str(args.i2), "sha256": sha256(args.i2)}},
                    outputs={"change.pgm": sha256(out / "change.pgm")},
                    timings={"total": round(elapsed, 3),
                             "phase1": report.get("phase1.seconds"),
                             "phase2": report.get("phase2.seconds")})
    print(f"{int(change.sum())} changed pixels; outputs in {out}")
    return EXIT_OK


# ----------------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    pred = imaging.load_label_map(args.pred)
    truth = imaging.load_label_map(args.truth)
    c = metrics.confusion(pred, truth)
    rep = metrics.evaluate(c)
    print(metrics.format_table(rep, c))
    out = Path(args.out) if args.out else Path(args.pred).with_name("eval.txt")
    out.write_text(metrics.format_keyvalue(rep, c))
    return EXIT_OK


# ----------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sarcd", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic image pair and truth mask")
    p.add_argument("spec", help="scene file")
    p.add_argument("out", help="output directory")
    p.add_argument("--seed", type=int, help="override the scene seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="detect changes between two images")
    p.add_argument("i1")
    p.add_argument("i2")
    p.add_argument("--config", help=f"config file (default: ${CONFIG_ENV} or built-ins)")
    p.add_argument("--out", help="output directory (default: timestamped)")
    p.add_argument("--phase1-only", action="store_true", help="stop after the CC/UC map")
    p.add_argument("--debug-dir", help="dump intermediate maps, models and LRSD history")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread cap")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a binary change map against truth")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--out", help="report file (default: eval.txt next to PRED)")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DimensionMismatch, metrics.NonBinaryLabels) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except DegenerateClustering as exc:
        print(f"error: degenerate clustering: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OSError, ImageFormatError, ConfigError, synthgen.SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
