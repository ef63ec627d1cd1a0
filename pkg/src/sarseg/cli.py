"""Command-line interface: ``sarseg {fit-mixture,segment,estimate-beta,simulate,sweep,replay}``.

Option values resolve as: command-line flag, then ``SARSEG_SEED`` (seed only),
then the ``--config`` key=value file, then the built-in default. Every
command writes a run manifest holding the fully resolved options plus input
and output hashes; ``sarseg replay`` re-executes one and checks the hashes.

Exit codes: 0 success, 1 numerical failure (outputs written but flagged),
2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .beta import EstimationUndefinedError, LoopyConfig, cd_estimate, loopy_beta_estimate, lsf_estimate
from .energy import ClassModelSet, unary_costs
from .gamma import ConvergenceError, DegenerateDataError, EmConfig, GammaMixture, mixture_pdf, run_em
from .grid import LabelField, build_cliques
from .io import (FormatError, RunManifest, file_sha256, read_config, read_image, read_label_pgm, read_pgm,
                 read_samples, write_json, write_label_pgm, write_pgm, write_raw_float)
from .pipelines import (PipelineConfig, RoiSpec, algorithm1_supervised, algorithm2_supervised,
                        algorithm3_unsupervised, fit_models_from_roi, tile_segment)
from .simulation import (SHAPES, SimSpec, SweepSpec, ground_truth, mode_for_sigma, roi_from_truth, rows_to_csv,
                         run_sweep, simulate_image, summarize, summary_json)

log = logging.getLogger("sarseg")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2
# report flags that mean the numbers should not be trusted
FAILURE_FLAGS = {"iteration_cap", "no_sign_change", "degenerate_labeling", "em_not_converged"}


class UsageError(Exception):
    pass


# -- option resolution -------------------------------------------------------

def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(",", " ").split()]


def _words(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return str(text).replace(",", " ").split()


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text in (None, "", "none") else float(text)


def _opt_int(text):
    return None if text in (None, "", "none") else int(text)


# name -> (converter, default); shared by flags and config files
OPTIONS = {
    "fit-mixture": {
        "input": (str, None), "out": (str, None), "report": (str, None),
        "K": (int, 4), "bins": (int, 64), "max_iters": (int, 200),
    },
    "segment": {
        "input": (str, None), "out": (str, None), "report": (str, None),
        "mode": (str, "unsupervised"), "roi": (_words, []), "classes": (int, 2), "K": (int, 1),
        "single_gamma": (_bool, False), "beta_method": (str, "LOOPY"), "beta": (_opt_float, None),
        "beta0": (float, 1.0), "delta": (float, 1e-3), "max_iters": (int, 30), "tile_size": (_opt_int, None),
    },
    "estimate-beta": {
        "input": (str, None), "out": (str, None), "method": (str, "LOOPY"), "labels": (str, None),
        "class_model": (_words, []), "roi": (_words, []), "classes": (int, 2), "K": (int, 1),
        "single_gamma": (_bool, False),
    },
    "simulate": {
        "out": (str, None), "truth": (str, "rectangles"), "height": (int, 128), "width": (int, 128),
        "means": (_floats, [5.0, 9.0]), "sigma": (float, 2.6), "truth_out": (str, None),
        "roi_out": (str, None), "roi_fraction": (float, 0.1),
    },
    "sweep": {
        "out": (str, None), "sigmas": (_floats, [1.0, 1.8, 2.6]), "means": (_floats, [5.0, 9.0]),
        "methods": (_words, ["TM", "LE", "LSF", "CD", "NP", "UNS"]), "reps": (int, 5),
        "truth": (str, "rectangles"), "height": (int, 128), "width": (int, 128), "roi_fraction": (float, 0.1),
    },
}
COMMON = {"seed": (int, 0), "threads": (int, None)}


def resolve(command: str, args: argparse.Namespace) -> dict:
    table = {**OPTIONS[command], **COMMON}
    cfg_file = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg_file) - set(table)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    out = {}
    for name, (conv, default) in table.items():
        flag = getattr(args, name, None)
        if flag not in (None, []):
            raw = flag
        elif name == "seed" and os.environ.get("SARSEG_SEED"):
            raw = os.environ["SARSEG_SEED"]
        elif name in cfg_file:
            raw = cfg_file[name]
        else:
            out[name] = default
            continue
        try:
            out[name] = conv(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {name}: {raw!r}") from exc
    if out["threads"] is None:
        out["threads"] = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    if out["threads"] < 1:
        raise UsageError("threads must be >= 1")
    return out


def _require(opts: dict, *names):
    for n in names:
        if opts.get(n) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required")


# -- commands ----------------------------------------------------------------

def cmd_fit_mixture(o: dict, io_log: dict) -> int:
    _require(o, "input", "out")
    if o["K"] < 1:
        raise UsageError("K must be >= 1")
    y = read_samples(o["input"])
    io_log["inputs"].append(o["input"])
    res = run_em(y, o["K"], EmConfig(max_iters=o["max_iters"]))
    mix = res.mixture
    write_json(o["out"], mix.to_dict())
    io_log["outputs"].append(o["out"])
    pos = y[y > 0]
    hi = float(np.quantile(pos, 0.999)) if pos.size else 1.0
    counts, edges = np.histogram(y, bins=o["bins"], range=(0.0, hi))
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = edges[1] - edges[0]
    report = {
        "mixture": mix.to_dict(),
        "iterations": res.iterations,
        "converged": res.converged,
        "loglik_trace": res.loglik_trace,
        "pruned_at": res.prune_iterations,
        "n_samples": int(y.size),
        "histogram": {
            "bin_edges": edges.tolist(),
            "counts": counts.tolist(),
            "density": (counts / max(y.size * width, 1e-300)).tolist(),
            "fitted_pdf": mixture_pdf(centers, mix).tolist(),
        },
        "flags": [] if res.converged else ["em_not_converged"],
    }
    rpath = o["report"] or str(Path(o["out"]).with_suffix(".hist.json"))
    write_json(rpath, report)
    io_log["outputs"].append(rpath)
    return EXIT_OK if res.converged else EXIT_NUMERICAL


def _load_roi(paths: list[str], shape, c: int, io_log: dict) -> RoiSpec:
    if len(paths) != c:
        raise UsageError(f"need one ROI mask per class: got {len(paths)} for {c} classes")
    masks = []
    for p in paths:
        m = read_pgm(p) != 0
        io_log["inputs"].append(p)
        if m.shape != tuple(shape):
            raise UsageError(f"{p}: ROI size {m.shape} does not match image {tuple(shape)}")
        masks.append(m)
    try:
        roi = RoiSpec(tuple(masks))
        roi.validate(shape)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return roi


def _pipeline_config(o: dict) -> PipelineConfig:
    try:
        return PipelineConfig(num_classes=o["classes"], K=o["K"], beta_method=o["beta_method"],
                              beta0=o["beta0"], delta=o["delta"], max_iters=o["max_iters"],
                              single_gamma=o["single_gamma"], fixed_beta=o["beta"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_segment(o: dict, io_log: dict) -> int:
    _require(o, "input", "out")
    if not 2 <= o["classes"] <= 255:
        raise UsageError("classes must lie in 2..255 for 8-bit label maps")
    mode = o["mode"].lower()
    if mode not in ("supervised", "unsupervised"):
        raise UsageError("mode must be supervised or unsupervised")
    grid = read_image(o["input"])
    io_log["inputs"].append(o["input"])
    cfg = _pipeline_config(o)
    if mode == "supervised":
        if not o["roi"]:
            raise UsageError("supervised mode needs --roi masks (one per class)")
        if o["tile_size"] is not None:
            raise UsageError("--tile-size applies to unsupervised mode only")
        roi = _load_roi(o["roi"], grid.shape, cfg.num_classes, io_log)
        if cfg.beta_method == "LOOPY" or cfg.fixed_beta is not None:
            x, rep = algorithm2_supervised(grid, roi, cfg)
        else:
            x, rep = algorithm1_supervised(grid, roi, cfg)
        report, flags = rep.to_dict(), set(rep.flags)
    elif o["tile_size"] is not None:
        if o["tile_size"] < 32:
            raise UsageError("tile size must be >= 32")
        x, reps = tile_segment(grid, o["tile_size"], cfg, threads=o["threads"])
        report = {"algorithm": "tiled", "tile_size": o["tile_size"], "tiles": [r.to_dict() for r in reps]}
        flags = set().union(*(r.flags for r in reps))
    else:
        x, rep = algorithm3_unsupervised(grid, cfg)
        report, flags = rep.to_dict(), set(rep.flags)
    write_label_pgm(o["out"], x)
    io_log["outputs"].append(o["out"])
    rpath = o["report"] or str(Path(o["out"]).with_suffix(".report.json"))
    write_json(rpath, report)
    io_log["outputs"].append(rpath)
    return EXIT_NUMERICAL if flags & FAILURE_FLAGS else EXIT_OK


def cmd_estimate_beta(o: dict, io_log: dict) -> int:
    _require(o, "input", "out")
    method = o["method"].upper()
    if method not in ("LSF", "CD", "LOOPY"):
        raise UsageError("method must be LSF, CD or LOOPY")
    grid = read_image(o["input"])
    io_log["inputs"].append(o["input"])
    c = o["classes"]
    if o["class_model"]:
        mixtures = []
        for p in o["class_model"]:
            try:
                mixtures.append(GammaMixture.from_dict(json.loads(Path(p).read_text())))
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"{p}: not a mixture JSON ({exc})") from exc
            io_log["inputs"].append(p)
        if len(mixtures) != c:
            raise UsageError(f"{len(mixtures)} class models given for {c} classes")
        models = ClassModelSet(tuple(mixtures))
    elif o["roi"]:
        roi = _load_roi(o["roi"], grid.shape, c, io_log)
        models = fit_models_from_roi(grid, roi, PipelineConfig(num_classes=c, K=o["K"],
                                                               single_gamma=o["single_gamma"]))
    else:
        raise UsageError("give class models (--class-model, one per class) or --roi masks")
    unary = unary_costs(grid, models)
    if method == "LOOPY":
        est = loopy_beta_estimate(unary, build_cliques(grid.width, grid.height), LoopyConfig())
    else:
        _require(o, "labels")
        x = read_label_pgm(o["labels"], c)
        io_log["inputs"].append(o["labels"])
        if x.shape != grid.shape:
            raise UsageError("label map and image differ in size")
        est = (lsf_estimate if method == "LSF" else cd_estimate)(x, unary)
    write_json(o["out"], {**est.to_dict(), "models": models.to_dict()})
    io_log["outputs"].append(o["out"])
    return EXIT_NUMERICAL if set(est.flags) & FAILURE_FLAGS else EXIT_OK


def _truth(o: dict, io_log: dict):
    name = o["truth"]
    if name in SHAPES:
        return ground_truth(name, o["height"], o["width"])
    p = Path(name)
    if not p.is_file():
        raise UsageError(f"truth must be one of {SHAPES} or a label PGM file")
    io_log["inputs"].append(name)
    raw = read_pgm(p)
    c = len(o["means"])
    # accept either raw label indices 1..c or the evenly spaced gray levels
    return LabelField(raw, c) if raw.min() >= 1 and raw.max() <= c else read_label_pgm(p, c)


def cmd_simulate(o: dict, io_log: dict) -> int:
    _require(o, "out")
    if not o["sigma"] > 0:
        raise UsageError("sigma must be positive")
    truth = _truth(o, io_log)
    if len(o["means"]) != truth.num_classes:
        raise UsageError("one mean per class required")
    spec = SimSpec(truth, tuple(mode_for_sigma(m, o["sigma"]) for m in o["means"]), o["seed"])
    grid = simulate_image(spec)
    if o["out"].lower().endswith(".pgm"):
        write_pgm(o["out"], np.clip(np.rint(grid.values), 0, 65535).astype(np.int64), 65535)
    else:
        write_raw_float(o["out"], grid.values)
    io_log["outputs"].append(o["out"])
    if o["truth_out"]:
        write_label_pgm(o["truth_out"], truth)
        io_log["outputs"].append(o["truth_out"])
    if o["roi_out"]:
        roi = roi_from_truth(truth, o["roi_fraction"], o["seed"])
        for l, mask in enumerate(roi.masks, start=1):
            p = f"{o['roi_out']}_{l}.pgm"
            write_pgm(p, mask.astype(np.int64) * 255, 255)
            io_log["outputs"].append(p)
    return EXIT_OK


def cmd_sweep(o: dict, io_log: dict) -> int:
    _require(o, "out")
    try:
        spec = SweepSpec(sigmas=tuple(o["sigmas"]), means=tuple(o["means"]), methods=tuple(o["methods"]),
                         repetitions=o["reps"], shape=o["truth"], height=o["height"], width=o["width"],
                         seed=o["seed"], roi_fraction=o["roi_fraction"], threads=o["threads"])
        if spec.shape not in SHAPES:
            raise ValueError(f"truth must be one of {SHAPES}")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(spec)
    (out / "sweep.csv").write_text(rows_to_csv(rows))
    (out / "summary.json").write_text(summary_json(rows) + "\n")
    summary = summarize(rows)
    lines = ["# sigma " + " ".join(spec.methods)]
    for s in spec.sigmas:
        vals = [summary[m][repr(s)]["mean_oa"] for m in spec.methods]
        lines.append(f"{s!r} " + " ".join(repr(v) for v in vals))
    (out / "oa_vs_sigma.dat").write_text("\n".join(lines) + "\n")
    for name in ("sweep.csv", "summary.json", "oa_vs_sigma.dat"):
        io_log["outputs"].append(str(out / name))
    return EXIT_OK


COMMANDS = {
    "fit-mixture": cmd_fit_mixture,
    "segment": cmd_segment,
    "estimate-beta": cmd_estimate_beta,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


# -- manifests ---------------------------------------------------------------

def _default_manifest(command: str, o: dict) -> str:
    out = Path(o["out"])
    return str(out / "manifest.json") if command == "sweep" else str(out.with_name(out.name + ".manifest.json"))


def execute(command: str, opts: dict, manifest_path: str | None = None, argv=None) -> int:
    io_log = {"inputs": [], "outputs": []}
    code = COMMANDS[command](opts, io_log)
    manifest = RunManifest(
        command=command,
        config=opts,
        inputs={p: file_sha256(p) for p in io_log["inputs"]},
        outputs={p: file_sha256(p) for p in io_log["outputs"]},
        seed=opts.get("seed"),
        version=__version__,
        argv=list(argv or []),
    )
    manifest.write(manifest_path or _default_manifest(command, opts))
    return code


def cmd_replay(path: str, threads: int | None) -> int:
    m = RunManifest.read(path)
    if m.command not in COMMANDS:
        raise UsageError(f"{path}: unknown command {m.command!r}")
    for p, digest in m.inputs.items():
        if not Path(p).is_file() or file_sha256(p) != digest:
            raise UsageError(f"input {p} is missing or changed since the recorded run")
    opts = dict(m.config)
    if threads is not None:
        opts["threads"] = threads
    io_log = {"inputs": [], "outputs": []}
    code = COMMANDS[m.command](opts, io_log)
    bad = [p for p, digest in m.outputs.items() if file_sha256(p) != digest]
    for p in bad:
        log.error("replay output differs: %s", p)
    if bad:
        return EXIT_NUMERICAL
    log.info("replay reproduced %d output(s) bit-exact", len(m.outputs))
    return code


# -- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sarseg", description="MAP segmentation of SAR-like intensity images "
                                 "with Gamma-mixture class models and a Potts prior.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value file; flags override its entries")
        p.add_argument("--seed", type=int, help="random seed (SARSEG_SEED overrides the config file)")
        p.add_argument("--threads", type=int, help="worker threads (default: available cores)")
        p.add_argument("--manifest", help="where to write the run manifest")
        return p

    p = common(sub.add_parser("fit-mixture", help="fit a Gamma mixture by EM"))
    p.add_argument("--input", "-i", help="image (PGM / F32 raw) or text file of samples")
    p.add_argument("-K", "--K", type=int, dest="K", help="initial number of modes (default 4)")
    p.add_argument("--bins", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--out", "-o", help="mixture JSON")
    p.add_argument("--report", help="histogram-fit report JSON (default: <out>.hist.json)")

    p = common(sub.add_parser("segment", help="segment an image"))
    p.add_argument("--input", "-i")
    p.add_argument("--mode", choices=["supervised", "unsupervised"])
    p.add_argument("--roi", action="append", help="ROI mask PGM for the next class (repeat once per class)")
    p.add_argument("--classes", "-c", type=int)
    p.add_argument("-K", "--K", type=int, dest="K", help="modes per class model")
    p.add_argument("--single-gamma", action="store_const", const=True)
    p.add_argument("--beta-method", type=str.upper, choices=["LSF", "CD", "LOOPY"])
    p.add_argument("--beta", type=float, help="fix beta and skip estimation (0 = no prior)")
    p.add_argument("--beta0", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tile-size", type=int)
    p.add_argument("--out", "-o", help="label map PGM")
    p.add_argument("--report", help="run report JSON (default: <out>.report.json)")

    p = common(sub.add_parser("estimate-beta", help="estimate the Potts smoothness parameter"))
    p.add_argument("--input", "-i")
    p.add_argument("--method", type=str.upper, choices=["LSF", "CD", "LOOPY"])
    p.add_argument("--labels", help="label map PGM (LSF and CD)")
    p.add_argument("--class-model", action="append", help="mixture JSON per class, in label order")
    p.add_argument("--roi", action="append", help="ROI mask PGM per class (alternative to --class-model)")
    p.add_argument("--classes", "-c", type=int)
    p.add_argument("-K", "--K", type=int, dest="K")
    p.add_argument("--single-gamma", action="store_const", const=True)
    p.add_argument("--out", "-o")

    p = common(sub.add_parser("simulate", help="simulate a Gamma-noise image from a ground truth"))
    p.add_argument("--truth", help=f"one of {', '.join(SHAPES)} or a label PGM")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--means", help="class means, comma separated")
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", "-o", help="image path (.pgm: 16-bit rounded, otherwise F32 raw)")
    p.add_argument("--truth-out")
    p.add_argument("--roi-out", help="prefix for per-class ROI masks <prefix>_<l>.pgm")
    p.add_argument("--roi-fraction", type=float)

    p = common(sub.add_parser("sweep", help="OA-versus-sigma comparison of the methods"))
    p.add_argument("--sigmas")
    p.add_argument("--means")
    p.add_argument("--methods")
    p.add_argument("--reps", type=int)
    p.add_argument("--truth", choices=list(SHAPES))
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--roi-fraction", type=float)
    p.add_argument("--out", "-o", help="output directory")

    p = sub.add_parser("replay", help="re-run a manifest and verify output hashes")
    p.add_argument("manifest")
    p.add_argument("--threads", type=int)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "replay":
            return cmd_replay(args.manifest, args.threads)
        opts = resolve(args.command, args)
        return execute(args.command, opts, args.manifest, argv)
    except (UsageError, FormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (ConvergenceError, DegenerateDataError, EstimationUndefinedError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
