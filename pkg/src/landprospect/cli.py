"""Command-line entry point: synth, calibrate, predict, compare, render.

Every command writes ``manifest.json`` next to its outputs (command, resolved
configuration and its hash, input and output hashes, seed, versions, timings).
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from contextlib import nullcontext
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, evaluation, pipelines
from .config import config_hash, load_config, require_seed, section
from .errors import ConfigError, ConvergenceError, DataError, LandProspectError
from .raster import load_grid, load_legend, save_grid
from .raster import ContinuousRaster
from .report import PredictionReport, file_sha256
from .synth import resolve_spec, synth_scenario

log = logging.getLogger("landprospect")

COMPARE_DEFAULTS = {"scale": 2}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4
EXIT_IO = 5


def _versions() -> dict:
    import PIL
    import scipy
    return {"landprospect": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "Pillow": PIL.__version__}


def _hashes(paths, base: Optional[Path] = None) -> dict:
    out = {}
    for p in sorted({Path(x) for x in paths}):
        if p.is_file():
            key = str(p.relative_to(base)) if base is not None and p.is_relative_to(base) else str(p)
            out[key] = file_sha256(p)
    return out


def write_manifest(path: Path, command: str, argv: list, resolved: dict, seed, inputs, outputs,
                   started: float) -> Path:
    base = path.parent
    doc = {
        "command": command,
        "argv": argv,
        "config": resolved,
        "config_hash": config_hash(resolved),
        "seed": seed,
        "inputs": _hashes(inputs),
        "outputs": _hashes(outputs, base),
        "versions": _versions(),
        "timings": {"wall_seconds": round(time.perf_counter() - started, 3)},
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _scenario_inputs(d: Path) -> list:
    index = json.loads((d / "scenario.json").read_text())
    return [d / "scenario.json", d / index.get("legend", "legend.csv")] + \
        [d / n for n in index["maps"]] + [d / n for n in index["factors"]]


def cmd_synth(args) -> dict:
    cfg = load_config(args.config)
    seed = require_seed(cfg, args.seed)
    base = Path(args.config).resolve().parent
    spec, _ = resolve_spec(cfg.get("scenario", {}), base)
    bundle = synth_scenario(cfg.get("scenario", {}), seed, base)
    paths = pipelines.write_bundle(bundle, args.out)
    return {"resolved": {"seed": seed, "scenario": spec}, "seed": seed, "inputs": [args.config],
            "outputs": list(paths.values())}


def _load_for_models(args):
    cfg = load_config(args.config)
    seed = require_seed(cfg, args.seed)
    settings = pipelines.resolve(cfg)
    bundle = pipelines.read_bundle(args.scenario)
    return cfg, seed, settings, bundle


def cmd_calibrate(args) -> dict:
    _, seed, settings, bundle = _load_for_models(args)
    t0, t1, t2 = bundle.snapshots[:3]
    factors = pipelines.prepare_factors(bundle.factors, settings["features"])
    cal = pipelines.calibrate_gis(t0, t1, t2.date, factors, settings["gis"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    legend = bundle.legend
    outputs = []
    from .markov import save_transition_csv
    for key in ("P", "P_horizon"):
        p = out / ("transition.csv" if key == "P" else "transition_horizon.csv")
        save_transition_csv(cal[key], p, legend)
        outputs.append(p)
    for t in cal["calibrations"]:
        p = out / f"calibration_{t.factor}.csv"
        t.to_csv(p, legend)
        outputs.append(p)
    for i, code in enumerate(legend.codes):
        p = out / f"suitability_{code}.grid"
        save_grid(ContinuousRaster(np.where(t1.valid, cal["suitability"][i], np.nan),
                                   name=f"suitability_{code}", cell_size=t1.cell_size), p)
        outputs.append(p)
    resolved = {"seed": seed, "features": settings["features"], "gis": settings["gis"]}
    return {"resolved": resolved, "seed": seed, "inputs": [args.config, *_scenario_inputs(Path(args.scenario))],
            "outputs": outputs}


def cmd_predict(args) -> dict:
    _, seed, settings, bundle = _load_for_models(args)
    rep = pipelines.run_model(args.model, bundle.snapshots, bundle.factors, settings, seed)
    out = Path(args.out)
    paths = rep.write(out, bundle.legend)
    paths.update(pipelines.write_artifacts(rep, out, bundle.legend))
    resolved = {"seed": seed, "model": args.model, "features": settings["features"],
                args.model: settings[args.model]}
    return {"resolved": resolved, "seed": seed, "inputs": [args.config, *_scenario_inputs(Path(args.scenario))],
            "outputs": list(paths.values())}


def cmd_compare(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    opts = section(cfg, "compare", COMPARE_DEFAULTS)
    inputs = [args.config] if args.config else []
    if args.scenario:
        bundle = pipelines.read_bundle(args.scenario)
        real = bundle.snapshots[2]
        legend = bundle.legend
        inputs += _scenario_inputs(Path(args.scenario))
    else:
        if not (args.real and args.legend):
            raise ConfigError("compare needs --scenario, or --real with --legend")
        legend = load_legend(args.legend)
        real = load_grid(args.real, "categorical", legend)
        inputs += [args.real, args.legend]
    preds = {}
    for d in args.reports:
        rep = PredictionReport.read(d, legend)
        name = rep.model
        while name in preds:
            name += "'"
        preds[name] = rep.predicted
        inputs.append(Path(d) / "report.json")
    paths = evaluation.write_outputs(args.out, real, preds, int(opts["scale"]))
    return {"resolved": {"compare": opts, "labels": list(preds)}, "seed": None, "inputs": inputs,
            "outputs": list(paths.values())}


def cmd_render(args) -> dict:
    legend = load_legend(args.legend) if args.legend else None
    m = load_grid(args.grid, "categorical", legend)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.render_map(m, out, int(args.scale))
    inputs = [args.grid] + ([args.legend] if args.legend else [])
    return {"resolved": {"scale": int(args.scale)}, "seed": None, "inputs": inputs, "outputs": [out],
            "manifest": out.with_suffix(".manifest.json")}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="landprospect", description="Prospective land-cover modelling.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", parents=[common], help="Markov matrices, factor calibration, suitability")
    p.add_argument("--config", required=True)
    p.add_argument("--scenario", required=True, help="scenario directory written by synth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", parents=[common], help="learn on (t0, t1), predict t2")
    p.add_argument("model", choices=sorted(pipelines.RUNNERS))
    p.add_argument("--config", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", parents=[common], help="tables and maps for three predictions")
    p.add_argument("reports", nargs=3, help="three prediction directories")
    p.add_argument("--scenario", help="scenario directory; its third map is the reference")
    p.add_argument("--real", help="reference map grid (with --legend)")
    p.add_argument("--legend")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("render", parents=[common], help="render a categorical grid as PNG")
    p.add_argument("grid")
    p.add_argument("--legend")
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return ap


def _limits(threads: Optional[int]):
    if threads is None:
        return nullcontext()
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        with _limits(args.threads):
            res = args.func(args)
        manifest = res.get("manifest") or Path(args.out) / "manifest.json"
        command = args.command + (f" {args.model}" if args.command == "predict" else "")
        write_manifest(Path(manifest), command, argv, res["resolved"], res["seed"], res["inputs"],
                       res["outputs"], started)
        log.info("%s done in %.2fs", command, time.perf_counter() - started)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, default=str), file=sys.stderr)
        return EXIT_CONVERGENCE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LandProspectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
