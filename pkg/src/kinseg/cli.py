"""Command-line front end.

Every command takes its settings from an optional JSON ``--config`` file,
with command-line flags taking precedence, and the merged settings are
checked against a strict schema. Files go where the settings say; stdout gets
one JSON summary line and diagnostics go to stderr.

Exit codes: 0 success, 1 I/O error, 2 usage or configuration error,
3 numerical failure (CFL rejection, non-finite values, failed L1 ordering).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import compare as cmp
from .core import DiffusionLaw, ModelParams, ParticleEnsemble, make_rng
from .density import GridSpec, count_peaks, empirical_histogram, marginal, write_grid
from .dsmc import quasi_invariant_params, run_dsmc
from .fpref import CflError, domain_half_width, fp_solve, uniform_state
from .microdyn import Hk1dState, count_clusters, simulate_hk_1d, write_trajectory_csv
from .segpipe import (GrayImage, SegOptions, load_image, save_image, save_mask, segment_image, segment_patched,
                      write_patch_table)
from .tune import SearchSpace, dsc_metric, random_search, write_best_json

log = logging.getLogger("kinseg")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class NumericalFailure(RuntimeError):
    pass


# Each option: (name, json type, default, help). Names use underscores in
# JSON and dashes on the command line.
_SEG = [
    ("threshold", "number", 0.5, "binarization threshold"),
    ("link_radius", ["number", "null"], None, "cluster linkage radius (default delta1/2)"),
    ("min_component_fraction", "number", 0.005, "refinement size threshold as a fraction of the image area"),
    ("scale_sigma", "boolean", True, "apply the quasi-invariant scaling sigma2 -> epsilon*sigma2"),
    ("stall_tol", ["number", "null"], None, "stop DSMC early when the mean displacement per sweep drops below this"),
]
_MODEL = [
    ("delta1", "number", 0.5, "position confidence radius"),
    ("delta2", "number", 0.1, "feature confidence radius"),
    ("sigma2", "number", 0.1, "diffusion weight"),
    ("epsilon", "number", 1e-2, "binary time step"),
    ("n_steps", "integer", 2000, "number of DSMC sweeps"),
    ("diffusion_law", "string", "parabolic", "parabolic or none"),
    ("seed", "integer", 0, "base seed"),
]
_SPACE = [
    ("delta1_range", ["array", "null"], None, "delta1 sampling range (default [pixel spacing, preset max])"),
    ("delta2_range", ["array", "null"], None, "delta2 sampling range"),
    ("sigma2_log_range", ["array", "null"], None, "sigma2 log-uniform range"),
    ("trials", "integer", 200, "number of random-search trials"),
]

OPTIONS = {
    "hk1d": [
        ("n", "integer", 100, "number of agents, equally spaced in [-1, 1]"),
        ("delta", "number", 1.0, "confidence radius"),
        ("alpha", ["number", "null"], None, "coupling (default 1/N)"),
        ("dt", "number", 0.05, "time step"),
        ("t_final", "number", 50.0, "final time"),
        ("merge_tol", "number", 1e-3, "single-linkage tolerance for counting clusters"),
        ("out", ["string", "null"], None, "trajectory CSV"),
    ],
    "dsmc": [
        ("n_particles", "integer", 10000, "particles drawn uniformly on [-1,1]^2 x [0,1] (ignored with image)"),
        ("image", ["string", "null"], None, "start from the pixels of this image instead"),
        *_MODEL,
        ("quasi_invariant", "boolean", True, "scale sigma2 by epsilon before running"),
        ("independent_noise", "boolean", False, "independent noise for the two partners of a pair"),
        ("snapshot_every", "integer", 0, "keep positions every k sweeps"),
        ("out", ["string", "null"], None, "snapshot CSV"),
        ("out_grid", ["string", "null"], None, "x-marginal density CSV (plus JSON header)"),
    ],
    "fpref": [
        ("delta", "number", 2.0, "confidence radius"),
        ("sigma2_eff", "number", 5e-2 / 6, "effective constant diffusion"),
        ("tau", "number", 50.0, "final scaled time"),
        ("dx", "number", 5e-3, "cell width"),
        ("dt", ["number", "null"], None, "time step (default: 0.9 of the admissible step)"),
        ("out", ["string", "null"], None, "density CSV (plus JSON header)"),
    ],
    "compare": [
        ("delta", "number", 2.0, "confidence radius"),
        ("sigma2", "number", 5e-2, "variance weight of a uniform-gray population"),
        ("tau", "number", 50.0, "scaled final time"),
        ("n_particles", "integer", 100000, "DSMC particles"),
        ("epsilons", "array", [1e-1, 1e-2], "epsilon values, largest first"),
        ("seeds", "array", [0], "DSMC seeds"),
        ("fp_dx", "number", 5e-3, "FP cell width"),
        ("n_bins", "integer", 61, "comparison bins on [-1, 1]"),
        ("out", ["string", "null"], None, "profile CSV"),
    ],
    "segment": [
        ("image", "string", None, "input PGM/PNG"),
        ("params_json", ["string", "null"], None, "JSON with model parameters (e.g. best.json from tune)"),
        *_MODEL,
        *_SEG,
        ("out_mask", "string", None, "mask output (0/255)"),
        ("out_levels", ["string", "null"], None, "cluster-mean image output"),
        ("truth", ["string", "null"], None, "optional ground-truth mask for a DSC report"),
    ],
    "tune": [
        ("image", "string", None, "input PGM/PNG"),
        ("truth", "string", None, "ground-truth mask"),
        ("space_json", ["string", "null"], None, "JSON with search-space overrides"),
        ("preset", "string", "default", "default or patch"),
        *_SPACE,
        *_MODEL,
        *_SEG,
        ("out", "string", None, "output directory (trials.csv, best.json, mask.png)"),
    ],
    "patch-segment": [
        ("image", "string", None, "input PGM/PNG"),
        ("truth", "string", None, "ground-truth mask"),
        ("patch_size", "integer", 54, "patch side in pixels"),
        ("space_json", ["string", "null"], None, "JSON with search-space overrides"),
        ("preset", "string", "patch", "default or patch"),
        *_SPACE,
        *_MODEL,
        *_SEG,
        ("out", "string", None, "output directory (mask.png, patches.csv)"),
    ],
}

REQUIRED = {
    "segment": ["image", "out_mask"],
    "tune": ["image", "truth", "out"],
    "patch-segment": ["image", "truth", "out"],
}


def schema_for(command: str, required: bool = False) -> dict:
    props = {name: {"type": typ} for name, typ, _, _ in OPTIONS[command]}
    props["jobs"] = {"type": "integer", "minimum": 1}
    out = {"type": "object", "properties": props, "additionalProperties": False}
    if required:
        out["required"] = REQUIRED.get(command, [])
    return out


def _parse_bool(text: str) -> bool:
    table = {"true": True, "false": False, "1": True, "0": False}
    if text.lower() not in table:
        raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")
    return table[text.lower()]


def _parse_value(typ):
    kinds = typ if isinstance(typ, list) else [typ]
    if "array" in kinds:
        return json.loads
    if "boolean" in kinds:
        return _parse_bool
    if "integer" in kinds:
        return int
    if "number" in kinds:
        return float
    return str


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinseg", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="JSON settings file; flags override its keys")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (results do not depend on it)")
        for name, typ, _, text in opts:
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=_parse_value(typ), default=None, help=text)
    return parser


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags; validated against the command schema."""
    settings = {name: default for name, _, default, _ in OPTIONS[command]}
    settings["jobs"] = 1
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        jsonschema.validate(doc, schema_for(command))
        settings.update(doc)
    for name in [o[0] for o in OPTIONS[command]] + ["jobs"]:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    jsonschema.validate({k: v for k, v in settings.items() if v is not None}, schema_for(command, required=True))
    return settings


def _model(s: dict) -> ModelParams:
    return ModelParams(s["delta1"], s["delta2"], s["sigma2"], s["epsilon"], s["n_steps"],
                       DiffusionLaw(s["diffusion_law"]), s["seed"])


def _seg_options(s: dict) -> SegOptions:
    return SegOptions(s["threshold"], s["link_radius"], s["min_component_fraction"], s["scale_sigma"], s["stall_tol"])


def _space(s: dict) -> SearchSpace:
    preset = {"default": SearchSpace.default, "patch": SearchSpace.patch}[s["preset"]](s["trials"])
    extra = json.loads(Path(s["space_json"]).read_text()) if s.get("space_json") else {}
    jsonschema.validate(extra, {"type": "object", "additionalProperties": False, "properties": {
        k: {"type": ["array", "null", "integer", "number"]}
        for k in ("delta1_range", "delta2_range", "sigma2_log_range", "n_trials", "delta1_max")}})
    fields = preset.to_dict()
    fields.update({k: v for k, v in extra.items() if v is not None})
    for key in ("delta1_range", "delta2_range", "sigma2_log_range"):
        if s.get(key) is not None:
            fields[key] = s[key]
    if s.get("trials") is not None:
        fields["n_trials"] = s["trials"]
    for key in ("delta1_range", "delta2_range", "sigma2_log_range"):
        if fields[key] is not None:
            fields[key] = tuple(fields[key])
    return SearchSpace(**fields)


def _truth_mask(path) -> np.ndarray:
    return load_image(path).pixels >= 0.5


# --- commands ----------------------------------------------------------------

def cmd_hk1d(s: dict) -> dict:
    n = s["n"]
    start = np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)
    traj = simulate_hk_1d(Hk1dState(start, s["delta"], s["alpha"]), s["dt"], s["t_final"])
    k, labels = count_clusters(traj.final, s["merge_tol"])
    centers = [float(traj.final[labels == j].mean()) for j in range(k)]
    if s["out"]:
        write_trajectory_csv(s["out"], traj.states)
    return {"clusters": k, "centers": centers, "initial_mean": float(start.mean()),
            "steps": int(traj.times.size - 1)}


def cmd_dsmc(s: dict) -> dict:
    params = _model(s)
    rng = make_rng(params.seed)
    if s["image"]:
        from .segpipe import image_to_ensemble

        ens = image_to_ensemble(load_image(s["image"]))
    else:
        n = s["n_particles"]
        ens = ParticleEnsemble(rng.uniform(-1.0, 1.0, (n, 2)), rng.uniform(0.0, 1.0, n))
    run = quasi_invariant_params(params) if s["quasi_invariant"] else params
    res = run_dsmc(ens, run, rng, s["snapshot_every"], s["independent_noise"])
    if s["out"]:
        snaps = res.snapshots or [(res.steps_run, res.final.positions)]
        write_trajectory_csv(s["out"], [p for _, p in snaps], ens.features, [k for k, _ in snaps])
    grid = marginal(empirical_histogram(res.final, GridSpec()), ["y", "c"])
    if s["out_grid"]:
        write_grid(grid, s["out_grid"])
    return {"n": len(res.final), "steps": res.steps_run, "mean": res.final.positions.mean(axis=0).tolist(),
            "x_peaks": count_peaks(grid.values)}


def cmd_fpref(s: dict) -> dict:
    half = domain_half_width(1.0, s["sigma2_eff"], s["tau"])
    nx = int(np.ceil(2.0 * half / s["dx"]))
    res = fp_solve(uniform_state(half, nx, s["delta"], s["sigma2_eff"]), s["dt"], s["tau"])
    if s["out"]:
        write_grid(res.final.as_grid(), s["out"])
    drift = float(np.max(np.abs(res.masses - res.masses[0])))
    return {"steps": res.steps, "mass": res.final.mass(), "mass_drift": drift, "mean": res.final.mean(),
            "peaks": count_peaks(res.final.g), "half_width": half, "nx": nx}


def _compare_one(args):
    cfg, fp = args
    return cmp.run_comparison(cfg, fp)


def cmd_compare(s: dict) -> dict:
    seeds = [int(v) for v in s["seeds"]]
    base = cmp.CompareConfig(s["delta"], s["sigma2"], s["tau"], s["n_particles"],
                             tuple(float(e) for e in s["epsilons"]), seeds[0], s["fp_dx"], s["n_bins"])
    fp = cmp.fp_reference(base)
    work = [(replace(base, seed=sd), fp) for sd in seeds]
    if s["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=s["jobs"]) as pool:
            results = list(pool.map(_compare_one, work))
    else:
        results = [_compare_one(w) for w in work]
    if s["out"]:
        centers = 0.5 * (base.edges[:-1] + base.edges[1:])
        with Path(s["out"]).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "epsilon", "x", "dsmc", "fp"])
            for r in results:
                for eps, prof in r.dsmc_profiles.items():
                    for x, a, b in zip(centers, prof, r.fp_profile):
                        w.writerow([r.config.seed, repr(eps), repr(float(x)), repr(float(a)), repr(float(b))])
    summary = {"fp_peaks": results[0].fp_peaks, "runs": [r.summary() for r in results],
               "ordered": all(r.ordered for r in results)}
    if not summary["ordered"]:
        raise NumericalFailure(json.dumps(summary, sort_keys=True))
    return summary


def cmd_segment(s: dict) -> dict:
    img = load_image(s["image"])
    if s["params_json"]:
        doc = json.loads(Path(s["params_json"]).read_text())
        for key in ("delta1", "delta2", "sigma2", "epsilon", "n_steps", "seed", "diffusion_law"):
            if key in doc:
                s[key] = doc[key]
    seg = segment_image(img, _model(s), _seg_options(s))
    save_mask(s["out_mask"], seg.mask)
    if s["out_levels"]:
        save_image(s["out_levels"], GrayImage(seg.levels, img.bit_depth))
    out = {"clusters": seg.n_clusters, "foreground": int(seg.mask.sum()), "steps": seg.steps_run}
    if s["truth"]:
        out["dsc"] = dsc_metric(seg.mask, _truth_mask(s["truth"]))
    return out


def cmd_tune(s: dict) -> dict:
    img = load_image(s["image"])
    truth = _truth_mask(s["truth"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    opts = _seg_options(s)
    trials, best = random_search(img, truth, _space(s), opts, seed=s["seed"], base=_model(s), jobs=s["jobs"])
    trials.write_csv(out / "trials.csv")
    write_best_json(out / "best.json", best, trials.best.dsc_loss)
    seg = segment_image(img, best, opts)
    save_mask(out / "mask.png", seg.mask)
    return {"best": {"delta1": best.delta1, "delta2": best.delta2, "sigma2": best.sigma2, "seed": best.seed},
            "dsc": 1.0 - trials.best.dsc_loss, "trials": len(trials.records)}


def cmd_patch_segment(s: dict) -> dict:
    img = load_image(s["image"])
    truth = _truth_mask(s["truth"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    res = segment_patched(img, truth, _space(s), _seg_options(s), _model(s), s["seed"], s["jobs"], s["patch_size"])
    save_mask(out / "mask.png", res.mask)
    write_patch_table(out / "patches.csv", res.records)
    return {"patches": len(res.records), "padded": list(res.layout.padded_shape),
            "dsc": dsc_metric(res.mask, truth)}


COMMANDS = {
    "hk1d": cmd_hk1d,
    "dsmc": cmd_dsmc,
    "fpref": cmd_fpref,
    "compare": cmd_compare,
    "segment": cmd_segment,
    "tune": cmd_tune,
    "patch-segment": cmd_patch_segment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args.command, args)
        summary = COMMANDS[args.command](settings)
    except jsonschema.ValidationError as exc:
        print(f"kinseg: configuration error: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"kinseg: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"kinseg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CflError, FloatingPointError, NumericalFailure) as exc:
        print(f"kinseg: numerical failure: {exc}", file=sys.stderr)
        if isinstance(exc, NumericalFailure):
            print(str(exc), file=sys.stdout)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"kinseg: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps({"command": args.command, **summary}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
