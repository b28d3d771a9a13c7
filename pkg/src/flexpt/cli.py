"""Command line interface: simulate, fit, predict, score, report, export.

Every fit writes a result bundle directory (config snapshot, scaling
metadata, particle trees, diagnostics, summary) that the downstream
commands consume without re-reading the raw data.  Reports and predictions
render matplotlib figures next to their CSV output.

Exit codes: 0 ok, 1 user error (bad flags or inputs), 2 internal error.
Config file: JSON via --config or the FLEXPT_CONFIG environment variable;
command line flags override file values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import bundle as bundle_io
from . import simulate as sim
from . import viz
from .geometry import GroupedDataset
from .ingest import IngestError, ScalingInfo, ingest_single, ingest_twosample, load_table
from .models import make_model
from .outputs import (
    finish_fit,
    population_null_probability,
    predictive_density_at,
    predictive_score,
    two_sample_report,
)
from .smc import run as smc_run

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
CONFIG_ENV = "FLEXPT_CONFIG"


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _add_fit_flags(p: _Parser, default_eta: float):
    p.add_argument("--out", required=True, help="result bundle directory")
    p.add_argument("--config", help=f"JSON config file (or ${CONFIG_ENV})")
    p.add_argument("--model", help="state model: pt, apt or mrs")
    p.add_argument("--scaling", choices=["affine", "rank", "none"], help="margin scaling (default affine)")
    p.add_argument("--eta", type=float, help=f"location balance penalty (default {default_eta})")
    p.add_argument("--grid", type=int, dest="n_l", help="cut grid density N_L (default 32)")
    p.add_argument("--spike", action="store_true", default=None, help="enable the midpoint spike process")
    p.add_argument("--particles", type=int, help="number of particles (default 1000)")
    p.add_argument("--max-depth", type=int, help="maximum tree depth (default 15)")
    p.add_argument("--min-count", type=int, help="stop dividing below this count (default 5)")
    p.add_argument("--kappa", type=float, help="tempering exponent for resampling (default 0.5)")
    p.add_argument("--ess-frac", type=float, help="resample when ESS < frac * M (default 0.1)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers for message passing (default: all cores)")


def build_parser() -> _Parser:
    parser = _Parser(prog="flexpt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a benchmark scenario dataset")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, help="sample size (density scenarios)")
    p.add_argument("--n1", type=int, help="group 1 size (two-sample scenarios)")
    p.add_argument("--n2", type=int, help="group 2 size (two-sample scenarios)")
    p.add_argument("--d", type=int, help="dimension where the scenario allows it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-density", help="fit the density model to one group")
    p.add_argument("--data", required=True, help="CSV of observations")
    _add_fit_flags(p, default_eta=0.01)

    p = sub.add_parser("fit-twosample", help="fit the two-sample coupling model")
    p.add_argument("--data", required=True, nargs="+", help="two CSVs, or one CSV with a group column")
    p.add_argument("--group-column", help="group label column (single-file input)")
    _add_fit_flags(p, default_eta=0.1)

    p = sub.add_parser("predict", help="evaluate the posterior mean density")
    p.add_argument("--bundle", required=True)
    p.add_argument("--points", help="CSV of evaluation points (original units)")
    p.add_argument("--grid-points", type=int, help="regular grid resolution (d <= 2)")
    p.add_argument("--out", help="output directory (default: the bundle)")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("score", help="average log predictive density on a test set")
    p.add_argument("--bundle", required=True)
    p.add_argument("--test", required=True, help="CSV of held-out points")
    p.add_argument("--out", help="output directory (default: the bundle)")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="two-sample report: global null, node table, figures")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", help="output directory (default: the bundle)")
    p.add_argument("--min-node-size", type=int, default=0, help="drop nodes below this count")
    p.add_argument("--top-k", type=int, help="keep only the strongest nodes")
    p.add_argument("--draws", type=int, default=1000, help="Monte Carlo draws per effect size")
    p.add_argument("--pmap-threshold", type=float, default=0.95)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("export-tree", help="export one sampled tree as JSON or DOT")
    p.add_argument("--bundle", required=True)
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.add_argument("--particle", default="map", help='particle index or "map"')
    p.add_argument("--out", help="output file")
    p.add_argument("--jobs", type=int, default=1)
    return parser


# -- config assembly -------------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UserError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UserError(f"config file {path} is not valid JSON: {exc}")


def _fit_config(args, command: str, default_model: str, default_eta: float) -> dict:
    file_cfg = _load_config_file(args.config)
    prior = {"n_l": 32, "eta": default_eta, "lambda": "uniform", "spike": False}
    prior.update(file_cfg.get("prior", {}))
    smc = {"particles": 1000, "max_depth": 15, "min_count": 5, "kappa": 0.5, "ess_frac": 0.1, "seed": 0}
    smc.update(file_cfg.get("smc", {}))
    cfg = {
        "command": command,
        "model": file_cfg.get("model", default_model),
        "model_params": file_cfg.get("model_params", {}),
        "prior": prior,
        "smc": smc,
        "scaling": file_cfg.get("scaling", "affine"),
        "data": args.data,
    }
    if getattr(args, "group_column", None) is not None:
        cfg["group_column"] = args.group_column
    overrides = {
        "model": args.model,
        "scaling": args.scaling,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    for key, attr in (("eta", "eta"), ("n_l", "n_l"), ("spike", "spike")):
        val = getattr(args, attr)
        if val is not None:
            cfg["prior"][key] = val
    for key, attr in (
        ("particles", "particles"),
        ("max_depth", "max_depth"),
        ("min_count", "min_count"),
        ("kappa", "kappa"),
        ("ess_frac", "ess_frac"),
        ("seed", "seed"),
    ):
        val = getattr(args, attr)
        if val is not None:
            cfg["smc"][key] = val
    return cfg


def _run_fit(data: GroupedDataset, cfg: dict, jobs: int | None):
    model = make_model(cfg["model"], cfg.get("model_params"))
    prior_cfg = bundle_io.prior_from_dict(cfg["prior"])
    smc_cfg = bundle_io.smc_from_dict(cfg["smc"])
    t0 = time.perf_counter()
    result = smc_run(data, model, prior_cfg, smc_cfg)
    t_fit = time.perf_counter() - t0
    t0 = time.perf_counter()
    fit = finish_fit(data, model, prior_cfg, smc_cfg, result, jobs)
    t_messages = time.perf_counter() - t0
    timing = {"wall_time_fit": t_fit, "wall_time_messages": t_messages}
    return fit, timing


def cmd_fit_density(args) -> int:
    cfg = _fit_config(args, "fit-density", default_model="apt", default_eta=0.01)
    scaled, scaling = ingest_single(args.data, cfg["scaling"])
    data = GroupedDataset.single(scaled)
    fit, timing = _run_fit(data, cfg, args.jobs)
    out = bundle_io.save_fit_bundle(args.out, fit, cfg, scaling, timing=timing)
    viz.save_ess_trace(fit.smc.diagnostics, out / "ess_trace.png")
    print(f"fit-density: {data.sizes[0]} points, d={data.dim}; bundle at {out}")
    return EXIT_OK


def cmd_fit_twosample(args) -> int:
    cfg = _fit_config(args, "fit-twosample", default_model="mrs", default_eta=0.1)
    if len(args.data) not in (1, 2):
        raise UserError("--data takes one CSV (with --group-column) or two CSVs")
    g1, g2, scaling = ingest_twosample(
        args.data if len(args.data) == 2 else args.data[0],
        cfg["scaling"],
        group_column=args.group_column,
    )
    data = GroupedDataset([g1, g2])
    fit, timing = _run_fit(data, cfg, args.jobs)
    p_h0 = population_null_probability(fit)
    out = bundle_io.save_fit_bundle(
        args.out, fit, cfg, scaling, summary_extra={"p_h0": p_h0}, timing=timing
    )
    viz.save_ess_trace(fit.smc.diagnostics, out / "ess_trace.png")
    print(f"fit-twosample: n=({len(g1)},{len(g2)}), d={data.dim}, P(H0|x)={p_h0:.4g}; bundle at {out}")
    return EXIT_OK


def _density_with_jacobian(density_cube: np.ndarray, scaling: ScalingInfo):
    if scaling.mode == "affine":
        log_jac = -float(np.sum(np.log(scaling.ranges + scaling.eps)))
        return density_cube * np.exp(log_jac), log_jac
    if scaling.mode == "none":
        return density_cube.copy(), 0.0
    return None, None


def cmd_predict(args) -> int:
    loaded = bundle_io.load_fit_bundle(args.bundle, jobs=args.jobs)
    fit, scaling = loaded.fit, loaded.scaling
    dim = fit.trees[0].dim
    out = Path(args.out or loaded.path)
    out.mkdir(parents=True, exist_ok=True)
    if (args.points is None) == (args.grid_points is None):
        raise UserError("predict needs exactly one of --points or --grid-points")
    if args.points is not None:
        pts_orig, _, _ = load_table(args.points)
        if pts_orig.shape[1] != dim:
            raise UserError(f"points have {pts_orig.shape[1]} columns, the fit is {dim}-dimensional")
        pts_cube, n_clamped = scaling.transform(pts_orig)
        grid_axes = None
    else:
        if dim > 2:
            raise UserError("--grid-points supports 1- or 2-dimensional fits only")
        g = args.grid_points
        axis = (np.arange(g) + 0.5) / g
        if dim == 1:
            pts_cube = axis.reshape(-1, 1)
        else:
            a, b = np.meshgrid(axis, axis, indexing="xy")
            pts_cube = np.column_stack([a.ravel(), b.ravel()])
        pts_orig = np.column_stack(
            [scaling.inverse(j, pts_cube[:, j]) for j in range(dim)]
        )
        n_clamped = 0
        grid_axes = axis
    density = predictive_density_at(pts_cube, fit)
    dens_orig, log_jac = _density_with_jacobian(density, scaling)
    header = scaling.columns[:dim] + ["density"]
    rows = [list(p) + [float(v)] for p, v in zip(pts_orig, density)]
    if dens_orig is not None and scaling.mode == "affine":
        header.append("density_original_units")
        for row, v in zip(rows, dens_orig):
            row.append(float(v))
    bundle_io.write_csv(out / "density.csv", header, rows)
    bundle_io.write_json(
        out / "predict.json",
        {"n_points": len(rows), "n_clamped": n_clamped, "log_jacobian": log_jac},
    )
    if grid_axes is not None:
        if dim == 1:
            viz.save_density_curve(pts_orig[:, 0], density, out / "density.png")
        else:
            grid = density.reshape(len(grid_axes), len(grid_axes))
            viz.save_density_heatmap(
                scaling.inverse(0, grid_axes), scaling.inverse(1, grid_axes), grid, out / "density.png"
            )
    print(f"predict: wrote {out / 'density.csv'} ({len(rows)} points)")
    return EXIT_OK


def cmd_score(args) -> int:
    loaded = bundle_io.load_fit_bundle(args.bundle, jobs=args.jobs)
    fit, scaling = loaded.fit, loaded.scaling
    pts_orig, _, _ = load_table(args.test)
    if pts_orig.shape[1] != fit.trees[0].dim:
        raise UserError("test points do not match the fitted dimension")
    pts_cube, n_clamped = scaling.transform(pts_orig)
    score = predictive_score(pts_cube, fit)
    _, log_jac = _density_with_jacobian(np.ones(1), scaling)
    payload = {
        "predictive_score": score,
        "n_test": len(pts_orig),
        "n_clamped": n_clamped,
    }
    if log_jac is not None:
        payload["predictive_score_original_units"] = score + log_jac
    out = Path(args.out or loaded.path)
    out.mkdir(parents=True, exist_ok=True)
    bundle_io.write_json(out / "score.json", payload)
    print(f"score: {score:.6f} on {len(pts_orig)} points ({n_clamped} clamped)")
    return EXIT_OK


def cmd_report(args) -> int:
    loaded = bundle_io.load_fit_bundle(args.bundle, jobs=args.jobs)
    fit = loaded.fit
    if getattr(fit.model, "kind", None) != "mrs":
        raise UserError("report requires a two-sample (mrs) fit bundle")
    rep = two_sample_report(
        fit,
        min_node_size=args.min_node_size,
        top_k=args.top_k,
        pmap_threshold=args.pmap_threshold,
        n_draws=args.draws,
        seed=fit.smc_cfg.seed,
    )
    out = Path(args.out or loaded.path)
    out.mkdir(parents=True, exist_ok=True)
    scaling = loaded.scaling
    header = [
        "node",
        "depth",
        "split_dim",
        "cut",
        "cut_original_units",
        "n_group1",
        "n_group2",
        "pmap",
        "effect_size",
        "lower",
        "upper",
    ]
    rows = []
    for r in rep.rows:
        cut_orig = float(scaling.inverse(r["split_dim"], [r["cut"]])[0])
        rows.append(
            [
                r["node"],
                r["depth"],
                r["split_dim"],
                r["cut"],
                cut_orig,
                r["n_group1"],
                r["n_group2"],
                r["pmap"],
                r["effect_size"],
                r["lower"],
                r["upper"],
            ]
        )
    bundle_io.write_csv(out / "nodes.csv", header, rows)
    bundle_io.write_json(out / "report.json", rep.summary_dict())
    viz.save_effect_sizes(rep.rows, out / "effect_sizes.png")
    if fit.trees[0].dim == 2:
        viz.save_partition_boxes(fit.map_tree, out / "partition.png", label="MAP tree partition")
    print(
        f"report: P(H0|x)={rep.p_h0:.4g}, {len(rep.rows)} node rows, "
        f"{rep.n_high_pmap} nodes with PMAP >= {rep.pmap_threshold}"
    )
    return EXIT_OK


def cmd_export_tree(args) -> int:
    loaded = bundle_io.load_fit_bundle(args.bundle, jobs=args.jobs)
    fit = loaded.fit
    if args.particle == "map":
        idx = fit.map_index
    else:
        try:
            idx = int(args.particle)
        except ValueError:
            raise UserError('--particle must be an integer or "map"')
        if not 0 <= idx < len(fit.trees):
            raise UserError(f"particle index {idx} out of range (0..{len(fit.trees) - 1})")
    tree = fit.trees[idx]
    ms = fit.message_sets[idx]
    default_name = f"tree.{args.format}"
    out = Path(args.out) if args.out else loaded.path / default_name
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        payload = {
            "particle": idx,
            "log_weight": float(fit.smc.log_weights[idx]),
            "log_prior": tree.log_prior(fit.prior_cfg),
            "log_marginal": ms.log_marginal,
            "tree": tree.to_dict(),
        }
        with open(out, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
    else:
        out.write_text(tree.to_dot() + "\n")
    print(f"export-tree: wrote {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        drawn = sim.simulate(
            args.scenario, n=args.n, n1=args.n1, n2=args.n2, d=args.d, seed=args.seed
        )
    except ValueError as exc:
        raise UserError(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "scenario": args.scenario,
        "seed": args.seed,
        "needs_scaling": drawn["needs_scaling"],
    }

    def dump(name, arr):
        header = [f"x{j + 1}" for j in range(arr.shape[1])]
        bundle_io.write_csv(out / name, header, [list(map(float, row)) for row in arr])

    if "data" in drawn:
        dump("data.csv", drawn["data"])
        meta["n"] = len(drawn["data"])
        files = ["data.csv"]
    else:
        dump("group1.csv", drawn["group1"])
        dump("group2.csv", drawn["group2"])
        meta["n1"] = len(drawn["group1"])
        meta["n2"] = len(drawn["group2"])
        files = ["group1.csv", "group2.csv"]
    bundle_io.write_json(out / "meta.json", meta)
    print(f"simulate: {args.scenario} -> {', '.join(str(out / f) for f in files)}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit-density": cmd_fit_density,
    "fit-twosample": cmd_fit_twosample,
    "predict": cmd_predict,
    "score": cmd_score,
    "report": cmd_report,
    "export-tree": cmd_export_tree,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UserError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
