"""Result bundle layout: a directory of small JSON/CSV artifacts per run.

A fit writes everything needed to serve predictions, scores and reports
without the raw data: the config snapshot, the scaling metadata, one JSON
line per particle (tree plus weight bookkeeping), the per-step diagnostics
stream, and a summary.  Deterministic byte-for-byte given the same config
and seed: keys are sorted, floats use shortest round-trip repr, and the
only nondeterministic outputs (wall times) are quarantined in timing.json.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .ingest import ScalingInfo
from .message_passing import map_tree_index
from .models import StateModel, make_model
from .outputs import FitResult, _compute_message_sets
from .priors import TreePriorConfig
from .smc import Particle, SMCConfig, SMCResult, StepRecord
from .tree import PartitionTree

TIMING_FILE = "timing.json"  # excluded from the determinism contract


def write_json(path: Path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(c) for c in row) + "\n")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if isinstance(value, (list, tuple)):
        return '"' + json.dumps(list(value)) + '"'
    return str(value)


def prior_to_dict(cfg: TreePriorConfig) -> dict:
    return {
        "n_l": cfg.n_grid,
        "eta": cfg.eta,
        "lambda": "uniform" if cfg.dim_weights is None else [float(x) for x in cfg.dim_weights],
        "spike": cfg.spike,
    }


def prior_from_dict(payload: dict) -> TreePriorConfig:
    lam = payload.get("lambda", "uniform")
    weights = None if lam == "uniform" else np.asarray(lam, dtype=float)
    return TreePriorConfig(
        n_grid=int(payload.get("n_l", payload.get("n_grid", 32))),
        eta=float(payload.get("eta", 0.01)),
        dim_weights=weights,
        spike=bool(payload.get("spike", False)),
    )


def smc_to_dict(cfg: SMCConfig) -> dict:
    return {
        "particles": cfg.n_particles,
        "max_depth": cfg.max_depth,
        "min_count": cfg.min_count,
        "kappa": cfg.kappa,
        "ess_frac": cfg.ess_frac,
        "seed": cfg.seed,
    }


def smc_from_dict(payload: dict) -> SMCConfig:
    return SMCConfig(
        n_particles=int(payload.get("particles", 1000)),
        max_depth=int(payload.get("max_depth", 15)),
        min_count=int(payload.get("min_count", 5)),
        kappa=float(payload.get("kappa", 0.5)),
        ess_frac=float(payload.get("ess_frac", 0.1)),
        seed=int(payload.get("seed", 0)),
    )


def save_fit_bundle(
    out_dir,
    fit: FitResult,
    config: dict,
    scaling: ScalingInfo,
    summary_extra: dict | None = None,
    timing: dict | None = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", config)
    write_json(out / "scaling.json", scaling.to_dict())
    with open(out / "trees.jsonl", "w") as fh:
        for particle in fit.smc.particles:
            rec = {
                "log_weight": particle.log_weight,
                "cum_log_incr": particle.cum_log_incr,
                "cum_log_proposal": particle.cum_log_proposal,
                "cum_log_h": particle.cum_log_h,
                "tree": particle.tree.to_dict(),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "diagnostics.jsonl", "w") as fh:
        for rec in fit.smc.diagnostics:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    map_ms = fit.message_sets[fit.map_index]
    summary = {
        "dim": fit.trees[0].dim,
        "n_groups": fit.trees[0].n_groups,
        "group_sizes": [int(c) for c in fit.trees[0]._counts[0]],
        "map_index": fit.map_index,
        "map_log_marginal": map_ms.log_marginal,
        "map_log_prior": fit.map_tree.log_prior(fit.prior_cfg),
        "map_n_nodes": fit.map_tree.n_nodes,
        "n_steps": len(fit.smc.diagnostics),
        "n_resamples": sum(1 for r in fit.smc.diagnostics if r.resampled),
        "final_ess": fit.smc.diagnostics[-1].ess if fit.smc.diagnostics else float(len(fit.trees)),
    }
    if summary_extra:
        summary.update(summary_extra)
    write_json(out / "summary.json", summary)
    write_json(
        out / TIMING_FILE,
        {"peak_nodes": fit.smc.peak_nodes, **(timing or {})},
    )
    return out


@dataclass
class LoadedBundle:
    path: Path
    config: dict
    scaling: ScalingInfo
    fit: FitResult
    summary: dict


def load_fit_bundle(path, jobs: int | None = 1) -> LoadedBundle:
    """Rebuild a FitResult from a bundle directory.

    Trees and weights are read back and the exact conditional posteriors
    are recomputed from the stored counts; raw data is not needed.
    """
    path = Path(path)
    with open(path / "config.json") as fh:
        config = json.load(fh)
    scaling = ScalingInfo.from_dict(json.load(open(path / "scaling.json")))
    model = make_model(config["model"], config.get("model_params"))
    prior_cfg = prior_from_dict(config["prior"])
    smc_cfg = smc_from_dict(config["smc"])
    particles = []
    with open(path / "trees.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            particles.append(
                Particle(
                    PartitionTree.from_dict(rec["tree"]),
                    log_weight=float(rec["log_weight"]),
                    cum_log_incr=float(rec["cum_log_incr"]),
                    cum_log_proposal=float(rec["cum_log_proposal"]),
                    cum_log_h=float(rec["cum_log_h"]),
                )
            )
    diagnostics = []
    diag_path = path / "diagnostics.jsonl"
    if diag_path.exists():
        with open(diag_path) as fh:
            for line in fh:
                diagnostics.append(StepRecord(**json.loads(line)))
    log_w = np.array([p.log_weight for p in particles])
    smc_result = SMCResult(
        particles=particles,
        log_weights=log_w,
        diagnostics=diagnostics,
        wall_time=0.0,
        peak_nodes=0,
        seed=smc_cfg.seed,
    )
    message_sets = _compute_message_sets([p.tree for p in particles], model, jobs)
    map_idx = map_tree_index([p.tree for p in particles], message_sets, prior_cfg)
    fit = FitResult(None, model, prior_cfg, smc_cfg, smc_result, message_sets, map_idx)
    with open(path / "summary.json") as fh:
        summary = json.load(fh)
    return LoadedBundle(path=path, config=config, scaling=scaling, fit=fit, summary=summary)
