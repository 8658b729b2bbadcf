"""Batch experiment runners behind the command line: entropy evaluation and multigoal training.

Every run directory receives the config snapshot, the seed, a git-describe
string and all output files.  Nothing written depends on wall-clock time, so
reruns from the same config are byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from .agent import AgentConfig, S2acAgent, Schedule, sample_policy_batch, select_action, train
from .core import RngStream
from .entropy import EntropyEstimate, estimate_entropy, invertibility_margin, run_svgd
from .multigoal import (
    LEFT_GOALS,
    EnvConfig,
    MultigoalEnv,
    goal_histogram,
    heatmap_grid,
    rollout,
    trajectory_smoothness,
    write_heatmap,
    write_trajectories,
)
from .plots import line_svg, scatter_svg
from .samplers import ParticleSet, SamplerConfig
from .targets import GaussianTarget, GmmTarget, UnsupportedTargetError

NOT_INVERTIBLE = "n/a (non-invertible)"


def workers() -> int:
    """Sweep parallelism, capped by ``S2AC_THREADS``."""
    cap = os.environ.get("S2AC_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def _map(fn, jobs):
    n = min(workers(), len(jobs))
    if n <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs))


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _write_run_meta(run_dir: Path, cfg: config_mod.ExperimentConfig) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(cfg.dumps())
    meta = {"seed": cfg.seed, "git": git_describe(), "kind": cfg.kind}
    (run_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _fmt(x) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------- entropy evaluation


def build_target(tcfg: dict, kind: str | None = None, parameter: str | None = None, value=None):
    kind = kind or tcfg["kind"]
    if kind == "gaussian":
        return GaussianTarget(tcfg["mean"], tcfg["covariance"])
    if kind == "isotropic":
        std = value if parameter == "target_std" else tcfg["std"]
        return GaussianTarget.isotropic(np.zeros(tcfg["dim"]), float(std) ** 2)
    modes = int(value) if parameter == "modes" else tcfg["modes"]
    return GmmTarget.ring(modes, tcfg["radius"], tcfg["variance"])


def _cells(cfg: config_mod.ExperimentConfig):
    """``(index, sweep_name, parameter, value, sampler_settings, target_kind)`` for every grid cell."""
    base = cfg.section("sampler")
    if not cfg.sweeps:
        return [(0, "base", None, None, dict(base), cfg.section("target")["kind"])]
    cells, index = [], 0
    for sweep in cfg.sweeps:
        settings = dict(base)
        settings.update({k: v for k, v in sweep.items() if k in config_mod.SECTIONS["sampler"]})
        for value in sweep["values"]:
            cell = dict(settings)
            if sweep["parameter"] in ("bandwidth", "epsilon"):
                cell[sweep["parameter"]] = float(value)
            elif sweep["parameter"] in ("steps", "particles"):
                cell[sweep["parameter"]] = int(value)
            kind = sweep.get("target", cfg.section("target")["kind"])
            cells.append((index, sweep["name"], sweep["parameter"], value, cell, kind))
            index += 1
    return cells


def _entropy_cell(job):
    seed, (index, name, parameter, value, s, tkind), tcfg = job
    target = build_target(tcfg, tkind, parameter, value)
    scfg = SamplerConfig(s["epsilon"], s["steps"], s["particles"], s["bandwidth"], s["hmc_mass"])
    try:
        truth = float(target.entropy())
    except UnsupportedTargetError:
        truth = None
    cell_rng = RngStream(seed + index)
    rows, particles = [], {}
    for sampler in s["samplers"]:
        values, margins = [], []
        for r in range(s["repeats"]):
            rep = cell_rng.child(r)
            ps = ParticleSet.from_gaussian(rep.child(0), s["particles"], np.zeros(target.dim), s["init_variance"])
            if sampler == "svgd":
                final, traj = run_svgd(ps, target, scfg)
                est = EntropyEstimate.from_logq(final.log_q, "closed-form-svgd")
                out = final.particles
                if s["margin"]:
                    margins.append(max(invertibility_margin(p, target, scfg) for p in traj[:-1]) if len(traj) > 1 else 0.0)
            else:
                out, est = estimate_entropy(sampler, ps, target, scfg, rep.child(1))
            if r == 0:
                particles[sampler] = out
            values.append(None if est is None else est.value)
        row = {
            "sweep": name,
            "parameter": parameter,
            "value": value,
            "sampler": sampler,
            "repeats": s["repeats"],
            "ground_truth": truth,
        }
        if values[0] is None:
            row.update(estimate=NOT_INVERTIBLE, estimate_se=None, delta=None)
        else:
            v = np.asarray(values)
            row["estimate"] = float(v.mean())
            row["estimate_se"] = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else None
            row["delta"] = None if truth is None else float(v.mean() - truth)
        if sampler == "svgd" and margins:
            row["margin"] = float(max(margins))
            row["invertibility_violated"] = bool(max(margins) > 1.0)
        rows.append(row)
    return index, rows, particles


def run_entropy_eval(cfg: config_mod.ExperimentConfig, out_dir=None) -> dict:
    """Evaluate every sampler on every grid cell; returns the summary written to ``summary.json``."""
    out = Path(out_dir or cfg.out)
    _write_run_meta(out, cfg)
    cells = _cells(cfg)
    results = _map(_entropy_cell, [(cfg.seed, c, cfg.section("target")) for c in cells])
    rows = []
    cell_dir = out / "cells"
    cell_dir.mkdir(exist_ok=True)
    for (index, name, parameter, value, _, _), (_, cell_rows, particles) in zip(cells, results):
        rows.extend(cell_rows)
        tag = name if value is None else f"{name}_{value}"
        for sampler, p in particles.items():
            with open(cell_dir / f"{tag}_{sampler}_particles.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"x{k}" for k in range(p.shape[1])])
                w.writerows([[_fmt(v) for v in row] for row in p])
        if cfg.section("sampler").get("plots") and particles and next(iter(particles.values())).shape[1] == 2:
            scatter_svg(cell_dir / f"{tag}_particles.svg", particles, title=f"particles {tag}", xlabel="a1", ylabel="a2")
    summary = {"kind": cfg.kind, "seed": cfg.seed, "rows": rows}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    fields = ["sweep", "parameter", "value", "sampler", "repeats", "estimate", "estimate_se", "ground_truth", "delta", "margin", "invertibility_violated"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fields})
    if cfg.section("sampler").get("plots"):
        for sweep in cfg.sweeps:
            sel = [r for r in rows if r["sweep"] == sweep["name"]]
            series = {}
            for sampler in cfg.section("sampler")["samplers"]:
                ys = [r["estimate"] for r in sel if r["sampler"] == sampler]
                series[sampler] = [y if isinstance(y, float) else None for y in ys]
            truth = [r["ground_truth"] for r in sel if r["sampler"] == cfg.section("sampler")["samplers"][0]]
            if any(t is not None for t in truth):
                series["ground truth"] = truth
            line_svg(out / f"{sweep['name']}_entropy.svg", sweep["values"], series, title=f"entropy vs {sweep['parameter']}", xlabel=sweep["parameter"], ylabel="entropy (nats)")
    return summary


# --------------------------------------------------------------------------- multigoal


def env_config(cfg: config_mod.ExperimentConfig, obstacle=None) -> EnvConfig:
    e = dict(cfg.section("env"))
    e["goals"] = tuple(tuple(g) for g in e["goals"])
    if "obstacle" in e:
        e["obstacle"] = tuple(tuple(p) for p in e["obstacle"])
    if obstacle is not None:
        e["obstacle"] = tuple(tuple(p) for p in obstacle)
    return EnvConfig(**e)


def agent_config(cfg: config_mod.ExperimentConfig, alpha: float | None = None) -> AgentConfig:
    a = dict(cfg.section("agent"))
    a["hidden"] = tuple(a["hidden"])
    if alpha is not None:
        a["alpha"] = float(alpha)
    return AgentConfig(**a)


def evaluate_agent(agent, env_cfg: EnvConfig, rng, episodes: int):
    return [rollout(lambda p: select_action(agent, p, rng, greedy=True), env_cfg, rng) for _ in range(episodes)]


def goal_summary(rollouts, n_goals: int) -> dict:
    hist = goal_histogram(rollouts, n_goals)
    n = len(rollouts)
    left = sum(hist["goals"][k] for k in LEFT_GOALS if k < n_goals)
    hist.update(
        episodes=n,
        distinct_goals=sum(1 for c in hist["goals"] if c > 0),
        left_fraction=left / n if n else 0.0,
        reached_fraction=(n - hist["none"]) / n if n else 0.0,
    )
    return hist


def dump_evaluation(agent, env_cfg, rng, episodes, heatmap_size, directory: Path) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    ros = evaluate_agent(agent, env_cfg, rng, episodes)
    write_trajectories(directory / "trajectories.csv", ros)
    summary = goal_summary(ros, len(env_cfg.goals))
    grid = heatmap_grid(env_cfg, heatmap_size)
    ent = sample_policy_batch(agent, grid, rng).entropy
    write_heatmap(directory / "heatmap.csv", grid, ent)
    m1, m2 = trajectory_smoothness(agent.q, ros)
    summary["smoothness"] = {"M1": m1, "M2": m2}
    (directory / "goals.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    traj = {f"episode {k}": np.asarray(r.positions) for k, r in enumerate(ros[:6])}
    scatter_svg(directory / "trajectories.svg", traj, title="evaluation trajectories", xlabel="x", ylabel="y")
    return summary


def _alpha_tag(alpha: float) -> str:
    return f"alpha_{alpha:g}"


def _train_one(job):
    cfg_text, run_dir = job
    cfg = config_mod.loads(cfg_text)
    run_dir = Path(run_dir)
    tr = cfg.section("train")
    acfg = agent_config(cfg)
    env_cfg = env_config(cfg)
    root = RngStream(cfg.seed)
    agent = S2acAgent(2, 2, acfg, root.child(0))
    env = MultigoalEnv(env_cfg)
    schedule = Schedule(tr["total_steps"], tr["update_after"], tr["update_every"], tr["gradient_steps"], tr["amortized_every"])
    _write_run_meta(run_dir, cfg)

    def on_abort(ag, reason):
        path = run_dir / "abort_checkpoint"
        ag.save(path)
        return str(path)

    evals = []
    next_eval = tr["eval_every"] or None
    with open(run_dir / "metrics.jsonl", "w") as fh:
        for rec in train(agent, env, schedule, root.child(1), on_checkpoint=on_abort):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if next_eval and rec["step"] >= next_eval:
                ev = dump_evaluation(agent, env_cfg, root.child(100 + len(evals)), tr["eval_episodes"], tr["heatmap_size"], run_dir / "eval" / f"step_{next_eval}")
                evals.append({"step": next_eval, **ev})
                next_eval += tr["eval_every"]
    agent.save(run_dir / "checkpoint")
    final = dump_evaluation(agent, env_cfg, root.child(99), tr["eval_episodes"], tr["heatmap_size"], run_dir / "eval" / "final")
    return {"alpha": acfg.alpha, "seed": cfg.seed, "run_dir": str(run_dir), "final": final, "periodic": evals}


def per_alpha_configs(cfg: config_mod.ExperimentConfig) -> list:
    """One single-alpha config per sweep cell, all sharing the base seed.

    Each is a complete snapshot: rerunning it alone reproduces that cell.
    """
    out = []
    for alpha in cfg.section("train")["alphas"]:
        sections = {**cfg.sections}
        sections["agent"] = {**cfg.section("agent"), "alpha": float(alpha)}
        sections["train"] = {**cfg.section("train"), "alphas": [float(alpha)]}
        out.append((alpha, replace(cfg, sections=sections)))
    return out


def run_train_multigoal(cfg: config_mod.ExperimentConfig, out_dir=None) -> list:
    """Train one agent per configured alpha (in parallel); one run directory per alpha."""
    out = Path(out_dir or cfg.out)
    _write_run_meta(out, cfg)
    jobs = [(c.dumps(), str(out / _alpha_tag(a))) for a, c in per_alpha_configs(cfg)]
    results = _map(_train_one, jobs)
    (out / "summary.json").write_text(json.dumps(results, sort_keys=True, indent=2) + "\n")
    return results


def _run_dirs(checkpoint) -> list:
    root = Path(checkpoint)
    if (root / "checkpoint").is_dir():
        return [root]
    runs = sorted(p for p in root.glob("alpha_*") if (p / "checkpoint").is_dir())
    if not runs:
        raise FileNotFoundError(f"no trained checkpoint under {root}")
    return runs


def load_agent(run_dir: Path):
    cfg = config_mod.load(run_dir / "config.toml")
    agent = S2acAgent(2, 2, agent_config(cfg), RngStream(0))
    agent.load(run_dir / "checkpoint")
    return cfg, agent


def run_eval_multigoal(cfg: config_mod.ExperimentConfig, out_dir=None) -> list:
    out = Path(out_dir or cfg.out)
    _write_run_meta(out, cfg)
    tr = cfg.section("train")
    results = []
    for k, run in enumerate(_run_dirs(tr["checkpoint"])):
        run_cfg, agent = load_agent(run)
        summary = dump_evaluation(agent, env_config(cfg), RngStream(cfg.seed + k), tr["eval_episodes"], tr["heatmap_size"], out / run.name)
        results.append({"alpha": agent.cfg.alpha, "run": run.name, **summary})
    (out / "summary.json").write_text(json.dumps(results, sort_keys=True, indent=2) + "\n")
    return results


def obstacle_outcomes(rollouts) -> dict:
    """Fractions of episodes that reached a goal after hitting the obstacle, hit and never reached one, or never hit it."""
    n = len(rollouts)
    after = sum(1 for r in rollouts if r.hit_obstacle and r.goal is not None)
    stuck = sum(1 for r in rollouts if r.hit_obstacle and r.goal is None)
    never = n - after - stuck
    reached = sum(1 for r in rollouts if r.goal is not None)
    return {
        "episodes": n,
        "reached_after_hit": after / n,
        "hit_and_stuck": stuck / n,
        "never_hit": never / n,
        "reached": reached / n,
    }


def run_robustness(cfg: config_mod.ExperimentConfig, out_dir=None, obstacle="default") -> list:
    """Evaluate trained checkpoints with the obstacle in place; one table row per alpha.

    ``obstacle=None`` evaluates without any obstacle (a no-op baseline).
    """
    out = Path(out_dir or cfg.out)
    tr = cfg.section("train")
    runs = _run_dirs(tr["checkpoint"])
    _write_run_meta(out, cfg)
    segment = tr["obstacle"] if obstacle == "default" else obstacle
    rows = []
    for k, run in enumerate(runs):
        _, agent = load_agent(run)
        env_cfg = env_config(cfg)
        env_cfg = replace(env_cfg, obstacle=None) if segment is None else env_config(cfg, segment)
        ros = evaluate_agent(agent, env_cfg, RngStream(cfg.seed + k), tr["eval_episodes"])
        write_trajectories(out / f"{run.name}_trajectories.csv", ros)
        rows.append({"alpha": agent.cfg.alpha, "run": run.name, **obstacle_outcomes(ros)})
    (out / "robustness.json").write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n")
    fields = ["alpha", "run", "episodes", "reached_after_hit", "hit_and_stuck", "never_hit", "reached"]
    with open(out / "robustness.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return rows
