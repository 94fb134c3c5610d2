"""Multi-seed training runs and their CSV reports.

Output layout of a run directory::

    config.txt              resolved configuration
    episodes.csv            one row per training episode (all seeds)
    eval.csv                periodic greedy evaluations
    summary.csv             converged-window statistics per seed and pooled
    checkpoints/seed_<s>.bin  best greedy policy per seed

All CSV files are comma separated with a header row and ``.`` decimals.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .acnomdp import ACNOMDP, measurement_ratio
from .agents import EpisodeLog, load_agent, make_agent, run_episode, save_agent
from .config import RunConfig
from .environments import make_env
from .errors import ConfigError, UndefinedRatioError

__all__ = [
    "EpisodeLog",
    "build_env",
    "train_seed",
    "run_experiment",
    "summarize",
    "export_traces",
    "write_traces",
    "emit_curves",
    "read_csv",
    "worker_count",
]

log = logging.getLogger(__name__)

EPISODE_FIELDS = EpisodeLog.CSV_FIELDS + ("success",)
EVAL_FIELDS = (
    "seed", "episode", "decisions_trained", "return_mean", "return_std",
    "length_mean", "success_rate", "measured_steps", "unmeasured_steps", "ratio",
)
SUMMARY_FIELDS = (
    "group", "seeds", "episodes", "costed_return_mean", "costed_return_std",
    "length_mean", "length_std", "decisions_mean", "success_rate",
    "measured_steps", "unmeasured_steps", "ratio", "ratio_std", "ratio_label",
)
CURVE_FIELDS = (
    "bucket", "episode_start", "episode_end", "seeds",
    "costed_return_mean", "costed_return_std", "length_mean", "length_std",
)
TRACE_FIELDS = ("episode", "base_step", "decision", "a_c", "choice", "measured")


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def worker_count(n_jobs):
    env = os.environ.get("FRUGAL_RL_THREADS")
    limit = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def is_success(env_name, log_row):
    # cartpole: surviving to the horizon; goal-reaching tasks: terminating
    if env_name == "cartpole":
        return log_row.end_cause == "truncated"
    return log_row.end_cause == "terminal"


def build_env(cfg: RunConfig) -> ACNOMDP:
    base = make_env(cfg.env_name, **dict(cfg.env_options))
    return ACNOMDP(base, cfg.c, cfg.gamma, cfg.K, cfg.memory_window, cfg.stale_mode)


def _evaluate(agent, env, seeds, cfg):
    logs = [run_episode(agent, env, s, learn=False, greedy=True) for s in seeds]
    returns = np.array([l.costed_return for l in logs])
    measured = sum(l.measured_steps for l in logs)
    unmeasured = sum(l.unmeasured_steps for l in logs)
    return {
        "return_mean": float(returns.mean()),
        "return_std": float(returns.std()),
        "length_mean": float(np.mean([l.base_steps for l in logs])),
        "success_rate": float(np.mean([is_success(cfg.env_name, l) for l in logs])),
        "measured_steps": measured,
        "unmeasured_steps": unmeasured,
        "ratio": measurement_ratio((measured, unmeasured)),
    }


def train_seed(cfg: RunConfig, seed: int, out_dir=None):
    """One independent training run; returns ``(episode_rows, eval_rows)``.

    When ``out_dir`` is given, the best greedy policy is checkpointed to
    ``out_dir/checkpoints/seed_<seed>.bin``.
    """
    env = build_env(cfg)
    eval_env = build_env(cfg)
    desc = env.descriptor()
    agent = make_agent(cfg.agent_name, desc.obs_dim, desc.n_actions, cfg.agent, seed)
    episode_rng = np.random.default_rng([seed, 1])
    eval_seeds = [int(s) for s in np.random.default_rng([seed, 2]).integers(2**31, size=cfg.eval_episodes)]
    ckpt = None
    if out_dir is not None:
        ckpt = Path(out_dir) / "checkpoints" / f"seed_{seed}.bin"
        ckpt.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "env_options": cfg.env_options, "c": cfg.c, "gamma": cfg.gamma, "K": cfg.K,
        "memory_window": cfg.memory_window, "stale_mode": cfg.stale_mode, "seed": seed,
    }

    episode_rows, eval_rows = [], []
    best = -math.inf
    for ep in range(cfg.episodes):
        ep_seed = int(episode_rng.integers(2**31))
        lg = run_episode(agent, env, ep_seed, learn=True, episode=ep)
        lg.seed = seed
        episode_rows.append(lg.row() + [int(is_success(cfg.env_name, lg))])
        last = ep == cfg.episodes - 1
        if cfg.eval_period and cfg.eval_episodes and ((ep + 1) % cfg.eval_period == 0 or last):
            ev = _evaluate(agent, eval_env, eval_seeds, cfg)
            eval_rows.append([seed, ep, agent.decisions] + [ev[k] for k in EVAL_FIELDS[3:]])
            if ev["return_mean"] > best:
                best = ev["return_mean"]
                if ckpt is not None:
                    save_agent(ckpt, agent, cfg.env_name, extra=dict(meta, eval_return=best, episode=ep))
        elif last and ckpt is not None and not eval_rows:
            save_agent(ckpt, agent, cfg.env_name, extra=dict(meta, episode=ep))
    log.info("seed %s finished: %d decisions, best eval %.3f", seed, agent.decisions, best)
    return episode_rows, eval_rows


def _train_job(args):
    return train_seed(*args)


def run_experiment(cfg: RunConfig, out=None, workers=None) -> Path:
    """Train every seed, merge per-seed logs in seed order and write the reports."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump())
    jobs = [(cfg, s, out) for s in cfg.seeds]
    n = workers or worker_count(len(jobs))
    if n == 1:
        results = [_train_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_train_job, jobs))
    _write_csv(out / "episodes.csv", EPISODE_FIELDS, [r for ep, _ in results for r in ep])
    _write_csv(out / "eval.csv", EVAL_FIELDS, [r for _, ev in results for r in ev])
    summarize(out, converged_frac=cfg.converged_frac)
    return out


def _window(rows, frac):
    n = max(1, math.ceil(frac * len(rows)))
    return rows[-n:]


def summarize(run_dir, converged_frac=0.1):
    """Write ``summary.csv`` over each seed's final ``converged_frac`` of episodes.

    Per-seed rows report that seed's window means.  The pooled row reports
    the mean and standard deviation of the per-seed means across seeds (so a
    single seed has zero std) and the ratio of summed unmeasured to summed
    measured steps over all windows.
    """
    run_dir = Path(run_dir)
    rows = read_csv(run_dir / "episodes.csv")
    if not rows:
        raise ValueError(f"{run_dir}/episodes.csv holds no episodes")
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(r)

    def stats(window):
        ret = np.array([float(r["costed_return"]) for r in window])
        length = np.array([float(r["base_steps"]) for r in window])
        return {
            "ret": ret.mean(),
            "len": length.mean(),
            "dec": np.mean([float(r["decisions"]) for r in window]),
            "succ": np.mean([float(r["success"]) for r in window]),
            "m": sum(int(r["measured_steps"]) for r in window),
            "u": sum(int(r["unmeasured_steps"]) for r in window),
            "n": len(window),
        }

    def ratio(m, u):
        try:
            return measurement_ratio((m, u))
        except UndefinedRatioError:
            return float("nan")

    out_rows = []
    per_seed = []
    for seed, seed_rows in by_seed.items():
        s = stats(_window(seed_rows, converged_frac))
        per_seed.append(s)
        x = ratio(s["m"], s["u"])
        out_rows.append([seed, 1, s["n"], s["ret"], 0.0, s["len"], 0.0, s["dec"], s["succ"],
                         s["m"], s["u"], x, 0.0, f"1:{x:.2f}"])
    rets = np.array([s["ret"] for s in per_seed])
    lens = np.array([s["len"] for s in per_seed])
    ratios = np.array([ratio(s["m"], s["u"]) for s in per_seed])
    m = sum(s["m"] for s in per_seed)
    u = sum(s["u"] for s in per_seed)
    x = ratio(m, u)
    out_rows.append([
        "pooled", len(per_seed), sum(s["n"] for s in per_seed),
        rets.mean(), rets.std(), lens.mean(), lens.std(),
        np.mean([s["dec"] for s in per_seed]), np.mean([s["succ"] for s in per_seed]),
        m, u, x, ratios.std(), f"1:{x:.2f}",
    ])
    out_rows = [[float(v) if isinstance(v, np.floating) else v for v in r] for r in out_rows]
    path = run_dir / "summary.csv"
    _write_csv(path, SUMMARY_FIELDS, out_rows)
    return path


def emit_curves(run_dir, buckets=100, plot=True):
    """Bucketed across-seed mean/std of costed return and episode length."""
    run_dir = Path(run_dir)
    rows = read_csv(run_dir / "episodes.csv")
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(r)
    if not by_seed:
        raise ValueError("no episodes to bucket")
    n = min(len(v) for v in by_seed.values())
    groups = np.array_split(np.arange(n), min(buckets, n))
    out_rows = []
    for b, idx in enumerate(groups):
        ret = np.array([[float(s[i]["costed_return"]) for i in idx] for s in by_seed.values()]).mean(axis=1)
        length = np.array([[float(s[i]["base_steps"]) for i in idx] for s in by_seed.values()]).mean(axis=1)
        out_rows.append([b, int(idx[0]), int(idx[-1]), len(by_seed),
                         float(ret.mean()), float(ret.std()), float(length.mean()), float(length.std())])
    path = run_dir / "curves.csv"
    _write_csv(path, CURVE_FIELDS, out_rows)
    if plot:
        from .plots import plot_curves

        plot_curves([dict(zip(CURVE_FIELDS, r)) for r in out_rows], run_dir / "curves.png")
    return path


def write_traces(agent, env, seeds, out_dir, plot=True):
    """Greedy rollouts of ``agent``; one ``trace_<i>.csv`` per episode."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths, traces = [], []
    for i, s in enumerate(seeds):
        lg = run_episode(agent, env, s, learn=False, greedy=True, episode=i)
        traces.append(lg.trace)
        rows = []
        step = 0
        for d in lg.trace.decisions:
            for m in d.measured:
                rows.append([i, step, d.index, d.a_c, d.choice, m])
                step += 1
        path = out_dir / f"trace_{i}.csv"
        _write_csv(path, TRACE_FIELDS, rows)
        paths.append(path)
    if plot and traces:
        from .plots import plot_traces

        plot_traces(traces, agent.style, out_dir / "traces.png")
    return paths


def export_traces(checkpoint, env_name, episodes, out_dir, seed=0, plot=True):
    """Load a checkpoint and export measurement traces of its greedy policy."""
    agent, header = load_agent(checkpoint)
    if header.get("env") and header["env"] != env_name:
        raise ConfigError("env", f"checkpoint was trained on {header['env']!r}, not {env_name!r}")
    extra = header.get("extra", {})
    base = make_env(env_name, **dict(extra.get("env_options", {})))
    d = base.descriptor()
    if (d.obs_dim, d.n_actions) != (header["obs_dim"], header["n_actions"]):
        raise ConfigError("env", "environment shape does not match the checkpoint")
    cfg = agent.cfg
    env = ACNOMDP(
        base,
        extra.get("c", 0.0),
        extra.get("gamma", cfg.gamma),
        extra.get("K", cfg.K),
        extra.get("memory_window", cfg.memory_window),
        extra.get("stale_mode", cfg.stale_mode),
    )
    seeds = [int(s) for s in np.random.default_rng([seed, 3]).integers(2**31, size=episodes)]
    return write_traces(agent, env, seeds, out_dir, plot=plot)
