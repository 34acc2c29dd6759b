"""``lfoeq`` command-line entry point.

Config files are flat ``key=value`` lines with ``#`` comments; imitation and
expert settings live under the ``imitation.`` and ``expert.`` prefixes and
physical parameters of the system under ``model.`` (e.g. ``model.m=1.5``).
Unset fields start from the per-environment settings in ``lfoeq.protocol``.
Command-line ``key=value`` arguments override the file.  Every command writes
its fully resolved config next to its outputs.

Output layout under the root (``--output``, ``$LFOEQ_OUTPUT`` or ``./runs``)::

    <env>/expert/      policy.bin, dataset.lfoeq, dataset_csv/, curve.csv, summary.txt
    <env>/<mode>/      seed<k>.csv, aggregate.csv
    <env>/ablate/<factor>=<value>/<mode>/seed<k>.csv
    <env>/analysis/    uniqueness.txt, xi.csv, noise_sweep.csv, noise_sweep.txt
    <env>/report.txt, <env>/curves.svg
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, protocol
from .datasets import export_csv, load_dataset, save_dataset
from .envs import TASK_IDS, make_task, run_episodes
from .expert import ExpertConfig, export_dataset, reference_controller, train_expert
from .imitation import MODES, ImitationConfig, LearningCurve
from .neural import load_policy, save_policy
from .plots import curve_band, emit_plots
from .tabular import verify_suite

COMMANDS = ("expert", "imitate", "ablate", "analyze", "tabular-verify", "report")

# top-level keys accepted by each command (section keys are checked separately)
GENERAL = {
    "expert": {"env", "n_traj", "dataset_seed"},
    "imitate": {"env", "modes", "seeds", "dataset", "n_traj"},
    "ablate": {"env", "modes", "seeds", "dataset", "factor", "values"},
    "analyze": {"env", "seeds", "dataset", "probe_candidates", "xi_deltas", "xi_samples", "epsilons"},
    "tabular-verify": {"seed"},
    "report": {"env"},
}
DEFAULTS = {
    "env": "pendulum", "n_traj": "", "dataset_seed": "12345", "modes": "gail,gaifo",
    "seeds": "0,1,2,3,4", "dataset": "", "factor": "input_norm", "values": "true,false",
    "probe_candidates": "1000", "xi_deltas": "0.2,0.1,0.05,0.025", "xi_samples": "10000",
    "epsilons": "0,0.01,0.02", "seed": "0",
}
ALIASES = {"lambda": "lam"}


class ConfigError(ValueError):
    pass


def parse_lines(lines, origin="<args>") -> dict:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{origin}:{n}: expected key=value, got {raw.strip()!r}")
        out[key.strip()] = val.strip()
    return out


def _convert(value: str, like):
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return type(like)(value)


def _section(base, raw: dict, prefix: str, errors: list):
    changes = {}
    names = {f.name for f in dataclasses.fields(base)}
    for key, val in raw.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        name = ALIASES.get(name, name)
        if name not in names or name == "model_params":
            errors.append(f"unknown key {key!r}")
            continue
        try:
            changes[name] = _convert(val, getattr(base, name))
        except ValueError as exc:
            errors.append(f"bad value for {key!r}: {exc}")
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as exc:
        errors.append(f"invalid {prefix[:-1]} settings: {exc}")
        return base


@dataclasses.dataclass
class Resolved:
    command: str
    general: dict
    imitation: ImitationConfig
    expert: ExpertConfig
    raw: dict

    def lines(self) -> str:
        out = [f"# resolved config for {self.command}"]
        out += [f"{k}={v}" for k, v in sorted(self.general.items())]
        out += [f"model.{k}={v!r}" for k, v in self.imitation.model_params]
        for prefix, cfg in (("imitation.", self.imitation), ("expert.", self.expert)):
            for f in dataclasses.fields(cfg):
                if f.name == "model_params":
                    continue
                v = getattr(cfg, f.name)
                if isinstance(v, tuple):
                    v = ",".join(map(str, v))
                out.append(f"{prefix}{f.name}={v}")
        return "\n".join(out) + "\n"


def resolve(command: str, raw: dict) -> Resolved:
    errors = []
    general = {k: DEFAULTS[k] for k in GENERAL[command]}
    if command == "imitate":
        general["n_traj"] = ""   # use every stored trajectory unless asked to subsample
    for key, val in raw.items():
        if key.startswith(("imitation.", "expert.", "model.")):
            continue
        if key not in GENERAL[command]:
            errors.append(f"unknown key {key!r} for command {command!r}")
        else:
            general[key] = val
    env = general.get("env", "pendulum")
    if env not in TASK_IDS:
        errors.append(f"unknown env {env!r}; choose from {TASK_IDS}")
    known = env in TASK_IDS
    if command == "expert" and "n_traj" not in raw and known:
        general["n_traj"] = str(protocol.n_expert_trajectories(env))
    imit = _section(protocol.imitation_config(env) if known else ImitationConfig(), raw, "imitation.", errors)
    exp = _section(protocol.expert_config(env) if known else ExpertConfig(), raw, "expert.", errors)
    model_params = []
    for key, val in raw.items():
        if key.startswith("model."):
            try:
                model_params.append((key[len("model."):], float(val)))
            except ValueError:
                errors.append(f"bad value for {key!r}: not a number")
    model_params = tuple(sorted(model_params))
    if env in TASK_IDS:
        try:
            make_task(env, imit.horizon, **dict(model_params))
        except (TypeError, ValueError) as exc:
            errors.append(f"bad model parameters for {env!r}: {exc}")
        imit = imit.replace(env=env, model_params=model_params)
        exp = exp.replace(env=env, horizon=imit.horizon, model_params=model_params)
    if errors:
        raise ConfigError("\n".join(errors))
    return Resolved(command, general, imit, exp, raw)


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def output_root(arg) -> Path:
    return Path(arg or os.environ.get("LFOEQ_OUTPUT") or "runs")


def _write_config(directory: Path, cfg: Resolved) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(cfg.lines())


def _log(msg):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands

def baseline_return(task, n_episodes=50, seed=0) -> float:
    """Deterministic return of the zero-control policy (the untrained reference point)."""
    rets, _ = run_episodes(task, lambda s: np.zeros((len(s), task.act_dim)), n_episodes, seed)
    return float(rets.mean())


def cmd_expert(cfg: Resolved, root: Path, workers: int) -> int:
    env = cfg.general["env"]
    out = root / env / "expert"
    _write_config(out, cfg)
    task = make_task(env, cfg.expert.horizon, **dict(cfg.expert.model_params))
    res = train_expert(cfg.expert, task, progress=lambda r: _log(f"expert {env} steps={r[0]} return={r[1]:.3f}"))
    save_policy(out / "policy.bin", res.policy)
    n = int(cfg.general["n_traj"])
    ds = export_dataset(task, res.policy, n, int(cfg.general["dataset_seed"]), out / "dataset.lfoeq")
    export_csv(ds, out / "dataset_csv")
    (out / "curve.csv").write_text("env_steps,eval_return\n" + "".join(f"{s},{r!r}\n" for s, r in res.curve))
    summary = {"expert_return": float(ds.returns.mean()), "selection_return": res.eval_return,
               "baseline_return": baseline_return(task), "plateaued": res.plateaued, "n_traj": n}
    try:
        rets, _ = run_episodes(task, reference_controller(task), n, int(cfg.general["dataset_seed"]))
        summary["reference_return"] = float(rets.mean())
    except ValueError:
        pass
    (out / "summary.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
    _log(f"expert {env}: dataset return {summary['expert_return']:.3f} over {n} trajectories -> {out}")
    return 0


def _dataset_path(cfg: Resolved, root: Path) -> Path:
    given = cfg.general.get("dataset")
    return Path(given) if given else root / cfg.general["env"] / "expert" / "dataset.lfoeq"


def _run_modes(cfg: Resolved, root: Path, out: Path, workers: int, imitation: ImitationConfig, n_traj=None) -> dict:
    path = _dataset_path(cfg, root)
    seeds = _ints(cfg.general["seeds"])
    modes = [m for m in cfg.general["modes"].split(",") if m]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}")
    cells, keys = [], []
    for mode in modes:
        view = "lfd" if mode == "gail" else "lfo"
        for seed in seeds:
            ds = load_dataset(path, view, n_traj, seed=seed) if n_traj else load_dataset(path, view)
            cells.append((ds, imitation.replace(mode=mode, seed=seed)))
            keys.append((mode, seed))
    _log(f"training {len(cells)} runs with {workers} worker(s)")
    curves = analysis.run_cells(cells, workers)
    grouped = {}
    for (mode, seed), curve in zip(keys, curves):
        d = out / mode
        d.mkdir(parents=True, exist_ok=True)
        curve.to_csv(d / f"seed{seed}.csv")
        grouped.setdefault(mode, []).append(curve)
        _log(f"{mode} seed {seed}: final return {curve.final_return:.3f}")
    for mode, group in grouped.items():
        steps, mean, std = curve_band(group)
        lines = ["env_steps,eval_return_mean,eval_return_std"]
        lines += [f"{int(s)},{m!r},{v!r}" for s, m, v in zip(steps, mean, std)]
        (out / mode / "aggregate.csv").write_text("\n".join(lines) + "\n")
    return grouped


def cmd_imitate(cfg: Resolved, root: Path, workers: int) -> int:
    out = root / cfg.general["env"]
    _write_config(out / "imitate", cfg)
    n = cfg.general.get("n_traj") or None
    grouped = _run_modes(cfg, root, out, workers, cfg.imitation, int(n) if n else None)
    emit_plots(grouped, out / "curves.svg", title=cfg.general["env"], expert_return=_expert_return(out))
    return 0


def cmd_ablate(cfg: Resolved, root: Path, workers: int) -> int:
    factor = cfg.general["factor"]
    values = [v for v in cfg.general["values"].split(",") if v]
    if factor not in ("input_norm", "spectral_norm", "n_traj"):
        raise ConfigError(f"factor must be input_norm, spectral_norm or n_traj, got {factor!r}")
    base = root / cfg.general["env"] / "ablate"
    _write_config(base, cfg)
    groups = {}
    for value in values:
        out = base / f"{factor}={value}"
        if factor == "n_traj":
            grouped = _run_modes(cfg, root, out, workers, cfg.imitation, int(value))
        else:
            imit = cfg.imitation.replace(**{factor: _convert(value, True)})
            grouped = _run_modes(cfg, root, out, workers, imit)
        for mode, curves in grouped.items():
            groups[f"{mode} {factor}={value}"] = curves
    emit_plots(groups, base / "ablation.svg", title=f"{cfg.general['env']}: {factor}")
    return 0


def cmd_analyze(cfg: Resolved, root: Path, workers: int) -> int:
    env = cfg.general["env"]
    out = root / env / "analysis"
    _write_config(out, cfg)
    task = make_task(env, cfg.imitation.horizon, **dict(cfg.imitation.model_params))
    ds = load_dataset(_dataset_path(cfg, root))
    rep = analysis.uniqueness_report(task.model, ds, int(cfg.general["probe_candidates"]))
    text = "".join(f"{f.name}={getattr(rep, f.name)}\n" for f in dataclasses.fields(rep))
    (out / "uniqueness.txt").write_text(text)
    _log(text.rstrip())

    policy_path = root / env / "expert" / "policy.bin"
    if policy_path.exists():
        policy = load_policy(policy_path)
        s, _, _ = ds.transitions()
        rng = np.random.default_rng(0)
        idx = rng.integers(0, len(s), int(cfg.general["xi_samples"]))
        x = policy.features(task.features(s[idx]))
        lines = ["delta,n_samples,skipped,max_xi_deviation,bound_violations"]
        for delta in _floats(cfg.general["xi_deltas"]):
            r = analysis.xi_bound_check(policy, x, delta, rng=1)
            lines.append(f"{delta!r},{r.n_samples},{r.skipped},{r.max_xi_deviation!r},{r.bound_violations}")
        (out / "xi.csv").write_text("\n".join(lines) + "\n")
        _log("\n".join(lines))

    eps = _floats(cfg.general["epsilons"])
    if eps:
        rows = analysis.noise_sweep(ds, cfg.imitation, eps, _ints(cfg.general["seeds"]), workers)
        analysis.write_sweep(rows, out / "noise_sweep.csv")
        _log(analysis.format_sweep(rows).rstrip())
    return 0


def cmd_tabular_verify(cfg: Resolved, root: Path, workers: int) -> int:
    res = verify_suite(seed=int(cfg.general["seed"]))
    for f in dataclasses.fields(res):
        _log(f"{f.name}={getattr(res, f.name)!r}")
    _log("tabular verification " + ("passed" if res.passed else "FAILED"))
    return 0 if res.passed else 1


def _expert_return(env_dir: Path):
    summary = env_dir / "expert" / "summary.txt"
    if not summary.exists():
        return None
    return float(parse_lines(summary.read_text().splitlines())["expert_return"])


def _fmt(values) -> str:
    values = np.asarray(values, float)
    std = values.std(ddof=1) if len(values) > 1 else 0.0
    return f"{values.mean():.2f}±{std:.2f}"


def cmd_report(cfg: Resolved, root: Path, workers: int) -> int:
    env_dir = root / cfg.general["env"]
    lines = [f"{'method':<8} {'final return (mean±std)':>26}"]
    summary = env_dir / "expert" / "summary.txt"
    info = parse_lines(summary.read_text().splitlines()) if summary.exists() else {}
    if info:
        lines.append(f"{'expert':<8} {float(info['expert_return']):>26.2f}")
    finals, grouped = {}, {}
    for mode in MODES:
        files = sorted((env_dir / mode).glob("seed*.csv"))
        if not files:
            continue
        curves = [LearningCurve.from_csv(p) for p in files]
        grouped[mode] = curves
        finals[mode] = [c.final_return for c in curves]
        lines.append(f"{mode:<8} {_fmt(finals[mode]):>26}")
    if not finals and not info:
        print(f"report: nothing found under {env_dir}", file=sys.stderr)
        return 1
    if len(finals) == 2:
        g, o = finals["gail"], finals["gaifo"]
        lines.append(f"|mean(gail) - mean(gaifo)| = {abs(np.mean(g) - np.mean(o)):.2f}, "
                     f"pooled std = {analysis.pooled_std(g, o):.2f}, "
                     f"equivalent = {'yes' if analysis.equivalent(g, o) else 'no'}")
    if info and finals:
        exp, base = float(info["expert_return"]), float(info["baseline_return"])
        for mode, vals in finals.items():
            score = analysis.normalized_score(vals, exp, base)
            lines.append(f"{mode} normalized score (zero-control baseline {base:.2f}): {_fmt(score)}")
    text = "\n".join(lines) + "\n"
    (env_dir / "report.txt").write_text(text)
    print(text, end="")
    if grouped:
        emit_plots(grouped, env_dir / "curves.svg", title=cfg.general["env"],
                   expert_return=float(info["expert_return"]) if info else None)
    return 0


HANDLERS = {"expert": cmd_expert, "imitate": cmd_imitate, "ablate": cmd_ablate, "analyze": cmd_analyze,
            "tabular-verify": cmd_tabular_verify, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfoeq", description="Imitation from observation vs demonstration experiments")
    p.add_argument("--output", help="output root (default: $LFOEQ_OUTPUT or ./runs)")
    p.add_argument("--workers", type=int, default=1, help="parallel training processes")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("overrides", nargs="*", metavar="key=value")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = {}
        if args.config:
            raw.update(parse_lines(Path(args.config).read_text().splitlines(), args.config))
        raw.update(parse_lines(args.overrides))
        cfg = resolve(args.command, raw)
        return HANDLERS[args.command](cfg, output_root(args.output), max(1, args.workers))
    except ConfigError as exc:
        for line in str(exc).splitlines():
            print(f"lfoeq: error: {line}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"lfoeq: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
