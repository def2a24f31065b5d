"""Run orchestration, CSV/plot/manifest output and the ``gne-sim`` command line.

CSV files are the ground truth of a run; floats are written with ``repr``
(shortest round-trip form) so identical runs produce identical bytes.  The
manifest embeds the full scenario, solver and trigger configuration, seed
and version, which is everything :func:`replay` needs.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dynamics import CONTINUOUS, EVENT, NumericalBlowup, SolverConfig, Trajectory, simulate
from .game import estimate_constants
from .graph import build_laplacian
from .metrics import BoundReport, MetricSeries, ReferencePoint, bound_check, gne_oracle, metric_series
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario, serialize
from .trigger import TriggerConfig, ZenoReport, zeno_report

__all__ = [
    "RunArtifacts",
    "CompareReport",
    "run",
    "replay",
    "compare_modes",
    "reference_point",
    "write_trajectory_csv",
    "write_metrics_csv",
    "write_events_csv",
    "main",
]

ORACLE_GRID = 201


@dataclass
class RunArtifacts:
    out_dir: Path | None
    trajectory_csv: Path | None
    metrics_csv: Path | None
    events_csv: Path | None
    plots: list[Path]
    manifest: Path | None
    trajectory: Trajectory
    series: MetricSeries
    reference: ReferencePoint
    bounds: BoundReport
    zeno: ZenoReport | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def event_counts(self) -> list[int] | None:
        return None if self.zeno is None else self.zeno.event_counts


def reference_point(game, horizon: float, seed: int = 0) -> ReferencePoint:
    """Oracle reference for ``[0, horizon]``; non-convergence is recorded, not raised."""
    grid = np.linspace(0.0, horizon, ORACLE_GRID) if horizon > 0 else np.zeros(1)
    return gne_oracle(game, grid, attempts=4, seed=seed, strict=False)


# --- CSV -------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    n = traj.n_players
    d = traj.upsilon.shape[-1]
    q = traj.mu.shape[-1]
    header = ["t"]
    header += [f"x_{i + 1}_{k + 1}" for i in range(n) for k in range(d)]
    header += [f"mu_{i + 1}_{j + 1}" for i in range(n) for j in range(q)]
    x = traj.x.reshape(len(traj.times), -1)
    mu = traj.mu.reshape(len(traj.times), -1)
    rows = (
        [_fmt(t)] + [_fmt(v) for v in xr] + [_fmt(v) for v in mr]
        for t, xr, mr in zip(traj.times, x, mu)
    )
    _write_rows(path, header, rows)


def write_metrics_csv(path: Path, series: MetricSeries, q: int) -> None:
    header = ["t", "R", "F", "F_over_sqrt_t"] + [f"F_{j + 1}" for j in range(q)]
    rows = (
        [_fmt(series.times[k]), _fmt(series.regret[k]), _fmt(series.fit[k]), _fmt(series.fit_over_sqrt_t[k])]
        + [_fmt(v) for v in series.fit_components[k]]
        for k in range(len(series))
    )
    _write_rows(path, header, rows)


def write_events_csv(path: Path, event_log: list[tuple[int, float]]) -> None:
    rows = ([str(i + 1), _fmt(t)] for i, t in sorted(event_log, key=lambda e: (e[0], e[1])))
    _write_rows(path, ["player", "time"], rows)


# --- plots -----------------------------------------------------------------


def _plot(out_dir: Path, series: MetricSeries, traj: Trajectory) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "online-gne"
    paths = []
    meta = {"Date": None}
    if len(series):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(series.times, series.regret)
        ax.set_xlabel("t")
        ax.set_ylabel("R(t)")
        ax.set_title("Regret")
        fig.tight_layout()
        p = out_dir / "regret.svg"
        fig.savefig(p, metadata=meta)
        plt.close(fig)
        paths.append(p)

        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(series.times[1:], series.fit_over_sqrt_t[1:])
        ax.set_xlabel("t")
        ax.set_ylabel("F(t) / sqrt(t)")
        ax.set_title("Constraint fit")
        fig.tight_layout()
        p = out_dir / "fit.svg"
        fig.savefig(p, metadata=meta)
        plt.close(fig)
        paths.append(p)

    if traj.config.mode == EVENT:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        n = traj.n_players
        per_player = [[t for i, t in traj.event_log if i == p] for p in range(n)]
        ax.eventplot(per_player, lineoffsets=np.arange(1, n + 1), linelengths=0.6)
        ax.set_yticks(np.arange(1, n + 1))
        ax.set_xlabel("t")
        ax.set_ylabel("player")
        ax.set_title("Broadcast events")
        fig.tight_layout()
        p = out_dir / "events.svg"
        fig.savefig(p, metadata=meta)
        plt.close(fig)
        paths.append(p)
    return paths


# --- manifest --------------------------------------------------------------


def _config_dict(config: SolverConfig) -> dict:
    d = asdict(config)
    if math.isinf(d["gain_cap"]):
        d["gain_cap"] = "inf"
    return d


def _manifest(scenario: Scenario, config: SolverConfig, trig: TriggerConfig | None, ref: ReferencePoint) -> dict:
    return {
        "artifact": {"package": "online_gne", "version": __version__},
        "scenario_sha256": scenario.digest,
        "scenario": scenario.to_dict(),
        "config": _config_dict(config),
        "trigger": None if trig is None else {"beta0": trig.beta0, "gamma0": trig.gamma0},
        "seed": config.seed,
        "reference": {
            "provenance": ref.provenance,
            "residual": float(ref.residual),
            "converged": bool(ref.converged),
            "x_star": ref.x_star.tolist(),
        },
        "initial_policy": {
            "x": "uniform draw from numpy default_rng(seed), range intersected with each action box",
            "upsilon": "box centers" if scenario.initial_upsilon is None else "explicit",
            "mu": "zero" if scenario.initial_mu is None else "explicit",
        },
    }


# --- orchestration ---------------------------------------------------------


def _resolve(scenario: Scenario, overrides: dict) -> tuple[SolverConfig, TriggerConfig | None]:
    overrides = dict(overrides or {})
    beta0 = overrides.pop("beta0", None)
    gamma0 = overrides.pop("gamma0", None)
    config = scenario.solver_config(**overrides)
    trig = scenario.trigger_config(beta0=beta0, gamma0=gamma0) if config.mode == EVENT else None
    return config, trig


def run(
    scenario: Scenario | str,
    overrides: dict | None = None,
    out_dir: str | Path | None = None,
    *,
    plots: bool = True,
    reference: ReferencePoint | None = None,
) -> RunArtifacts:
    """Simulate, evaluate metrics and bounds, and write the artifacts.

    ``overrides`` may hold any :class:`SolverConfig` field plus ``beta0`` and
    ``gamma0``; ``None`` values are ignored.  With ``out_dir=None`` nothing is
    written to disk.

    Raises:
        NumericalBlowup: propagated from the integrator.
    """
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    config, trig = _resolve(scenario, overrides)
    game = scenario.game()
    lap = build_laplacian(scenario.topology())
    init = scenario.initial_state(config.seed)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        traj = simulate(game, lap, config, init, trig)
    messages = [str(w.message) for w in caught]

    ref = reference if reference is not None else reference_point(game, config.horizon)
    if not ref.converged:
        messages.append(f"reference oracle did not converge (residual {ref.residual:.3g})")
    series = metric_series(traj, game, ref)
    grid = np.linspace(0.0, config.horizon, 11)
    estimates = estimate_constants(game, grid)
    bounds = bound_check(traj, game, lap, ref, estimates, trig, series)
    zeno = None
    if trig is not None:
        zeno = zeno_report(
            traj.event_log,
            config.dt,
            trig,
            config.horizon,
            n_players=game.n_players,
            times=traj.times,
            beta=traj.beta,
            gamma=traj.gamma,
        )

    art = RunArtifacts(None, None, None, None, [], None, traj, series, ref, bounds, zeno, messages)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        art.out_dir = out
        art.trajectory_csv = out / "trajectory.csv"
        write_trajectory_csv(art.trajectory_csv, traj)
        art.metrics_csv = out / "metrics.csv"
        write_metrics_csv(art.metrics_csv, series, game.constraint_dim)
        if trig is not None:
            art.events_csv = out / "events.csv"
            write_events_csv(art.events_csv, traj.event_log)
        if plots:
            art.plots = _plot(out, series, traj)
        art.manifest = out / "manifest.yaml"
        art.manifest.write_text(
            yaml.safe_dump(_manifest(scenario, config, trig, ref), sort_keys=False, default_flow_style=None, width=100)
        )
    return art


def replay(manifest: str | Path, out_dir: str | Path | None = None, *, plots: bool = True) -> RunArtifacts:
    """Re-run exactly what a manifest describes."""
    doc = yaml.safe_load(Path(manifest).read_text())
    scenario = parse_scenario(yaml.safe_dump(doc["scenario"], sort_keys=False), source=str(manifest))
    if scenario.digest != doc["scenario_sha256"]:
        raise ScenarioError("embedded scenario does not match the recorded hash")
    overrides = dict(doc["config"])
    overrides["gain_cap"] = float(overrides["gain_cap"])
    if doc.get("trigger"):
        overrides.update(doc["trigger"])
    return run(scenario, overrides, out_dir, plots=plots)


@dataclass
class CompareReport:
    steps: int
    event_counts: list[int]  # includes the initial broadcast at t = 0
    final_regret: dict[str, float]
    final_fit: dict[str, float]

    @property
    def events_after_init(self) -> list[int]:
        return [c - 1 for c in self.event_counts]

    @property
    def saving_ratio(self) -> float:
        """Fraction of per-step broadcasts avoided relative to continuous communication."""
        n = len(self.event_counts)
        if self.steps == 0:
            return 0.0
        return 1.0 - sum(self.event_counts) / (n * self.steps)


def compare_modes(scenario: Scenario | str, overrides: dict | None = None) -> CompareReport:
    """Run both modes with the same seed and the same reference point."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    overrides = dict(overrides or {})
    overrides.pop("mode", None)
    cont = run(scenario, {**overrides, "mode": CONTINUOUS}, plots=False)
    ev = run(scenario, {**overrides, "mode": EVENT}, plots=False, reference=cont.reference)

    def last(a):
        return float(a[-1]) if len(a) else 0.0

    return CompareReport(
        steps=cont.trajectory.config.n_steps,
        event_counts=ev.zeno.event_counts,
        final_regret={CONTINUOUS: last(cont.series.regret), EVENT: last(ev.series.regret)},
        final_fit={CONTINUOUS: last(cont.series.fit), EVENT: last(ev.series.fit)},
    )


# --- command line ----------------------------------------------------------


def _summary(art: RunArtifacts) -> str:
    s, b = art.series, art.bounds
    cfg = art.trajectory.config
    lines = [
        f"mode             {cfg.mode}",
        f"steps            {cfg.n_steps} (dt={cfg.dt:g}, T={cfg.horizon:g})",
        f"reference        residual {art.reference.residual:.3g}"
        + ("" if art.reference.converged else " (NOT converged)"),
        f"final R          {s.regret[-1]:.6g}" if len(s) else "final R          -",
        f"final F          {s.fit[-1]:.6g}" if len(s) else "final F          -",
        f"regret bound     {b.regret_bound:.6g}  ratio {b.regret_ratio:.3g} ({b.label})",
        f"fit bound        {b.fit_bound:.6g}  ratio {b.fit_ratio:.3g} ({b.label})",
    ]
    if art.zeno is not None:
        counts = " ".join(str(c) for c in art.zeno.event_counts)
        lines.append(f"events/player    {counts}")
        lines.append(f"zeno check       {'pass' if art.zeno.passed else 'FAIL'}")
    return "\n".join(lines)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="paper5", help="builtin id or scenario YAML file")
    p.add_argument("--mode", choices=[CONTINUOUS, EVENT])
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--k-mu", type=float, dest="k_mu")
    p.add_argument("--gain-cap", type=float, dest="gain_cap")
    p.add_argument("--beta0", type=float)
    p.add_argument("--gamma0", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-stride", type=int, dest="sample_stride")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gne-sim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario and write artifacts")
    _add_run_flags(p_run)
    p_run.add_argument("--out-dir", default="out")
    p_run.add_argument("--no-plots", action="store_true")

    p_cmp = sub.add_parser("compare", help="continuous vs event-triggered communication")
    _add_run_flags(p_cmp)

    p_rep = sub.add_parser("replay", help="re-run a manifest")
    p_rep.add_argument("manifest")
    p_rep.add_argument("--out-dir", default="replay")
    p_rep.add_argument("--no-plots", action="store_true")

    p_show = sub.add_parser("show", help="print a scenario as YAML")
    p_show.add_argument("--scenario", default="paper5")
    return parser


_OVERRIDE_KEYS = ("mode", "dt", "horizon", "k_mu", "gain_cap", "beta0", "gamma0", "seed", "sample_stride")


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "show":
            sys.stdout.write(serialize(load_scenario(args.scenario)))
            return 0
        if args.command == "replay":
            art = replay(args.manifest, args.out_dir, plots=not args.no_plots)
        else:
            overrides = {k: getattr(args, k) for k in _OVERRIDE_KEYS}
            scenario = load_scenario(args.scenario)
            if args.command == "compare":
                rep = compare_modes(scenario, overrides)
                print(f"steps            {rep.steps}")
                print(f"events/player    {' '.join(map(str, rep.event_counts))}")
                print(f"saving ratio     {rep.saving_ratio:.4f}")
                for mode in (CONTINUOUS, EVENT):
                    print(f"{mode:<16} R={rep.final_regret[mode]:.6g} F={rep.final_fit[mode]:.6g}")
                return 0
            art = run(scenario, overrides, args.out_dir, plots=not args.no_plots)
    except NumericalBlowup as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (ScenarioError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    for msg in art.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    print(_summary(art))
    print(f"artifacts in     {art.out_dir}")
    return 0
