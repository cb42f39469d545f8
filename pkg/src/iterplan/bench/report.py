"""Figures and a text summary for benchmark CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import GroupSummary, Row, max_gap, read_rows, summarize  # noqa: E402

# maximum optimality gaps reported for the published study, drawn as reference lines only
REFERENCE_GAP_AGENTS = 0.222
REFERENCE_GAP_SITES = 0.105

# published plan and compute times (minutes) of two external baselines; not produced by this package
EXTERNAL_BASELINES = {
    "genetic algorithm (external)": {"plan_min": 225.0, "compute_min": 94.0},
    "bayesian optimization (external)": {"plan_min": 249.0, "compute_min": 15.0},
}


def _sweep_axis(rows: list[Row], sweep: str):
    return "groups" if sweep == "agents" else "n_sites"


def plot_plan_times(rows: list[Row], sweep: str, path: Path) -> Path:
    axis = _sweep_axis(rows, sweep)
    rs = [r for r in rows if r.sweep == sweep]
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [getattr(r, axis) for r in rs]
    top = max([r.plan_time or 0 for r in rs] + [r.oracle_time or 0 for r in rs] + [1.0]) * 1.1
    ax.scatter(xs, [r.plan_time if r.plan_time is not None else top for r in rs], marker="o", label="iterative (TDO+AO)")
    ax.scatter(xs, [r.tdo_time if r.tdo_time is not None else top for r in rs], marker="x", label="team-level only")
    ax.scatter(
        [x + 0.1 for x in xs], [r.oracle_time if r.oracle_time is not None else top for r in rs], marker="s", facecolors="none", edgecolors="k", label="optimal baseline"
    )
    ax.axhline(top, color="grey", lw=0.5, ls=":")
    ax.text(min(xs, default=0), top, "timed out", va="bottom", fontsize=8, color="grey")
    ax.set_xlabel("groups" if sweep == "agents" else "task sites")
    ax.set_ylabel("plan time [s]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_compute_times(rows: list[Row], sweep: str, path: Path) -> Path:
    axis = _sweep_axis(rows, sweep)
    rs = [r for r in rows if r.sweep == sweep]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter([getattr(r, axis) for r in rs], [r.compute_time for r in rs], label="iterative (TDO+AO)")
    ax.scatter([getattr(r, axis) + 0.1 for r in rs], [r.oracle_compute for r in rs], marker="s", label="optimal baseline")
    ax.set_yscale("log")
    ax.set_xlabel("groups" if sweep == "agents" else "task sites")
    ax.set_ylabel("compute time [s]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_gaps(rows: list[Row], sweep: str, path: Path) -> Path:
    axis = _sweep_axis(rows, sweep)
    rs = [r for r in rows if r.sweep == sweep and r.optimality_gap is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter([getattr(r, axis) for r in rs], [100 * r.optimality_gap for r in rs], label="iterative (TDO+AO)")
    ax.scatter([getattr(r, axis) + 0.1 for r in rs], [100 * r.tdo_gap for r in rs], marker="x", label="team-level only")
    ref = REFERENCE_GAP_AGENTS if sweep == "agents" else REFERENCE_GAP_SITES
    ax.axhline(100 * ref, color="r", ls="--", label=f"published maximum {100 * ref:.1f}%")
    ax.axhline(0, color="k", lw=0.5)
    ax.set_xlabel("groups" if sweep == "agents" else "task sites")
    ax.set_ylabel("optimality gap [%]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_step_improvement(summaries: list[GroupSummary], path: Path) -> Path | None:
    series = [s for s in summaries if s.step_delta_iqr]
    if not series:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for s in series:
        ks = range(1, len(s.step_delta_iqr) + 1)
        lo, med, hi = zip(*s.step_delta_iqr)
        ax.plot(ks, [100 * m for m in med], label=f"{s.sweep} g={s.groups} n={s.n_sites}")
        ax.fill_between(ks, [100 * v for v in lo], [100 * v for v in hi], alpha=0.2)
    ax.set_xlabel("execution step")
    ax.set_ylabel("plan time improvement [%]")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_external(rows: list[Row], path: Path) -> Path:
    ok = [r for r in rows if r.plan_time is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, v in EXTERNAL_BASELINES.items():
        ax.scatter(v["compute_min"], v["plan_min"], marker="^", label=name)
    if ok:
        ax.scatter(
            sum(r.compute_time for r in ok) / len(ok) / 60,
            sum(r.plan_time for r in ok) / len(ok) / 60,
            marker="o",
            label="this run, desk-scale mean",
        )
    ax.set_xlabel("compute time [min]")
    ax.set_ylabel("plan time [min]")
    ax.set_title("external baselines are published constants", fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def summary_text(rows: list[Row]) -> str:
    lines = ["sweep groups sites runs pi_timeouts oracle_timeouts plan_mean plan_iqr compute_mean delta_f_mean max_gap"]
    fmt = lambda v: "-" if v is None else (f"{v:.3f}" if isinstance(v, float) else str(v))  # noqa: E731
    for s in summarize(rows):
        iqr = "-" if s.plan_time_iqr is None else f"[{s.plan_time_iqr[0]:.0f},{s.plan_time_iqr[1]:.0f}]"
        lines.append(
            " ".join(
                [s.sweep, str(s.groups), str(s.n_sites), str(s.runs), str(s.pi_timeouts), str(s.oracle_timeouts), fmt(s.plan_time_mean), iqr, fmt(s.compute_mean), fmt(s.delta_f_mean), fmt(s.max_gap)]
            )
        )
    for sweep, ref in (("agents", REFERENCE_GAP_AGENTS), ("sites", REFERENCE_GAP_SITES)):
        g = max_gap(rows, sweep)
        if g is not None:
            lines.append(f"max gap ({sweep} sweep): {100 * g:.1f}% (published reference {100 * ref:.1f}%)")
    lines.append("external baselines (published constants, not measured here):")
    for name, v in EXTERNAL_BASELINES.items():
        lines.append(f"  {name}: plan {v['plan_min']:.0f} min, compute {v['compute_min']:.0f} min")
    return "\n".join(lines) + "\n"


def render_report(csv_path, out_dir=None) -> list[Path]:
    """Write PNG figures and a summary next to the CSV (or into `out_dir`)."""
    csv_path = Path(csv_path)
    rows = read_rows(csv_path)
    out_dir = Path(out_dir) if out_dir else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = csv_path.stem
    made = []
    for sweep in sorted({r.sweep for r in rows}):
        made.append(plot_plan_times(rows, sweep, out_dir / f"{stem}_{sweep}_plan_time.png"))
        made.append(plot_compute_times(rows, sweep, out_dir / f"{stem}_{sweep}_compute_time.png"))
        if any(r.sweep == sweep and r.optimality_gap is not None for r in rows):
            made.append(plot_gaps(rows, sweep, out_dir / f"{stem}_{sweep}_gap.png"))
    p = plot_step_improvement(summarize(rows), out_dir / f"{stem}_step_improvement.png")
    if p:
        made.append(p)
    made.append(plot_external(rows, out_dir / f"{stem}_external.png"))
    summary = out_dir / f"{stem}_summary.txt"
    summary.write_text(summary_text(rows))
    made.append(summary)
    return made
