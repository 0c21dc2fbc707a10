"""Report figures: render matplotlib plots next to the delimited outputs.

Every renderer takes plain data and a target path, draws on the Agg backend
and writes the PNG atomically, so figure generation can never corrupt a
report directory that another process is reading.
"""
from __future__ import annotations

import io
from typing import Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .audits import AuditReport
from .integrator import State, Trajectory
from .util import atomic_write_bytes

plt.rcParams.update({
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
})


def _save(fig, path: str) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def render_diagnostics(traj: Trajectory, path: str) -> None:
    """Energy components, norms, mean drift and control size over time."""
    t = traj.column("t")
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    ax = axes[0, 0]
    ax.plot(t, traj.column("E_phi"), label="interface")
    ax.plot(t, traj.column("E_kin"), label="kinetic")
    ax.plot(t, traj.column("E_total"), label="total", ls="--", c="k")
    ax.set_xlabel("t"); ax.set_ylabel("energy"); ax.legend()
    ax = axes[0, 1]
    ax.plot(t, traj.column("u_L2"), label="|u|")
    ax.plot(t, traj.column("phi_H1"), label="|phi| H1")
    ax.set_xlabel("t"); ax.set_ylabel("norm"); ax.legend()
    ax = axes[1, 0]
    drift = traj.column("mean_phi") - traj.column("mean_phi")[0]
    ax.plot(t, drift)
    ax.set_xlabel("t"); ax.set_ylabel("mean(phi) drift")
    ax = axes[1, 1]
    ax.plot(t, traj.column("control_L2"))
    ax.set_xlabel("t"); ax.set_ylabel("|U|")
    fig.tight_layout()
    _save(fig, path)


def render_phase(states: Sequence[State], path: str, max_panels: int = 4) -> None:
    """Phase-field snapshots at a few stored times."""
    if not states:
        raise ValueError("need at least one stored state")
    n = min(max_panels, len(states))
    picks = [states[round(i * (len(states) - 1) / max(n - 1, 1))] for i in range(n)]
    fig, axes = plt.subplots(1, n, figsize=(3 * n, 3))
    axes = np.atleast_1d(axes)
    vmax = max(float(np.max(np.abs(s.phi.values))) for s in picks) or 1.0
    for ax, s in zip(axes, picks):
        im = ax.imshow(s.phi.values.T, origin="lower", cmap="RdBu_r",
                       vmin=-vmax, vmax=vmax,
                       extent=(0, s.grid.L, 0, s.grid.L))
        ax.set_title(f"t = {s.t:.4g}")
        ax.grid(False)
    fig.colorbar(im, ax=list(axes), shrink=0.85)
    _save(fig, path)


def render_history(history: Sequence[float], path: str) -> None:
    """Best cost per optimizer iteration."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(range(len(history)), history, marker=".")
    ax.set_xlabel("iteration"); ax.set_ylabel("best cost")
    _save(fig, path)


def render_dpp(report, path: str) -> None:
    """One-shot value against the two-leg candidates."""
    labels = ["one-shot"]
    vals = [report.value]
    for d in report.details:
        if "two_leg" in d:
            labels.append(d["first_leg"])
            vals.append(d["two_leg"])
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(labels, vals, color=["#336699"] + ["#999999"] * (len(vals) - 1))
    ax.set_ylabel("cost")
    ax.set_title(f"residual {report.residual:.3e}, slack {report.slack:.3e}")
    _save(fig, path)


def render_hamiltonian(rows: Sequence[dict], radius: float, path: str) -> None:
    """Closed-form curve with brute-force markers over the costate sweep."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if rows:
        top = max(r["p_norm"] for r in rows)
        from .control import hamiltonian_closed_form
        ps = np.linspace(0.0, max(top, radius) * 1.05 + 1e-12, 200)
        ax.plot(ps, [hamiltonian_closed_form(q, radius) for q in ps],
                label="closed form", c="k")
        ax.plot([r["p_norm"] for r in rows], [r["brute_force"] for r in rows],
                "o", label="brute force", c="#cc3333")
        if radius > 0:
            ax.axvline(radius, ls=":", c="gray")
    ax.set_xlabel("costate norm"); ax.set_ylabel("Hamiltonian"); ax.legend()
    _save(fig, path)


def render_audit(report: AuditReport, path: str,
                 series: dict | None = None) -> None:
    """Generic audit figure; a time series (from the audited run) wins when
    provided, otherwise per-sample detail records are scattered log-log."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if series is not None:
        for label, (x, y) in series.items():
            ax.plot(x, y, label=label)
        ax.set_xlabel("t"); ax.legend()
    else:
        pairs = _scatter_pairs(report)
        if pairs:
            xs, ys = zip(*pairs)
            ax.plot(xs, ys, "o-")
            if min(xs) > 0 and min(ys) > 0:
                ax.set_xscale("log"); ax.set_yscale("log")
        ax.set_xlabel("scale"); ax.set_ylabel("measured")
    ax.set_title(f"{report.name}: {'pass' if report.passed else 'FAIL'} "
                 f"(fitted {report.fitted_constant:.4g})")
    _save(fig, path)


def _scatter_pairs(report: AuditReport) -> list[tuple[float, float]]:
    keymap = {
        "continuous-dependence": ("delta", "sup_distance_sq"),
        "time-continuity": ("h", "q"),
        "value-continuity": ("distance", "value_difference"),
        "functional-inequalities": ("fitted_coarse", "fitted_fine"),
    }
    kx, ky = keymap.get(report.name, (None, None))
    out = []
    for d in report.details:
        if kx in d and ky in d:
            out.append((float(d[kx]), float(d[ky])))
    return out
