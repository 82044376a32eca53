"""Delimited report files and the matplotlib figures rendered beside them.

Every CSV writer here is deterministic: floats are rendered with repr
(shortest exact decimal), so identical runs produce byte-identical files.
Figures are rendered headlessly to PNG next to each CSV; PNG bytes are
cosmetic output and excluded from determinism guarantees.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "write_csv",
    "trajectory_rows",
    "save_trajectory",
    "save_class_trajectories",
    "save_histogram",
    "save_landscape",
    "save_roughness",
    "save_history",
    "save_sweep",
    "save_graph_edges",
    "save_solver_table",
]


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (np.floating,)):
        return repr(float(x))
    return x


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# per-trajectory export
# ---------------------------------------------------------------------------

def trajectory_rows(traj):
    """Rows (step, H, T_kin, V, q_norm, p_norm) for one trajectory."""
    rows = []
    for t, state in enumerate(traj.states):
        rows.append((
            t,
            float(traj.hamiltonian[t]),
            float(traj.kinetic[t]),
            float(traj.potential[t]),
            float(np.linalg.norm(np.asarray(state.q))),
            float(np.linalg.norm(np.asarray(state.p))),
        ))
    return rows


TRAJ_HEADER = ("step", "H", "T_kin", "V", "q_norm", "p_norm")


def save_trajectory(csv_path, traj, fig_path=None, title="rollout energy"):
    rows = trajectory_rows(traj)
    write_csv(csv_path, TRAJ_HEADER, rows)
    if fig_path:
        steps = [r[0] for r in rows]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(steps, [r[1] for r in rows], "o-", label="H")
        ax.plot(steps, [r[2] for r in rows], "s--", label="T_kin")
        ax.plot(steps, [r[3] for r in rows], "^--", label="V")
        ax.set_xlabel("step")
        ax.set_ylabel("energy")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)


def save_class_trajectories(csv_path, trajs_real, trajs_fake, fig_path=None):
    """Per-class median/quartile Hamiltonian per step (trajectory bundle export)."""
    rows = []
    series = {}
    for label, trajs in (("real", trajs_real), ("fake", trajs_fake)):
        if not trajs:
            continue
        h = np.array([[float(v) for v in tr.hamiltonian] for tr in trajs])
        med = np.median(h, axis=0)
        q25 = np.percentile(h, 25, axis=0)
        q75 = np.percentile(h, 75, axis=0)
        series[label] = (med, q25, q75)
        for t in range(h.shape[1]):
            rows.append((label, t, float(med[t]), float(q25[t]), float(q75[t])))
    write_csv(csv_path, ("class", "step", "h_median", "h_q25", "h_q75"), rows)
    if fig_path and series:
        fig, ax = plt.subplots(figsize=(6, 4))
        colors = {"real": "tab:blue", "fake": "tab:red"}
        for label, (med, q25, q75) in series.items():
            steps = np.arange(med.size)
            ax.plot(steps, med, "o-", color=colors[label], label=f"{label} median")
            ax.fill_between(steps, q25, q75, color=colors[label], alpha=0.2)
        ax.set_xlabel("step")
        ax.set_ylabel("Hamiltonian")
        ax.set_title("energy along rollouts by class")
        ax.legend()
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)


def save_histogram(csv_path, stats, labels, fig_path=None):
    """Relative Action (S - median real S) per sample with its label."""
    s = np.array([float(st.s) for st in stats])
    y = np.asarray(labels)
    med_real = float(np.median(s[y == 0])) if np.any(y == 0) else 0.0
    rows = [(int(label), float(si - med_real)) for si, label in zip(s, y)]
    write_csv(csv_path, ("label", "s_rel"), rows)
    if fig_path:
        fig, ax = plt.subplots(figsize=(6, 4))
        rel = s - med_real
        bins = np.histogram_bin_edges(rel, bins=40)
        ax.hist(rel[y == 0], bins=bins, alpha=0.6, density=True,
                color="tab:blue", label="real")
        ax.hist(rel[y == 1], bins=bins, alpha=0.6, density=True,
                color="tab:red", label="fake")
        ax.set_xlabel("S - median(S_real)")
        ax.set_ylabel("density")
        ax.set_title("relative Action by class")
        ax.legend()
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)


def save_landscape(csv_path, rows, fig_path=None):
    """Slice rows (a, b, V) as CSV plus a filled-contour rendering."""
    write_csv(csv_path, ("a", "b", "V"), rows)
    if fig_path:
        a = sorted({r[0] for r in rows})
        b = sorted({r[1] for r in rows})
        grid = np.full((len(b), len(a)), np.nan)
        ai = {v: i for i, v in enumerate(a)}
        bi = {v: i for i, v in enumerate(b)}
        for ra, rb, rv in rows:
            grid[bi[rb], ai[ra]] = rv
        fig, ax = plt.subplots(figsize=(5.5, 4.5))
        if len(a) > 1 and len(b) > 1:
            m = ax.contourf(a, b, grid, levels=24, cmap="viridis")
            fig.colorbar(m, ax=ax, label="V")
        ax.set_xlabel("a")
        ax.set_ylabel("b")
        ax.set_title("potential slice around the sample state")
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)


def save_roughness(csv_path, values, h_p, w_p, fig_path=None):
    rows = [(i, i // w_p, i % w_p, float(v)) for i, v in enumerate(values)]
    write_csv(csv_path, ("patch", "y", "x", "roughness"), rows)
    if fig_path:
        fig, ax = plt.subplots(figsize=(5, 4.5))
        m = ax.imshow(np.asarray(values, dtype=float).reshape(h_p, w_p),
                      cmap="magma", origin="upper")
        fig.colorbar(m, ax=ax, label="|L x| per patch")
        ax.set_title("feature roughness map")
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)


def save_history(csv_path, history, fig_path=None):
    rows = [(h["epoch"], h["total"], h["cls"], h["phy"], h["auc"]) for h in history]
    write_csv(csv_path, ("epoch", "total", "cls", "phy", "auc"), rows)
    if fig_path and history:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
        epochs = [h["epoch"] for h in history]
        ax1.plot(epochs, [h["total"] for h in history], label="total")
        ax1.plot(epochs, [h["cls"] for h in history], label="cls")
        ax1.plot(epochs, [h["phy"] for h in history], label="phy")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("loss")
        ax1.legend()
        ax2.plot(epochs, [h["auc"] for h in history], "o-", color="tab:green")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("AUC")
        ax2.set_ylim(0.0, 1.02)
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)


def save_sweep(csv_path, param, rows, fig_path=None):
    write_csv(csv_path, (param, "auc"), rows)
    if fig_path:
        fig, ax = plt.subplots(figsize=(5.5, 3.8))
        ax.plot([r[0] for r in rows], [r[1] for r in rows], "o-")
        ax.set_xlabel(param)
        ax.set_ylabel("AUC")
        ax.set_title(f"sensitivity to {param}")
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)


def save_graph_edges(csv_path, graph):
    rows = [(int(i), int(j), float(w))
            for (i, j), w in zip(graph.edges, graph.weights)]
    write_csv(csv_path, ("i", "j", "w"), rows)


def save_solver_table(csv_path, rows):
    write_csv(csv_path, ("integrator", "auc", "grad_evals", "wall_time_s", "max_drift"),
              [(r["integrator"], r["auc"], r["grad_evals"], r["wall_time_s"], r["max_drift"])
               for r in rows])
