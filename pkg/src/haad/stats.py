"""Trajectory readout statistics and roughness diagnostics.

Two numbers summarize a rollout, both normalized by the patch count so
they are invariant to stacking disconnected copies of a sample:

* Action S: mean Hamiltonian over steps 1..T divided by N (the initial
  rest-state H_0 is recorded for diagnostics but excluded from the sum),
* Dissipation D: mean absolute step-to-step Hamiltonian change divided
  by N; defined as 0 (with a logged flag) for single-step trajectories.

These functions accept trajectories whose energies are floats (inference)
or tape Vars (training) and preserve the kind.
"""

from __future__ import annotations

import logging
import operator
from dataclasses import dataclass
from functools import reduce

import numpy as np

log = logging.getLogger(__name__)

__all__ = ["TrajStats", "action_score", "dissipation", "phys_features", "roughness_map"]


@dataclass
class TrajStats:
    """Readout pair (Action, Dissipation) feeding the linear classifier."""

    s: object
    d: object


def action_score(traj, n):
    """Mean of H_1..H_T divided by the patch count n."""
    steps = traj.steps
    if steps < 1:
        raise ValueError("action needs at least one step")
    total = reduce(operator.add, traj.hamiltonian[1:])
    return (1.0 / (steps * n)) * total


_WARNED_SINGLE_STEP = False


def dissipation(traj, n):
    """Mean absolute Hamiltonian change over steps 1..T, divided by n.

    Undefined at T = 1; returns 0.0 and logs a flag (once per process) so
    step-count sweeps down to T = 1 stay runnable.
    """
    steps = traj.steps
    if steps < 1:
        raise ValueError("dissipation needs at least one step")
    if steps == 1:
        global _WARNED_SINGLE_STEP
        if not _WARNED_SINGLE_STEP:
            log.warning("dissipation undefined for single-step trajectories; reporting 0")
            _WARNED_SINGLE_STEP = True
        return 0.0
    h = traj.hamiltonian
    diffs = [abs(h[t + 1] - h[t]) for t in range(1, steps)]
    return (1.0 / ((steps - 1) * n)) * reduce(operator.add, diffs)


def phys_features(traj, n):
    return TrajStats(action_score(traj, n), dissipation(traj, n))


def roughness_map(x, L):
    """Per-patch magnitude of the graph Laplacian applied to the raw features."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != L.dim:
        raise ValueError(f"graph dim {L.dim} does not match feature rows {x.shape[0]}")
    return np.linalg.norm(L.matmat(x), axis=1)
