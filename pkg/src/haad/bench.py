"""Synthetic benchmark: smooth "real" grids vs. locally disrupted "fake" grids.

Real samples are seeded Gaussian feature fields smoothed over the patch
grid by repeated 3x3 neighbor averaging and then channel-standardized
(the standard deviation is floored, so heavily smoothed fields collapse
toward zero instead of being re-amplified).  Fake samples start from the
same pipeline and then have a seeded contiguous rectangle of patches
replaced by independent unsmoothed noise scaled by ``artifact_gain``,
which mimics a splice: rough interior plus a boundary seam.

A null-control mode removes the artifact mechanism entirely (fakes are
drawn from the real pipeline on a disjoint index stream), which must
collapse detection to chance.

Every sample is fully determined by (seed, stream, index), so datasets
and benchmark reports are reproducible bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import PhysState, Quadratic, integrate, rollout
from .graph import PatchGrid, build_knn_graph, laplacian
from .stats import phys_features
from .training import TrainConfig, classify, evaluate, train

__all__ = [
    "SynthConfigError",
    "MetricError",
    "SynthConfig",
    "BenchReport",
    "gen_real",
    "gen_fake",
    "gen_null",
    "fake_facets",
    "make_dataset",
    "splits",
    "auc",
    "accuracy",
    "report_from_eval",
    "build_graph",
    "run_benchmark",
    "solver_comparison",
    "sweep",
]


class SynthConfigError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass
class SynthConfig:
    """Generator knobs for the synthetic real/fake feature grids.

    Fakes carry one or both of two artifact facets, mirroring the two
    regularities the potential measures:

    * a roughness splice: unsmoothed noise scaled by ``artifact_gain``
      over a seeded rectangle (caught by the geometric term), and
    * a feathered illumination bump: a second seeded region shifted along
      a fixed dataset-level feature direction with a soft taper, scaled
      by ``artifact_shade``.  The taper blunts the seam the geometric term
      would see, while the far-shifted patches leave the real per-patch
      feature envelope, which the shading-variance term can learn to
      expose.

    The per-sample facet mix is seeded (roughly 40% splice-only, 20%
    bump-only, 40% both), so each potential component has fakes only it
    can catch.
    """

    h_p: int = 8
    w_p: int = 8
    d_in: int = 32
    smooth_len: int = 2
    artifact_frac: float = 0.08
    artifact_gain: float = 0.5
    artifact_shade: float = 5.0
    n_train: int = 400
    n_val: int = 200
    seed: int = 7

    def __post_init__(self):
        if self.smooth_len < 1:
            raise SynthConfigError("smooth_len must be at least 1")
        if not (0.0 < self.artifact_frac <= 1.0):
            raise SynthConfigError("artifact_frac must lie in (0, 1]")
        if self.artifact_gain < 0 or self.artifact_shade < 0:
            raise SynthConfigError("artifact amplitudes must be nonnegative")
        area = max(1, round(self.artifact_frac * self.h_p * self.w_p))
        if area > self.h_p * self.w_p:
            raise SynthConfigError("artifact region larger than the grid")


@dataclass
class BenchReport:
    auc: float
    acc: float
    s_auc: float
    median_s_real: float
    median_s_fake: float
    median_d_real: float
    median_d_fake: float
    runtime_s: float


_REAL_STREAM = 0
_FAKE_STREAM = 1


def _rng(cfg, stream, index):
    return np.random.default_rng([cfg.seed, stream, index])


def _box_smooth(field):
    """One pass of 3x3 neighbor averaging with edge clipping."""
    h, w, d = field.shape
    acc = np.zeros_like(field)
    cnt = np.zeros((h, w, 1))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ys = slice(max(0, dy), h + min(0, dy))
            xs = slice(max(0, dx), w + min(0, dx))
            yd = slice(max(0, -dy), h + min(0, -dy))
            xd = slice(max(0, -dx), w + min(0, -dx))
            acc[yd, xd] += field[ys, xs]
            cnt[yd, xd] += 1.0
    return acc / cnt


_SCALE_CACHE = {}


def _smoothing_scale(h_p, w_p, passes):
    """Typical per-patch std of a unit-variance field after box smoothing.

    Computed from the smoothing operator itself (basis images through the
    same passes), so standardization uses a fixed population-level scale
    rather than per-sample empirical moments, which would pin every
    per-channel sample mean to exactly zero and leak a trivial cue.
    """
    key = (h_p, w_p, passes)
    if key not in _SCALE_CACHE:
        n = h_p * w_p
        basis = np.eye(n).reshape(h_p, w_p, n)
        for _ in range(passes):
            basis = _box_smooth(basis)
        per_patch_var = np.sum(basis.reshape(n, n) ** 2, axis=1)
        _SCALE_CACHE[key] = float(np.sqrt(per_patch_var.mean()))
    return _SCALE_CACHE[key]


def _smooth_field(cfg, rng):
    field = rng.standard_normal((cfg.h_p, cfg.w_p, cfg.d_in))
    for _ in range(cfg.smooth_len):
        field = _box_smooth(field)
    return field / _smoothing_scale(cfg.h_p, cfg.w_p, cfg.smooth_len)


def gen_real(cfg: SynthConfig, index) -> np.ndarray:
    """Smooth standardized feature grid, shape (N, d_in)."""
    field = _smooth_field(cfg, _rng(cfg, _REAL_STREAM, index))
    return field.reshape(cfg.h_p * cfg.w_p, cfg.d_in)


def _pick_rect(cfg, rng):
    area = max(1, round(cfg.artifact_frac * cfg.h_p * cfg.w_p))
    rh = int(np.clip(round(np.sqrt(area * cfg.h_p / cfg.w_p)), 1, cfg.h_p))
    rw = int(np.clip(int(np.ceil(area / rh)), 1, cfg.w_p))
    y0 = int(rng.integers(0, cfg.h_p - rh + 1))
    x0 = int(rng.integers(0, cfg.w_p - rw + 1))
    return y0, x0, rh, rw


_DIR_CACHE = {}


def _shade_direction(cfg):
    """Fixed unit feature direction along which fake shading ramps run."""
    key = (cfg.seed, cfg.d_in)
    if key not in _DIR_CACHE:
        rng = np.random.default_rng([cfg.seed, 0x5ADE])
        v = rng.standard_normal(cfg.d_in)
        _DIR_CACHE[key] = v / np.linalg.norm(v)
    return _DIR_CACHE[key]


def _feathered_bump(cfg, rng, taper=2.5):
    """Soft mask: 1 inside a seeded rectangle, tapering to 0 over ``taper``."""
    y0, x0, rh, rw = _pick_rect(cfg, rng)
    ys = np.arange(cfg.h_p)[:, None]
    xs = np.arange(cfg.w_p)[None, :]
    dy = np.maximum(np.maximum(y0 - ys, ys - (y0 + rh - 1)), 0)
    dx = np.maximum(np.maximum(x0 - xs, xs - (x0 + rw - 1)), 0)
    dist = np.sqrt(dy.astype(float) ** 2 + dx.astype(float) ** 2)
    return np.maximum(0.0, 1.0 - dist / taper)


def _fake_parts(cfg, rng):
    """Draws shared by gen_fake and its facet metadata helper."""
    field = _smooth_field(cfg, rng)
    rect = _pick_rect(cfg, rng)
    u_splice = rng.random()
    u_shade = rng.random()
    noise = rng.standard_normal((rect[2], rect[3], cfg.d_in))
    bump = _feathered_bump(cfg, rng)
    amp = cfg.artifact_shade * (0.5 + 0.5 * rng.random())
    has_shade = u_shade < 0.6
    has_splice = (u_splice < 0.65) or not has_shade
    return field, rect, noise, bump, amp, has_splice, has_shade


def gen_fake(cfg: SynthConfig, index) -> np.ndarray:
    """Smooth grid carrying a seeded mix of the two artifact facets."""
    rng = _rng(cfg, _FAKE_STREAM, index)
    field, rect, noise, bump, amp, has_splice, has_shade = _fake_parts(cfg, rng)
    y0, x0, rh, rw = rect
    if has_splice:
        field[y0:y0 + rh, x0:x0 + rw] = cfg.artifact_gain * noise
    if has_shade:
        field += amp * bump[:, :, None] * _shade_direction(cfg)
    return field.reshape(cfg.h_p * cfg.w_p, cfg.d_in)


def fake_facets(cfg: SynthConfig, index):
    """Facet metadata for fake ``index``: (rect, has_splice, has_shade)."""
    rng = _rng(cfg, _FAKE_STREAM, index)
    _, rect, _, _, _, has_splice, has_shade = _fake_parts(cfg, rng)
    return rect, has_splice, has_shade


def gen_null(cfg: SynthConfig, index) -> np.ndarray:
    """Artifact mechanism removed: a smooth draw on the fake index stream."""
    field = _smooth_field(cfg, _rng(cfg, _FAKE_STREAM, index))
    return field.reshape(cfg.h_p * cfg.w_p, cfg.d_in)


def make_dataset(cfg: SynthConfig, count, index_offset=0, null_control=False):
    """Balanced list of (features, label): reals first, then fakes.

    With ``null_control`` the artifact mechanism is removed and the "fake"
    class is statistically indistinguishable from the real one.
    """
    n_real = count // 2
    n_fake = count - n_real
    make_fake = gen_null if null_control else gen_fake
    data = [(gen_real(cfg, index_offset + i), 0) for i in range(n_real)]
    data += [(make_fake(cfg, index_offset + i), 1) for i in range(n_fake)]
    return data


def splits(cfg: SynthConfig, null_control=False):
    train_set = make_dataset(cfg, cfg.n_train, 0, null_control)
    val_set = make_dataset(cfg, cfg.n_val, cfg.n_train, null_control)
    return train_set, val_set


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def auc(scores, labels):
    """Exact pairwise AUC: P(random fake outranks random real), ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = s[y == 1]
    neg = s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUC needs both classes present")
    greater = np.sum(pos[:, None] > neg[None, :])
    equal = np.sum(pos[:, None] == neg[None, :])
    return float((greater + 0.5 * equal) / (pos.size * neg.size))


def accuracy(scores, labels, threshold=0.5):
    pred = (np.asarray(scores) > threshold).astype(int)
    return float(np.mean(pred == np.asarray(labels)))


def _stat_arrays(stats, labels):
    s = np.array([float(st.s) for st in stats])
    d = np.array([float(st.d) for st in stats])
    y = np.asarray(labels)
    return s, d, y


def report_from_eval(scores, labels, stats, runtime_s=0.0):
    s, d, y = _stat_arrays(stats, labels)
    return BenchReport(
        auc=auc(scores, labels),
        acc=accuracy(scores, labels),
        s_auc=auc(s, labels),
        median_s_real=float(np.median(s[y == 0])),
        median_s_fake=float(np.median(s[y == 1])),
        median_d_real=float(np.median(d[y == 0])),
        median_d_fake=float(np.median(d[y == 1])),
        runtime_s=runtime_s,
    )


# ---------------------------------------------------------------------------
# benchmark driver
# ---------------------------------------------------------------------------

def build_graph(cfg: SynthConfig, train_cfg: TrainConfig):
    grid = PatchGrid(cfg.h_p, cfg.w_p)
    return grid, laplacian(build_knn_graph(grid, train_cfg.knn_k, train_cfg.sigma))


def run_benchmark(cfg: SynthConfig, train_cfg: TrainConfig = None, null_control=False):
    """Generate, train, and evaluate; returns (report, model, history, extras)."""
    train_cfg = train_cfg or TrainConfig()
    t0 = time.perf_counter()
    _, L = build_graph(cfg, train_cfg)
    train_set, val_set = splits(cfg, null_control)
    model, history = train(train_set, val_set, L, train_cfg)
    scores, labels, stats = evaluate(model, val_set, L, train_cfg.rollout)
    report = report_from_eval(scores, labels, stats, time.perf_counter() - t0)
    extras = {"scores": scores, "labels": labels, "stats": stats, "L": L,
              "val_set": val_set}
    return report, model, history, extras


def solver_comparison(model, val_set, L, rollout_cfg, oscillator_steps=1000):
    """Per-integrator validation AUC, gradient-eval count, wall time, drift.

    Drift is max |H_t - H_0| on a frozen 1-D harmonic test potential
    (k = 1, eta = 0.1) over ``oscillator_steps`` steps.
    """
    rows = []
    for name in ("euler", "symplectic_euler", "rk4"):
        cfg = replace(rollout_cfg, integrator=name)
        t0 = time.perf_counter()
        scores = []
        labels = []
        grad_evals = 0
        for x, y in val_set:
            traj = rollout(x, model, L, cfg)
            grad_evals += traj.grad_evals
            scores.append(classify(phys_features(traj, L.dim), model.classifier))
            labels.append(int(y))
        wall = time.perf_counter() - t0

        osc = integrate(Quadratic(1.0, np.zeros((1, 1))),
                        PhysState(np.ones((1, 1)), np.zeros((1, 1))),
                        steps=oscillator_steps, eta=0.1, integrator=name)
        h = np.array([float(v) for v in osc.hamiltonian])
        drift = float(np.max(np.abs(h - h[0])))
        rows.append({
            "integrator": name,
            "auc": auc(np.array(scores), np.array(labels)),
            "grad_evals": grad_evals,
            "wall_time_s": wall,
            "max_drift": drift,
        })
    return rows


def sweep(param, values, cfg: SynthConfig, train_cfg: TrainConfig = None):
    """Re-train per value of ``param`` in {steps, eta, lambda}; rows of (value, auc)."""
    if not values:
        raise ValueError("sweep needs at least one value")
    train_cfg = train_cfg or TrainConfig()
    rows = []
    for value in values:
        tc = replace(train_cfg)
        if param == "steps":
            tc.rollout = replace(train_cfg.rollout, steps=int(value))
        elif param == "eta":
            tc.rollout = replace(train_cfg.rollout, eta=float(value))
        elif param == "lambda":
            tc.loss = replace(train_cfg.loss, lam=float(value))
        else:
            raise ValueError(f"unknown sweep parameter '{param}'")
        report, _, _, _ = run_benchmark(cfg, tc)
        rows.append((float(value), report.auc))
    return rows
