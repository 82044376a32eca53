"""Losses, optimizer, training loop, and the gradient-certification harness.

The loss is a weighted sum of a binary cross-entropy classification term
over the linear readout of (S, D) and a stability regularizer: real
samples are pushed toward low Action and Dissipation, fake samples are
hinged to keep their Action above a margin gamma.

Training differentiates the total loss end to end through the unrolled
rollout on the reverse-mode tape (T is short, so exact unrolling beats an
adjoint solve).  On the tape the cross-entropy of a sigmoid readout is
computed in logit form, softplus(-z) for fakes and softplus(z) for reals,
which is the same function as the clamped probability form whenever the
clamp is inactive (|z| < ln 1e12).

Every analytic gradient is certified against the central finite-difference
oracle, parameter group by parameter group; the CLI `gradcheck` command
drives :func:`certify_gradients`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, relu, softplus
from .dynamics import RolloutConfig, rollout
from .potential import (
    PARAM_GROUPS,
    Classifier,
    ConfigError,
    MassNet,
    PotentialConfig,
    PotentialModel,
    ProjectionHeads,
    clone_model,
    init_model,
    named_params,
    pack_group,
    set_param,
    unpack_group,
)
from .stats import TrajStats, phys_features

log = logging.getLogger(__name__)

__all__ = [
    "LossConfig",
    "LossBreakdown",
    "TrainConfig",
    "TrainingError",
    "AdamState",
    "classify",
    "bce_loss",
    "l_real",
    "l_fake",
    "total_loss",
    "batch_loss",
    "adam_init",
    "train_step",
    "train",
    "evaluate",
    "certify_gradients",
]


class TrainingError(RuntimeError):
    pass


@dataclass
class LossConfig:
    """Weight of the stability regularizer and the fake-action hinge margin."""

    lam: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("physical loss weight must be nonnegative")
        if self.gamma <= 0:
            raise ConfigError("hinge margin must be positive")


@dataclass
class LossBreakdown:
    total: float
    cls: float
    phy: float
    real_term: float
    fake_term: float


@dataclass
class TrainConfig:
    """Everything the training loop needs besides the data."""

    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    d_phy: int = 64
    knn_k: int = 8
    sigma: float = 8.0
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    loss: LossConfig = field(default_factory=LossConfig)


# ---------------------------------------------------------------------------
# scalar-path losses (the independent recomputation route)
# ---------------------------------------------------------------------------

_CLAMP = 1e-12


def classify(f: TrajStats, c: Classifier):
    """Predicted fake probability sigmoid(w . [S, D] + b)."""
    z = float(c.w[0]) * f.s + float(c.w[1]) * f.d + float(c.b)
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def bce_loss(yhat, y):
    """Binary cross-entropy with probability clamped to [1e-12, 1 - 1e-12]."""
    p = min(max(float(yhat), _CLAMP), 1.0 - _CLAMP)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def l_real(stats):
    """Mean of S + D over the real sub-batch; 0 (flagged) when empty."""
    if not stats:
        log.warning("real term over an empty sub-batch; contributing 0")
        return 0.0
    return sum(st.s + st.d for st in stats) / len(stats)


def l_fake(stats, gamma):
    """Mean hinge max(0, gamma - S) over the fake sub-batch; 0 when empty."""
    if not stats:
        log.warning("fake term over an empty sub-batch; contributing 0")
        return 0.0
    return sum(max(0.0, gamma - st.s) for st in stats) / len(stats)


def total_loss(stats, labels, classifier, cfg: LossConfig) -> LossBreakdown:
    """Scalar recomputation of the full loss from per-sample statistics."""
    if not stats:
        raise ValueError("batch must contain at least one sample")
    cls = sum(bce_loss(classify(st, classifier), y) for st, y in zip(stats, labels)) / len(stats)
    real_term = l_real([st for st, y in zip(stats, labels) if y == 0])
    fake_term = l_fake([st for st, y in zip(stats, labels) if y == 1], cfg.gamma)
    phy = real_term + fake_term
    return LossBreakdown(cls + cfg.lam * phy, cls, phy, real_term, fake_term)


# ---------------------------------------------------------------------------
# tape-path loss
# ---------------------------------------------------------------------------

def _lift_model(tape, model):
    """Copy of the model whose parameters are leaf Vars on ``tape``.

    The classifier weight vector is split into two scalar leaves so the
    logit stays inside the primitive op set.  Returns the lifted model,
    the leaf dict keyed like :func:`named_params` entries, and the logit
    leaves (w0, w1, b).
    """
    leaves = {}

    def lf(name, arr):
        v = tape.leaf(np.asarray(arr, dtype=np.float64), op="param")
        leaves[name] = v
        return v

    h = model.heads
    heads = ProjectionHeads(
        w_q=lf("head_q.w", h.w_q), b_q=lf("head_q.b", h.b_q),
        w_n=lf("head_n.w", h.w_n), b_n=lf("head_n.b", h.b_n),
        w_rho=lf("head_rho.w", h.w_rho), b_rho=lf("head_rho.b", h.b_rho),
        w_l=lf("head_l.w", h.w_l), b_l=lf("head_l.b", h.b_l),
    )
    m = model.mass
    mass = MassNet(
        w1=lf("mass.w1", m.w1), b1=lf("mass.b1", m.b1),
        w2=lf("mass.w2", m.w2), b2=lf("mass.b2", m.b2),
        epsilon=m.epsilon,
    )
    w0 = lf("classifier.w0", model.classifier.w[0])
    w1 = lf("classifier.w1", model.classifier.w[1])
    b = lf("classifier.b", model.classifier.b)
    lifted = PotentialModel(heads, mass, model.classifier, model.config,
                            model.d_in, model.d_phy)
    return lifted, leaves, (w0, w1, b)


def batch_loss(tape, model, batch, L, rollout_cfg, loss_cfg):
    """Record the full batch loss on ``tape``.

    Returns (total Var, leaves dict, LossBreakdown of plain floats, stats).
    """
    if not batch:
        raise ValueError("batch must contain at least one sample")
    lifted, leaves, (w0, w1, b) = _lift_model(tape, model)
    cls_terms = []
    real_terms = []
    fake_terms = []
    stats = []
    for x, y in batch:
        traj = rollout(x, lifted, L, rollout_cfg)
        st = phys_features(traj, L.dim)
        stats.append(st)
        z = w0 * st.s + w1 * st.d + b
        # exact logit form of the clamped BCE while the clamp is inactive
        cls_terms.append(softplus(-z) if y == 1 else softplus(z))
        if y == 1:
            fake_terms.append(relu(loss_cfg.gamma - st.s))
        else:
            real_terms.append(st.s + st.d)

    def mean_of(terms):
        if not terms:
            return 0.0
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return (1.0 / len(terms)) * acc

    cls = mean_of(cls_terms)
    real_term = mean_of(real_terms)
    fake_term = mean_of(fake_terms)
    if not real_terms or not fake_terms:
        log.warning("batch missing a class; its stability term contributes 0")
    phy = real_term + fake_term
    total = cls + loss_cfg.lam * phy
    breakdown = LossBreakdown(float(total), float(cls), float(phy),
                              float(real_term), float(fake_term))
    return total, leaves, breakdown, stats


def _collect_grads(tape, total, leaves):
    """Backward pass; reassembles the split classifier weight vector."""
    names = list(leaves)
    grads = dict(zip(names, tape.grad(total, [leaves[n] for n in names])))
    out = {}
    for name, g in grads.items():
        if name.startswith("classifier.w"):
            continue
        out[name] = g
    out["classifier.w"] = np.array([float(grads["classifier.w0"]),
                                    float(grads["classifier.w1"])])
    out["classifier.b"] = np.asarray(grads["classifier.b"], dtype=np.float64).reshape(())
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(model, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    state = AdamState(lr, beta1, beta2, eps)
    for name, p in named_params(model).items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def _adam_apply(model, optim, grads):
    optim.t += 1
    bc1 = 1.0 - optim.beta1 ** optim.t
    bc2 = 1.0 - optim.beta2 ** optim.t
    for name, p in named_params(model).items():
        g = grads[name]
        optim.m[name] = optim.beta1 * optim.m[name] + (1.0 - optim.beta1) * g
        optim.v[name] = optim.beta2 * optim.v[name] + (1.0 - optim.beta2) * g * g
        m_hat = optim.m[name] / bc1
        v_hat = optim.v[name] / bc2
        set_param(model, name, p - optim.lr * m_hat / (np.sqrt(v_hat) + optim.eps))


def train_step(model, batch, optim, L, cfg: TrainConfig):
    """One forward/backward pass through the rollout plus one Adam update."""
    tape = Tape()
    total, leaves, breakdown, _ = batch_loss(tape, model, batch, L, cfg.rollout, cfg.loss)
    grads = _collect_grads(tape, total, leaves)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
    _adam_apply(model, optim, grads)
    return model, breakdown


# ---------------------------------------------------------------------------
# training loop and evaluation
# ---------------------------------------------------------------------------

def evaluate(model, dataset, L, rollout_cfg):
    """Inference pass: per-sample stats, fake probabilities, and labels."""
    stats = []
    scores = []
    labels = []
    for x, y in dataset:
        traj = rollout(x, model, L, rollout_cfg)
        st = phys_features(traj, L.dim)
        stats.append(st)
        scores.append(classify(st, model.classifier))
        labels.append(int(y))
    return np.array(scores), np.array(labels), stats


def _pairwise_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return math.nan
    greater = np.sum(pos[:, None] > neg[None, :])
    equal = np.sum(pos[:, None] == neg[None, :])
    return float((greater + 0.5 * equal) / (pos.size * neg.size))


def train(train_set, val_set, L, cfg: TrainConfig, model=None):
    """Seeded mini-batch training; returns the model and per-epoch history.

    ``history`` rows carry the epoch-mean loss breakdown plus the validation
    AUC (training-set AUC when no validation set is supplied).
    """
    labels = {y for _, y in train_set}
    if labels != {0, 1}:
        raise ConfigError("training set must contain both classes")
    if model is None:
        model = init_model(train_set[0][0].shape[1], cfg.d_phy, cfg.seed, cfg.potential)
    optim = adam_init(model, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    shuffle_rng = np.random.default_rng([cfg.seed, 0x5EED])
    history = []
    eval_set = val_set if val_set else train_set
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        sums = np.zeros(5)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            model, bd = train_step(model, batch, optim, L, cfg)
            sums += (bd.total, bd.cls, bd.phy, bd.real_term, bd.fake_term)
            n_batches += 1
        scores, ys, _ = evaluate(model, eval_set, L, cfg.rollout)
        auc = _pairwise_auc(scores, ys)
        mean = sums / n_batches
        history.append({
            "epoch": epoch,
            "total": mean[0], "cls": mean[1], "phy": mean[2],
            "real_term": mean[3], "fake_term": mean[4],
            "auc": auc,
        })
    return model, history


# ---------------------------------------------------------------------------
# gradient certification
# ---------------------------------------------------------------------------

@dataclass
class GroupCheck:
    group: str
    max_rel_err: float
    ok: bool


def _toy_instance(seed, d_in=6, d_phy=8, grid_hw=(2, 2), batch_size=4,
                  rollout_cfg=None, loss_cfg=None):
    from .graph import PatchGrid, build_knn_graph, laplacian

    rng = np.random.default_rng([seed, 0x70F])
    grid = PatchGrid(*grid_hw)
    L = laplacian(build_knn_graph(grid, k=8, sigma=8.0))
    model = init_model(d_in, d_phy, seed=seed)
    batch = []
    for i in range(batch_size):
        x = rng.standard_normal((grid.n, d_in))
        batch.append((x, i % 2))
    return model, batch, L, rollout_cfg or RolloutConfig(), loss_cfg or LossConfig()


def certify_gradients(seeds=(0,), corrupt=None, tol=1e-6, fd_step=1e-5, **toy_kwargs):
    """Tape gradients vs. the finite-difference oracle, per parameter group.

    Builds a small internal instance per seed and compares the analytic
    gradient of the full loss with central differences over each group's
    packed parameter vector.  ``corrupt`` names a group whose analytic
    gradient is deliberately perturbed (negative-control test hook).
    """
    from .autodiff import finite_diff_grad

    worst = {g: 0.0 for g in PARAM_GROUPS}
    for seed in seeds:
        model, batch, L, rollout_cfg, loss_cfg = _toy_instance(seed, **toy_kwargs)
        tape = Tape()
        total, leaves, _, _ = batch_loss(tape, model, batch, L, rollout_cfg, loss_cfg)
        grads = _collect_grads(tape, total, leaves)
        for group, names in PARAM_GROUPS.items():
            analytic = np.concatenate([np.ravel(grads[n]) for n in names])
            if corrupt == group:
                analytic = analytic + 1.0
            probe = clone_model(model)

            def f(vec, group=group, probe=probe):
                unpack_group(probe, group, vec)
                t = Tape(recording=False)
                val, _, _, _ = batch_loss(t, probe, batch, L, rollout_cfg, loss_cfg)
                return float(val)

            numeric = finite_diff_grad(f, pack_group(model, group), h=fd_step)
            denom = max(float(np.max(np.abs(numeric))), 1e-8)
            err = float(np.max(np.abs(analytic - numeric.ravel()))) / denom
            worst[group] = max(worst[group], err)
    return [GroupCheck(g, e, e < tol) for g, e in worst.items()]
