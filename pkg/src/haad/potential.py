"""Learnable potential surface over patch-feature grids.

A sample's backbone features x (N x D_in) are projected into a physical
state space by four affine heads: a position state q (N x D_phy) consumed
by the geometric term, and a photometric basis (per-patch unit normals,
sigmoid albedo, global light direction) consumed by the shading term.

Two potential components measure violations of local regularities:

* geometric: the Dirichlet energy of q over the patch graph,
  ``v_geo = tr(q^T L q) / N`` (per-patch normalized),
* photometric: the population variance across patches of the Lambertian
  shading field ``rho * max(0, n . l)``.

``v_total`` is their nonnegative weighted combination.  The per-patch
forms above are the reported statistics; the dynamics evolve under the
whole-system (extensive) potential ``system_potential = N * v_total``,
whose force ``-2 lambda_geo L q`` is independent of how many disconnected
copies of a sample are stacked together.  That keeps the trajectory
statistics invariant under disconnected replication while every reported
energy stays per-patch normalized.

All functions here dispatch through :mod:`haad.autodiff` kernels, so they
accept either plain arrays or tape Vars and behave identically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    SparseSym,
    col_mean,
    dot,
    relu,
    row_normalize,
    row_sum,
    sigmoid,
    softplus,
    spmul,
    value_of,
    variance,
)

__all__ = [
    "ConfigError",
    "PotentialConfig",
    "ProjectionHeads",
    "MassNet",
    "Classifier",
    "PhotoBasis",
    "PotentialModel",
    "init_model",
    "clone_model",
    "named_params",
    "set_param",
    "PARAM_GROUPS",
    "pack_group",
    "unpack_group",
    "project_state",
    "project_photo",
    "v_geo",
    "v_photo",
    "v_total",
    "grad_v",
    "system_potential",
    "system_force",
    "mass_inv",
]


log = logging.getLogger(__name__)

_WARNED_ZERO_NORMAL = False


class ConfigError(ValueError):
    pass


@dataclass
class PotentialConfig:
    """Nonnegative weights gating the two potential components."""

    lambda_geo: float = 1.0
    lambda_photo: float = 1.0

    def __post_init__(self):
        if self.lambda_geo < 0 or self.lambda_photo < 0:
            raise ConfigError("potential weights must be nonnegative")


@dataclass
class ProjectionHeads:
    """Affine heads mapping D_in features to the physical state space."""

    w_q: np.ndarray
    b_q: np.ndarray
    w_n: np.ndarray
    b_n: np.ndarray
    w_rho: np.ndarray
    b_rho: np.ndarray
    w_l: np.ndarray
    b_l: np.ndarray


@dataclass
class MassNet:
    """Two-layer MLP producing the positive per-patch inverse-mass scale."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    epsilon: float = 1e-3


@dataclass
class Classifier:
    """Linear readout over the (Action, Dissipation) feature pair."""

    w: np.ndarray  # shape (2,)
    b: np.ndarray  # shape ()


@dataclass
class PhotoBasis:
    """Photometric decomposition: unit normals, albedo in (0,1), global light."""

    normals: object  # (N, 3), unit rows
    albedo: object   # (N, 1)
    light: object    # (1, 3) global light row


@dataclass
class PotentialModel:
    """All trainable parameters plus the potential configuration."""

    heads: ProjectionHeads
    mass: MassNet
    classifier: Classifier
    config: PotentialConfig
    d_in: int
    d_phy: int


def init_model(d_in, d_phy=64, seed=0, config=None):
    """Seeded initialization: weights uniform in +-1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)

    def u(fan_in, shape):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    heads = ProjectionHeads(
        w_q=u(d_in, (d_in, d_phy)), b_q=np.zeros(d_phy),
        w_n=u(d_in, (d_in, 3)), b_n=np.zeros(3),
        w_rho=u(d_in, (d_in, 1)), b_rho=np.zeros(1),
        w_l=u(d_in, (d_in, 3)), b_l=np.zeros(3),
    )
    mass = MassNet(
        w1=u(d_phy, (d_phy, d_phy)), b1=np.zeros(d_phy),
        w2=u(d_phy, (d_phy, 1)), b2=np.zeros(1),
    )
    # the readout starts at zero: the first optimizer steps then orient it
    # along the (S, D) separation instead of having to undo a random sign
    classifier = Classifier(w=np.zeros(2), b=np.zeros(()))
    return PotentialModel(heads, mass, classifier,
                          config or PotentialConfig(), int(d_in), int(d_phy))


def _param_slots(model):
    h, m, c = model.heads, model.mass, model.classifier
    return {
        "head_q.w": (h, "w_q"), "head_q.b": (h, "b_q"),
        "head_n.w": (h, "w_n"), "head_n.b": (h, "b_n"),
        "head_rho.w": (h, "w_rho"), "head_rho.b": (h, "b_rho"),
        "head_l.w": (h, "w_l"), "head_l.b": (h, "b_l"),
        "mass.w1": (m, "w1"), "mass.b1": (m, "b1"),
        "mass.w2": (m, "w2"), "mass.b2": (m, "b2"),
        "classifier.w": (c, "w"), "classifier.b": (c, "b"),
    }


PARAM_GROUPS = {
    "head_q": ["head_q.w", "head_q.b"],
    "head_n": ["head_n.w", "head_n.b"],
    "head_rho": ["head_rho.w", "head_rho.b"],
    "head_l": ["head_l.w", "head_l.b"],
    "mass_net": ["mass.w1", "mass.b1", "mass.w2", "mass.b2"],
    "classifier": ["classifier.w", "classifier.b"],
}


def named_params(model):
    """Ordered mapping of parameter name to array."""
    return {name: getattr(obj, attr) for name, (obj, attr) in _param_slots(model).items()}


def set_param(model, name, value):
    obj, attr = _param_slots(model)[name]
    setattr(obj, attr, np.asarray(value, dtype=np.float64))


def clone_model(model):
    params = {k: v.copy() for k, v in named_params(model).items()}
    out = init_model(model.d_in, model.d_phy, seed=0, config=model.config)
    out.mass.epsilon = model.mass.epsilon
    for name, value in params.items():
        set_param(out, name, value)
    return out


def pack_group(model, group):
    """Flatten one parameter group into a vector (finite-difference oracle aid)."""
    return np.concatenate([named_params(model)[n].ravel() for n in PARAM_GROUPS[group]])


def unpack_group(model, group, vec):
    offset = 0
    params = named_params(model)
    for name in PARAM_GROUPS[group]:
        shape = params[name].shape
        size = params[name].size
        set_param(model, name, vec[offset:offset + size].reshape(shape))
        offset += size
    if offset != vec.size:
        raise ValueError("vector length does not match group size")


# ---------------------------------------------------------------------------
# projections and potential terms
# ---------------------------------------------------------------------------

def project_state(x, heads):
    """Position state q: affine map applied row-wise."""
    return x @ heads.w_q + heads.b_q


def project_photo(x, heads):
    """Photometric basis: unit normals, sigmoid albedo, patch-mean light.

    Degenerate all-zero normal rows are replaced by the fixed unit vector
    (0, 0, 1) and flagged through the module logger.
    """
    raw = x @ heads.w_n + heads.b_n
    raw_rows = value_of(raw)
    if np.any(np.all(raw_rows == 0.0, axis=1)):
        global _WARNED_ZERO_NORMAL
        if not _WARNED_ZERO_NORMAL:
            log.warning("zero normal row(s) before normalization; substituting (0, 0, 1)")
            _WARNED_ZERO_NORMAL = True
    normals = row_normalize(raw)
    albedo = sigmoid(x @ heads.w_rho + heads.b_rho)
    light = col_mean(x @ heads.w_l + heads.b_l)
    return PhotoBasis(normals, albedo, light)


def v_geo(L: SparseSym, q):
    """Per-patch Dirichlet energy tr(q^T L q) / N."""
    return (1.0 / L.dim) * dot(q, spmul(L, q))


def shading_field(basis):
    """Lambertian shading per patch: rho * max(0, n . l), shape (N, 1)."""
    return basis.albedo * relu(row_sum(basis.normals * basis.light))


def v_photo(basis):
    """Population variance of the reconstructed shading field."""
    return variance(shading_field(basis))


def v_total(L, q, basis, config):
    """Weighted per-patch potential lambda_geo * v_geo + lambda_photo * v_photo."""
    return config.lambda_geo * v_geo(L, q) + config.lambda_photo * v_photo(basis)


def grad_v(L, q, config):
    """Analytic gradient of v_total in q: lambda_geo * (2/N) * L q.

    The photometric term contributes no q-gradient because its basis is
    projected from the raw features, not from q.
    """
    return (2.0 * config.lambda_geo / L.dim) * spmul(L, q)


def system_potential(L, q, photo_value, config):
    """Whole-system potential N * v_total; ``photo_value`` is v_photo(basis).

    This is the potential entering the Hamiltonian: it is extensive, so
    stacking k disconnected copies of a sample multiplies it by k and the
    per-patch trajectory statistics stay unchanged.
    """
    return config.lambda_geo * dot(q, spmul(L, q)) + (L.dim * config.lambda_photo) * photo_value


def system_force(L, q, config):
    """Force of the whole-system potential: -2 lambda_geo * L q."""
    return (-2.0 * config.lambda_geo) * spmul(L, q)


def mass_inv(q, net: MassNet):
    """Positive per-patch inverse-mass scale, shape (N, 1).

    Softplus keeps the scale positive; epsilon bounds it away from zero.
    The per-patch scalar broadcasts across the D_phy state columns.
    """
    hidden = relu(q @ net.w1 + net.b1)
    return softplus(hidden @ net.w2 + net.b2) + net.epsilon
