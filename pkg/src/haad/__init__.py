"""HAAD: a Hamiltonian stability probe over patch-feature grids.

A learnable potential surface (graph Dirichlet energy plus a Lambertian
shading-variance term) assigns energy to a sample's projected state; a
short symplectic rollout released from rest converts potential gradients
into trajectory statistics (Action, Dissipation) that feed a linear
classifier.  The package includes end-to-end training through the rollout,
a synthetic real-vs-fake benchmark, numerical diagnostics, and a CLI.
"""

from .autodiff import NumericFault, SparseSym, Tape, Var, finite_diff_grad, forward_backward, spmul
from .bench import BenchReport, SynthConfig, auc, gen_fake, gen_real, run_benchmark, solver_comparison, sweep
from .dynamics import (
    LinearSlope,
    PhysState,
    Quadratic,
    RolloutConfig,
    Trajectory,
    hamiltonian,
    integrate,
    jacobian_det_probe,
    landscape_slice,
    omitted_term_ratio,
    rollout,
    step_euler,
    step_rk4,
    step_symplectic,
)
from .graph import PatchGrid, SpatialGraph, build_knn_graph, laplacian
from .potential import (
    Classifier,
    MassNet,
    PhotoBasis,
    PotentialConfig,
    PotentialModel,
    ProjectionHeads,
    grad_v,
    init_model,
    mass_inv,
    project_photo,
    project_state,
    v_geo,
    v_photo,
    v_total,
)
from .stats import TrajStats, action_score, dissipation, phys_features, roughness_map
from .training import (
    LossBreakdown,
    LossConfig,
    TrainConfig,
    bce_loss,
    certify_gradients,
    classify,
    l_fake,
    l_real,
    total_loss,
    train,
    train_step,
)

__version__ = "0.1.0"
