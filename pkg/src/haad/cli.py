"""Command-line surface.

Subcommands: ``gen`` (synthetic feature files), ``train`` (fit a model and
write a checkpoint plus history), ``eval`` (metrics and report files for a
labeled feature file), ``rollout`` (single-sample trajectory export),
``diagnose`` (volume-preservation probes, solver comparison, omitted-term
ratio, landscape slice, graph dump), and ``gradcheck`` (certify analytic
gradients against finite differences).

Flags mirror a flat key=value config file passed via ``--config``; flags
given on the command line win on conflict.  Exit codes: 0 success,
1 check failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, fileio, report
from .autodiff import NumericFault
from .bench import SynthConfig, SynthConfigError, MetricError
from .dynamics import (
    LinearSlope,
    PhysState,
    Quadratic,
    RolloutConfig,
    integrate,
    jacobian_det_probe,
    landscape_slice,
    omitted_term_ratio,
    rollout,
    slice_grid,
)
from .graph import GraphError, PatchGrid, build_knn_graph, laplacian
from .potential import ConfigError, PotentialConfig
from .stats import phys_features, roughness_map
from .training import LossConfig, TrainConfig, TrainingError, certify_gradients, classify, evaluate, train

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_IO = 3


class CheckFailure(RuntimeError):
    pass


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _parse_grid(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise UsageError(f"bad --grid '{text}'; expected HxW like 8x8") from exc


def _apply_config_file(argv):
    """Expand ``--config FILE`` into flag tokens placed before the real flags.

    argparse keeps the last occurrence of a flag, so explicit command-line
    flags override the file.
    """
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise UsageError("--config needs a file path")
    if idx == 0:
        raise UsageError("--config must follow the subcommand")
    path = argv[idx + 1]
    rest = argv[:idx] + argv[idx + 2:]
    tokens = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise exc
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        tokens += [f"--{key}", value]
    return [rest[0]] + tokens + rest[1:]


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="stability regularizer weight")
    p.add_argument("--gamma", type=float, default=1.0, help="fake-action hinge margin")
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--eta", type=float, default=0.4)
    p.add_argument("--integrator", default="symplectic_euler",
                   choices=("symplectic_euler", "euler", "rk4"))
    p.add_argument("--mass", default="learned", choices=("learned", "identity"))
    p.add_argument("--dphy", type=int, default=64)
    p.add_argument("--knn", type=int, default=8)
    p.add_argument("--sigma", type=float, default=8.0)
    p.add_argument("--lambda-geo", type=float, default=1.0)
    p.add_argument("--lambda-photo", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def _train_config(args):
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed,
        d_phy=args.dphy, knn_k=args.knn, sigma=args.sigma,
        potential=PotentialConfig(args.lambda_geo, args.lambda_photo),
        rollout=RolloutConfig(steps=args.steps, eta=args.eta,
                              integrator=args.integrator, mass_mode=args.mass),
        loss=LossConfig(lam=args.lam, gamma=args.gamma),
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="haad",
                                     description="Hamiltonian stability probe over patch-feature grids")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic feature files")
    g.add_argument("--out", required=True, help="output path (single file) or prefix (train/val pair)")
    g.add_argument("--grid", default="8x8")
    g.add_argument("--din", type=int, default=32)
    g.add_argument("--n", type=int, default=None,
                   help="write one file with N samples instead of a train/val pair")
    g.add_argument("--n-train", type=int, default=400)
    g.add_argument("--n-val", type=int, default=200)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--smooth-len", type=int, default=3)
    g.add_argument("--artifact-frac", type=float, default=0.15)
    g.add_argument("--artifact-gain", type=float, default=1.0)
    g.add_argument("--null", action="store_true",
                   help="null control: fakes drawn without the artifact mechanism")

    t = sub.add_parser("train", help="train a model on a feature file")
    t.add_argument("--features", required=True)
    t.add_argument("--val", default=None)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--history", default=None, help="history CSV path (figure saved alongside)")
    _add_train_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a feature file")
    e.add_argument("--model", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--out-dir", default=None)

    r = sub.add_parser("rollout", help="export one sample's trajectory")
    r.add_argument("--model", required=True)
    r.add_argument("--features", required=True)
    r.add_argument("--index", type=int, required=True)
    r.add_argument("--out", required=True, help="trajectory CSV path")

    d = sub.add_parser("diagnose", help="numerical probes and solver comparison")
    d.add_argument("--model", default=None)
    d.add_argument("--features", default=None)
    d.add_argument("--analytic", action="store_true",
                   help="probe analytic test potentials only (no checkpoint)")
    d.add_argument("--out-dir", default=".")
    d.add_argument("--probes", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("gradcheck", help="certify analytic gradients vs finite differences")
    c.add_argument("--seeds", type=int, default=3)
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--corrupt", default=None,
                   help="test hook: corrupt one group's analytic gradient")

    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args):
    h_p, w_p = _parse_grid(args.grid)
    if args.n is not None and args.n <= 0:
        raise UsageError("--n must be positive")
    cfg = SynthConfig(h_p=h_p, w_p=w_p, d_in=args.din, smooth_len=args.smooth_len,
                      artifact_frac=args.artifact_frac, artifact_gain=args.artifact_gain,
                      n_train=args.n_train, n_val=args.n_val, seed=args.seed)
    if args.n is not None:
        samples = bench.make_dataset(cfg, args.n, 0, args.null)
        fileio.write_features(args.out, h_p, w_p, samples)
        print(f"wrote {args.out}: grid {h_p}x{w_p}, d_in {args.din}, {args.n} samples")
        return EXIT_OK
    train_set, val_set = bench.splits(cfg, args.null)
    for tag, data in (("train", train_set), ("val", val_set)):
        path = f"{args.out}_{tag}.ft"
        fileio.write_features(path, h_p, w_p, data)
        print(f"wrote {path}: grid {h_p}x{w_p}, d_in {args.din}, {len(data)} samples")
    return EXIT_OK


def _load_labeled(path):
    fs = fileio.read_features(path)
    pairs = fs.labeled_pairs()
    return fs, pairs


def cmd_train(args):
    fs, pairs = _load_labeled(args.features)
    if {y for _, y in pairs} != {0, 1}:
        raise ConfigError(f"training file {args.features} must contain both classes")
    val_pairs = []
    if args.val:
        _, val_pairs = _load_labeled(args.val)
    cfg = _train_config(args)
    grid = PatchGrid(fs.h_p, fs.w_p)
    L = laplacian(build_knn_graph(grid, cfg.knn_k, cfg.sigma))
    model, history = train(pairs, val_pairs, L, cfg)
    fileio.save_checkpoint(args.out, model, cfg.rollout, cfg.loss,
                           (cfg.knn_k, cfg.sigma), cfg.seed)
    print(f"wrote checkpoint {args.out}")
    if args.history:
        fig = str(Path(args.history).with_suffix(".png"))
        report.save_history(args.history, history, fig)
        print(f"wrote history {args.history}")
    if history:
        last = history[-1]
        print(f"final epoch {last['epoch']}: total {last['total']:.6f} "
              f"cls {last['cls']:.6f} phy {last['phy']:.6f} auc {last['auc']:.4f}")
    return EXIT_OK


def _load_model_for(args_model, fs):
    model, rollout_cfg, loss_cfg, graph_cfg, seed = fileio.load_checkpoint(args_model)
    if fs is not None and fs.d_in != model.d_in:
        raise UsageError(f"shape mismatch: feature file {(fs.h_p, fs.w_p, fs.d_in)} "
                         f"vs checkpoint d_in {model.d_in}")
    return model, rollout_cfg, loss_cfg, graph_cfg, seed


def cmd_eval(args):
    fs = fileio.read_features(args.features)
    model, rollout_cfg, _, graph_cfg, _ = _load_model_for(args.model, fs)
    grid = PatchGrid(fs.h_p, fs.w_p)
    L = laplacian(build_knn_graph(grid, graph_cfg[0], graph_cfg[1]))

    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    unlabeled = bool(np.all(fs.labels == fileio.UNLABELED))
    dataset = [(fs.feats[i], int(fs.labels[i])) for i in range(fs.count)]
    scores, labels, stats = evaluate(model, dataset, L, rollout_cfg)

    if out_dir:
        rows = [(i, int(labels[i]), float(scores[i]), float(stats[i].s), float(stats[i].d))
                for i in range(len(dataset))]
        report.write_csv(out_dir / "scores.csv", ("index", "label", "score", "S", "D"), rows)
        print(f"wrote {out_dir / 'scores.csv'}")

    if unlabeled:
        print("labels absent (255): metrics suppressed, scores only")
        return EXIT_OK

    mask = fs.labels != fileio.UNLABELED
    scores_l = scores[mask]
    labels_l = labels[mask]
    stats_l = [st for st, keep in zip(stats, mask) if keep]
    rep = bench.report_from_eval(scores_l, labels_l, stats_l)
    print(f"AUC {rep.auc:.4f}")
    print(f"accuracy@0.5 {rep.acc:.4f}")
    print(f"median S real {rep.median_s_real:.6g} fake {rep.median_s_fake:.6g}")
    print(f"median D real {rep.median_d_real:.6g} fake {rep.median_d_fake:.6g}")

    if out_dir:
        report.save_histogram(out_dir / "histogram.csv", stats_l, labels_l,
                              out_dir / "histogram.png")
        trajs = {0: [], 1: []}
        for x, y in dataset:
            if y in trajs:
                trajs[y].append(rollout(x, model, L, rollout_cfg))
        report.save_class_trajectories(out_dir / "trajectories.csv",
                                       trajs[0], trajs[1],
                                       out_dir / "trajectories.png")
        print(f"wrote {out_dir / 'histogram.csv'} and {out_dir / 'trajectories.csv'}")
    return EXIT_OK


def cmd_rollout(args):
    fs = fileio.read_features(args.features)
    model, rollout_cfg, _, graph_cfg, _ = _load_model_for(args.model, fs)
    if not (0 <= args.index < fs.count):
        raise UsageError(f"sample index {args.index} out of range [0, {fs.count})")
    grid = PatchGrid(fs.h_p, fs.w_p)
    L = laplacian(build_knn_graph(grid, graph_cfg[0], graph_cfg[1]))
    traj = rollout(fs.feats[args.index], model, L, rollout_cfg)
    fig = str(Path(args.out).with_suffix(".png"))
    report.save_trajectory(args.out, traj, fig, title=f"sample {args.index} rollout")
    print(f"wrote {args.out} ({traj.steps} steps, grad evals {traj.grad_evals})")
    return EXIT_OK


def _det_probes(n_probes, seed):
    """Random constant-mass volume-preservation probes (phase dim <= 8)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        dim = int(rng.integers(1, 5))  # q size; phase dim 2*dim <= 8
        if rng.random() < 0.5:
            pot = Quadratic(float(rng.uniform(0.2, 3.0)), rng.standard_normal((dim, 1)))
        else:
            pot = LinearSlope(rng.standard_normal((dim, 1)))
        state = PhysState(rng.standard_normal((dim, 1)), rng.standard_normal((dim, 1)))
        eta = float(rng.uniform(0.05, 0.5))
        mass = float(rng.uniform(0.5, 2.0))
        det = jacobian_det_probe("symplectic_euler", pot, state, eta, mass=mass)
        worst = max(worst, abs(det - 1.0))
    return worst


def cmd_diagnose(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # volume preservation probes
    worst = _det_probes(args.probes, args.seed)
    ok = worst < 1e-8
    print(f"[det] symplectic_euler: max |det J - 1| = {worst:.3e} over {args.probes} probes "
          f"({'PASS' if ok else 'FAIL'} at 1e-8)")
    euler_det = jacobian_det_probe(
        "euler", Quadratic(1.0, np.zeros((1, 1))),
        PhysState(np.ones((1, 1)), np.zeros((1, 1))), eta=0.1)
    print(f"[det] euler, 1-d quadratic k=1 eta=0.1: det J = {euler_det:.8f} (expected 1.01)")

    failures = 0 if ok else 1

    if args.model and not args.analytic:
        fs = fileio.read_features(args.features) if args.features else None
        model, rollout_cfg, _, graph_cfg, seed = _load_model_for(args.model, fs)
        if fs is None:
            cfg = SynthConfig(d_in=model.d_in, seed=seed)
            data = bench.make_dataset(cfg, 32)
            h_p, w_p = cfg.h_p, cfg.w_p
        else:
            data = [(fs.feats[i], int(fs.labels[i])) for i in range(min(fs.count, 64))]
            h_p, w_p = fs.h_p, fs.w_p
        grid = PatchGrid(h_p, w_p)
        g = build_knn_graph(grid, graph_cfg[0], graph_cfg[1])
        L = laplacian(g)
        report.save_graph_edges(out_dir / "graph.csv", g)

        # omitted variable-mass term
        ratios = []
        r0 = None
        for x, _ in data:
            traj = rollout(x, model, L, rollout_cfg)
            if r0 is None:
                r0 = omitted_term_ratio(traj.states[0], model, L, rollout_cfg)
            for state in traj.states[1:]:
                ratios.append(omitted_term_ratio(state, model, L, rollout_cfg))
        print(f"[ratio] step 0: {r0} (momentum starts at zero)")
        finite = [r for r in ratios if math.isfinite(r)]
        if finite:
            print(f"[ratio] steps >= 1: median {np.median(finite):.3e}, "
                  f"max {max(finite):.3e} over {len(finite)} measurements")

        # solver comparison
        rows = bench.solver_comparison(model, data, L, rollout_cfg)
        report.save_solver_table(out_dir / "solvers.csv", rows)
        t = rollout_cfg.steps
        print(f"[cost] grad evals per rollout: euler {t}, symplectic_euler {t}, rk4 {4 * t}")
        for row in rows:
            print(f"[solver] {row['integrator']:<16} auc {row['auc']:.4f} "
                  f"grad_evals {row['grad_evals']:>6} wall {row['wall_time_s']:.3f}s "
                  f"drift {row['max_drift']:.3e}")

        # landscape slice around the first sample
        rows_ls, _, _ = landscape_slice(data[0][0], model, L, extent=2.0,
                                        resolution=21, seed=args.seed)
        report.save_landscape(out_dir / "landscape.csv", rows_ls, out_dir / "landscape.png")
        rough = roughness_map(data[0][0], L)
        report.save_roughness(out_dir / "roughness.csv", rough, h_p, w_p,
                              out_dir / "roughness.png")
        print(f"wrote {out_dir / 'landscape.csv'}, {out_dir / 'roughness.csv'}, "
              f"{out_dir / 'graph.csv'}, {out_dir / 'solvers.csv'}")
    else:
        # analytic-only mode: oscillator drift ordering plus an analytic slice
        drifts = {}
        for name in ("euler", "symplectic_euler", "rk4"):
            osc = integrate(Quadratic(1.0, np.zeros((1, 1))),
                            PhysState(np.ones((1, 1)), np.zeros((1, 1))),
                            steps=1000, eta=0.1, integrator=name)
            h = np.array([float(v) for v in osc.hamiltonian])
            drifts[name] = float(np.max(np.abs(h - h[0])))
            print(f"[drift] {name:<16} max |H_t - H_0| = {drifts[name]:.3e} "
                  f"(grad evals {osc.grad_evals})")
        if not drifts["euler"] > 10 * drifts["symplectic_euler"]:
            failures += 1
            print("[drift] FAIL: euler drift not > 10x symplectic drift")
        pot = Quadratic(1.0, np.zeros((2, 2)))
        rows_ls, _, _ = slice_grid(np.zeros((2, 2)), pot.value, extent=2.0,
                                   resolution=21, seed=args.seed)
        report.save_landscape(out_dir / "landscape.csv", rows_ls, out_dir / "landscape.png")
        g = build_knn_graph(PatchGrid(8, 8))
        report.save_graph_edges(out_dir / "graph.csv", g)
        print(f"wrote {out_dir / 'landscape.csv'} and {out_dir / 'graph.csv'}")

    if failures:
        raise CheckFailure(f"{failures} diagnostic check(s) failed")
    return EXIT_OK


def cmd_gradcheck(args):
    seeds = tuple(range(args.seeds))
    checks = certify_gradients(seeds=seeds, corrupt=args.corrupt, tol=args.tol)
    all_ok = True
    for chk in checks:
        status = "PASS" if chk.ok else "FAIL"
        print(f"{chk.group:<12} max rel err {chk.max_rel_err:.3e}  {status}")
        all_ok &= chk.ok
    if not all_ok:
        bad = ", ".join(c.group for c in checks if not c.ok)
        raise CheckFailure(f"gradient certification failed for: {bad}")
    print(f"all {len(checks)} parameter groups certified at tol {args.tol:g} "
          f"over {args.seeds} seed(s)")
    return EXIT_OK


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "rollout": cmd_rollout,
    "diagnose": cmd_diagnose,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (UsageError, ConfigError, GraphError, SynthConfigError, MetricError,
            fileio.FeatureFileError, fileio.CheckpointError, NumericFault,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
