"""Command-line pipeline: synth, train, score, generate, geodesic, transport, eval.

Every command reads CSV/JSON artifacts produced by earlier stages, writes
its outputs plus a config echo into an output directory, and never mutates
its inputs. Exit codes: 0 success, 1 runtime failure, 2 usage error.
Default output directory comes from the GEOWARP_RUNS environment variable
(falling back to ./runs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import manifolds as mf
from .autoencoder import DistanceMatchingAutoencoder, TrainConfig, save_history, train_autoencoder
from .errors import GeowarpError
from .evaluation import demap, density_volume_correlation, geodesic_length_mse
from .geodesics import GeodesicConfig, curve_energy, curve_length, fit_geodesic, max_score_on_curve
from .langevin import GenerationConfig, generate
from .pullback import export_metric_csv
from .scorers import (
    DiscriminatorConfig,
    GpVarianceScorer,
    WarpedEncoder,
    load_scorer,
    train_discriminator,
)
from .transport import TransportConfig, empirical_wasserstein1, integrate_flow, train_transport

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    base = args.out or os.environ.get("GEOWARP_RUNS", "runs")
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(out: Path, command: str, payload: dict) -> None:
    doc = {"command": command, "version": __version__, **payload}
    (out / f"{command}_config.json").write_text(json.dumps(doc, indent=2))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    return doc


def _merge_config(cls, file_doc: dict, overrides: dict):
    merged = dict(file_doc)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    valid = set(cls.__dataclass_fields__)
    unknown = set(merged) - valid
    if unknown:
        raise UsageError(f"unknown config fields: {sorted(unknown)}")
    if "hidden" in merged and isinstance(merged["hidden"], list):
        merged["hidden"] = tuple(merged["hidden"])
    return cls(**merged)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    if args.kind not in mf.KINDS:
        raise UsageError(
            f"unknown kind {args.kind!r}; valid kinds: {', '.join(mf.KINDS)}"
        )
    if args.sampler == "imbalanced":
        sampler = mf.imbalanced_sampler()
    elif args.sampler == "gaussian":
        sampler = mf.GaussianSampler(
            mean=tuple(args.mean), cov=args.cov, bounds=mf.default_bounds(args.kind)
        )
    else:
        sampler = mf.UniformSampler(mf.default_bounds(args.kind))
    cloud = mf.sample_manifold(args.kind, args.n, sampler, seed=args.seed)
    if args.noise_sigma > 0 or args.target_dim:
        cloud = mf.perturb(
            cloud,
            args.noise_sigma,
            target_dim=args.target_dim or cloud.dim,
            seed=args.seed + 1,
            rotate=bool(args.target_dim),
        )
    out = _out_dir(args)
    cloud.save(out / "points.csv")
    if args.distances:
        dm = mf.graph_distances(cloud, k=args.k)
        dm.save(out / "distances.csv")
    if args.pairs > 0:
        rng = np.random.default_rng(args.seed + 2)
        idx = np.stack(
            [rng.choice(cloud.n, size=2, replace=False) for _ in range(args.pairs)]
        )
        np.savetxt(out / "pairs.csv", idx, delimiter=",", fmt="%d", header="i,j", comments="")
    _echo_config(out, "synth", vars_of(args))
    return 0


def cmd_train(args) -> int:
    cloud = mf.PointCloud.load(args.data)
    dm = mf.DistanceMatrix.load(args.distances)
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "lambda1": args.lambda1,
        "lambda2": args.lambda2,
        "zeta": args.zeta,
        "patience": args.patience,
        "seed": args.seed,
        "d_latent": args.d_latent,
    }
    config = _merge_config(TrainConfig, _load_config_file(args.config), overrides)
    model, history = train_autoencoder(cloud, dm, config)
    out = _out_dir(args)
    model.save(out / "gae.json")
    save_history(history, out / "history.csv")
    _echo_config(out, "train", {"args": vars_of(args), "config": config.to_dict()})
    return 0


def cmd_score(args) -> int:
    cloud = mf.PointCloud.load(args.data)
    out = _out_dir(args)
    if args.method == "gp":
        scorer = GpVarianceScorer.from_data(
            cloud,
            sigma=args.sigma,
            sigma_n2=args.sigma_n2,
            max_points=args.max_points,
            seed=args.seed,
        )
        scorer.save(out / "scorer_gp.json")
    else:
        config = _merge_config(
            DiscriminatorConfig,
            _load_config_file(args.config),
            {"epochs": args.epochs, "seed": args.seed},
        )
        scorer, _ = train_discriminator(cloud, c=args.c, config=config)
        scorer.save(out / "scorer_disc.json")
    _echo_config(out, "score", vars_of(args))
    return 0


def cmd_generate(args) -> int:
    model = DistanceMatchingAutoencoder.load(args.gae)
    model.encoder.freeze()
    scorer = load_scorer(args.scorer)
    if not isinstance(scorer, GpVarianceScorer):
        raise UsageError("generation requires a gp scorer checkpoint")
    cloud = mf.PointCloud.load(args.data)
    config = GenerationConfig(
        lam=args.lam,
        eta=args.eta,
        n_steps=args.n_steps,
        eps=args.eps,
        n_samples=args.n_samples,
        seed=args.seed,
        init=args.init,
        collect_last=args.collect_last,
        collect_stride=args.collect_stride,
    )
    d = args.intrinsic_dim or model.d_latent
    gen, diagnostics = generate(model.encoder_map, scorer, d, config, cloud)
    out = _out_dir(args)
    gen.save(out / "generated.csv")
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2))
    _echo_config(out, "generate", vars_of(args))
    return 0


def _warped_from_args(args):
    model = DistanceMatchingAutoencoder.load(args.gae)
    model.encoder.freeze()
    model.decoder.freeze()
    scorer = load_scorer(args.scorer)
    return model, WarpedEncoder(model.encoder_map, scorer, beta=args.beta)


def cmd_geodesic(args) -> int:
    model, warped = _warped_from_args(args)
    cloud = mf.PointCloud.load(args.data)
    pairs = np.loadtxt(args.pairs, delimiter=",", skiprows=1, dtype=int, ndmin=2)
    config = GeodesicConfig(
        n_segments=args.n_segments,
        steps=args.steps,
        lr=args.lr,
        seed=args.seed,
        eps=args.eps,
    )
    out = _out_dir(args)
    summary = []
    for row, (i, j) in enumerate(pairs):
        curve, history = fit_geodesic(
            cloud.points[i], cloud.points[j], warped, config
        )
        pts = curve.points()
        grid = curve.grid()
        dim = pts.shape[1]
        header = "t," + ",".join(f"x{k}" for k in range(dim))
        np.savetxt(
            out / f"geodesic_{row:03d}.csv",
            np.hstack([grid[:, None], pts]),
            delimiter=",",
            header=header,
            comments="",
            fmt="%.17g",
        )
        summary.append(
            {
                "pair": [int(i), int(j)],
                "length": curve_length(curve, warped),
                "energy": curve_energy(curve, warped),
                "max_s_on_curve": max_score_on_curve(curve, warped.scorer),
            }
        )
    (out / "geodesics.json").write_text(json.dumps(summary, indent=2))
    _echo_config(out, "geodesic", vars_of(args))
    return 0


def cmd_transport(args) -> int:
    _, warped = _warped_from_args(args)
    source = mf.PointCloud.load(args.source)
    target = mf.PointCloud.load(args.target)
    config = TransportConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        n_segments=args.n_segments,
        seed=args.seed,
    )
    flow, curves, history = train_transport(source, target, warped, config)
    trajectories = integrate_flow(flow, source.points, n_steps=args.integration_steps)
    out = _out_dir(args)
    dim = source.dim
    t_grid = np.linspace(0.0, 1.0, args.integration_steps + 1)
    rows = []
    for traj_id in range(trajectories.shape[0]):
        for k, t in enumerate(t_grid):
            rows.append([traj_id, t, *trajectories[traj_id, k]])
    header = "trajectory_id,t," + ",".join(f"x{k}" for k in range(dim))
    np.savetxt(out / "trajectories.csv", np.asarray(rows), delimiter=",",
               header=header, comments="", fmt="%.17g")
    endpoints = trajectories[:, -1, :]
    s_max = [
        float(np.max(warped.scorer.score(trajectories[i])))
        for i in range(trajectories.shape[0])
    ]
    metrics = {
        "final_W1": empirical_wasserstein1(endpoints, target.points, seed=config.seed),
        "mean_max_s_on_trajectory": float(np.mean(s_max)),
        "final_loss": history[-1]["loss"] if history else None,
    }
    (out / "transport_metrics.json").write_text(json.dumps(metrics, indent=2))
    _echo_config(out, "transport", vars_of(args))
    return 0


def cmd_eval(args) -> int:
    model = DistanceMatchingAutoencoder.load(args.gae)
    cloud = mf.PointCloud.load(args.data)
    if cloud.dim != model.ambient_dim:
        raise GeowarpError(
            f"dataset dimension {cloud.dim} does not match encoder input "
            f"{model.ambient_dim}"
        )
    metrics: dict = {"seed": args.seed}
    if args.distances:
        dm = mf.DistanceMatrix.load(args.distances)
        metrics["demap"] = demap(model.encoder_map, cloud, dm)
    if args.generated and args.kind:
        gen = mf.PointCloud.load(args.generated)
        r, r2 = density_volume_correlation(gen, args.kind)
        metrics["volume_R"] = r
        metrics["volume_R2"] = r2
    if args.pred_lengths and args.oracle_lengths:
        pred = np.loadtxt(args.pred_lengths, delimiter=",", ndmin=1)
        oracle = np.loadtxt(args.oracle_lengths, delimiter=",", ndmin=1)
        metrics["length_mse"] = geodesic_length_mse(pred, oracle)
    out = _out_dir(args)
    if args.metric_export:
        export_metric_csv(
            model.encoder_map, cloud.points, args.intrinsic_dim or model.d_latent,
            out / "metric_export.csv",
        )
    metrics["config"] = vars_of(args)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    _echo_config(out, "eval", vars_of(args))
    return 0


def vars_of(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geowarp",
        description="Metric-aware generation, geodesics, and transport on learned manifolds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic manifold dataset")
    p.add_argument("--kind", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=["uniform", "gaussian", "imbalanced"], default="uniform")
    p.add_argument("--mean", type=float, nargs=2, default=(1.0, 1.0))
    p.add_argument("--cov", type=float, default=2.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--target-dim", type=int, default=0)
    p.add_argument("--distances", action="store_true")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--pairs", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the distance-matching autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--distances", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--d-latent", type=int, dest="d_latent")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="fit an off-manifold deviation scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["discriminator", "gp"], default="gp")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--c", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--sigma-n2", type=float, dest="sigma_n2", default=1e-4)
    p.add_argument("--max-points", type=int, dest="max_points", default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("generate", help="volume-guided sampling on the manifold")
    p.add_argument("--gae", required=True)
    p.add_argument("--scorer", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lam", type=float, default=10.0)
    p.add_argument("--eta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--n-steps", type=int, dest="n_steps", default=2000)
    p.add_argument("--n-samples", type=int, dest="n_samples", default=500)
    p.add_argument("--init", choices=["from_data", "gaussian"], default="from_data")
    p.add_argument("--collect-last", type=int, dest="collect_last", default=1)
    p.add_argument("--collect-stride", type=int, dest="collect_stride", default=100)
    p.add_argument("--intrinsic-dim", type=int, dest="intrinsic_dim", default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("geodesic", help="fit geodesics between endpoint pairs")
    p.add_argument("--gae", required=True)
    p.add_argument("--scorer", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--n-segments", type=int, dest="n_segments", default=30)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--eps", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_geodesic)

    p = sub.add_parser("transport", help="population transport along geodesics")
    p.add_argument("--gae", required=True)
    p.add_argument("--scorer", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, dest="batch_size", default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--n-segments", type=int, dest="n_segments", default=30)
    p.add_argument("--integration-steps", type=int, dest="integration_steps", default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("eval", help="embedding/generation metrics")
    p.add_argument("--gae", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--distances")
    p.add_argument("--generated")
    p.add_argument("--kind")
    p.add_argument("--pred-lengths", dest="pred_lengths")
    p.add_argument("--oracle-lengths", dest="oracle_lengths")
    p.add_argument("--metric-export", action="store_true", dest="metric_export")
    p.add_argument("--intrinsic-dim", type=int, dest="intrinsic_dim", default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as err:
        print(f"error: missing input file: {err}", file=sys.stderr)
        return RUNTIME_ERROR
    except GeowarpError as err:
        print(f"error: {err}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
