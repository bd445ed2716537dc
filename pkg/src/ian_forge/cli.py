"""``ian-forge`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or
config), 3 invariant violation (negative Jensen gap, failed gradient
check, KNN mismatch).
All randomness comes from ``--seed`` or the config file.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as datamod
from .cascade import IanPipeline, TraversalPlan, ian_sample, manifold_traverse
from .checks import GAP_TOL, GRAD_TOL, bound_gaps, run_grad_checks
from .config import Config, ConfigError, apply_overrides, load_config
from .knn_index import FeatureSet, brute_force_knn_batch, build_balltree, knn_query_batch
from .metrics import config_hash, evaluate
from .models import NetworkParams, comparator_features, generator_forward, make_comparator
from .numcore import NonFiniteError, Rng
from .training import (
    LOG_COLUMNS,
    CycleNets,
    DatasetSampler,
    GanNets,
    StepReport,
    fine_tune_translator,
    make_cycle,
    pretrain_comparator,
    train_loop,
    train_translator,
)

log = logging.getLogger("ian_forge")


class InvariantViolation(RuntimeError):
    pass


def thread_count() -> int:
    """Worker cap from IAN_FORGE_THREADS, else the available CPUs."""
    raw = os.environ.get("IAN_FORGE_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"IAN_FORGE_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError("IAN_FORGE_THREADS must be >= 1")
        return n
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# ---------------------------------------------------------------- helpers

def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    apply_overrides(cfg, getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
    return cfg


def _dataset(path: str, what: str) -> np.ndarray:
    if not path:
        raise ConfigError(f"no {what} data set given (set [data] {what} or pass --{what})")
    return datamod.load_dataset(path)


def _comparator(cfg: Config, dim: int) -> NetworkParams:
    m = cfg["model"]
    if m["comparator"]:
        return ckpt.load_network(m["comparator"], "C", trainable=False)
    return make_comparator(dim, m["comparator_seed"], m["s_lo"], m["s_hi"], gain=m["comparator_gain"])


def _write_log(path, rows: list[dict]) -> None:
    datamod.write_rows_csv(path, rows, LOG_COLUMNS)


def _report_row(step: int, r: StepReport) -> dict:
    return {"step": step, "loss_d": r.loss_d, "loss_g": r.loss_g, "loss_knn_hi": r.loss_knn_hi,
            "loss_knn_lo": r.loss_knn_lo, "loss_cyc": r.loss_cyc, "utilization": r.utilization}


def _save_cycle(path, nets: CycleNets) -> None:
    ckpt.save_networks(path, nets.A, nets.B, nets.DX, nets.DY)


def _load_cycle(path) -> CycleNets:
    t = ckpt.read_tensors(path)
    return CycleNets(*(ckpt.network_from_tensors(t, n) for n in ("A", "B", "DX", "DY")))


def _latent(rng: Rng, n: int, dim: int) -> np.ndarray:
    return rng.uniform((n, dim), -1.0, 1.0)


def _stored_comparator(*paths: str) -> NetworkParams | None:
    """The comparator saved alongside a generator in any of ``paths``."""
    for path in paths:
        if Path(path).suffix.lower() == ".kgan1":
            tensors = ckpt.read_tensors(path)
            if "C/.kind" in tensors:
                return ckpt.network_from_tensors(tensors, "C", trainable=False)
    return None


def _load_features(path: str, comparator: NetworkParams | None, layer: str, n: int, seed: int):
    """Features from a KGAN1 ``features`` tensor, a generator checkpoint or a data set."""
    p = Path(path)
    if p.suffix.lower() == ".kgan1":
        tensors = ckpt.read_tensors(p)
        if "features" in tensors:
            return tensors["features"]
        if "G/.kind" not in tensors:
            raise ckpt.CheckpointError(f"{p}: neither a 'features' tensor nor a generator")
        G = ckpt.network_from_tensors(tensors, "G", trainable=False)
        x = generator_forward(G, _latent(Rng(seed), n, G.in_dim)).data
    else:
        x = datamod.load_dataset(p)
    if comparator is None:
        return x
    feats = comparator_features(comparator, x)
    return (feats.f_hi if layer == "hi" else feats.f_lo).data


# --------------------------------------------------------------- commands

def cmd_make_data(args) -> int:
    out = datamod.make_data(args.kind, args.n, args.seed, args.out)
    print(f"wrote {args.n} {args.kind} samples to {out}")
    return 0


def cmd_pretrain_comparator(args) -> int:
    cfg = _config(args)
    x = _dataset(args.x or cfg["data"]["x"], "x")
    y = _dataset(args.y or cfg["data"]["y"], "y")
    tc = cfg.train_config(x.shape[1])
    C = pretrain_comparator(tc, [x, y], steps=args.steps, seed=args.seed)
    ckpt.save_networks(args.out, C)
    print(f"comparator/proxy classifier written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    x = _dataset(args.x or cfg["data"]["x"], "x")
    y_path = args.y or cfg["data"]["y"]
    y = datamod.load_dataset(y_path) if y_path else None
    tc = cfg.train_config(x.shape[1])
    tc.threads = thread_count()
    C = _comparator(cfg, x.shape[1]) if tc.mu_hi > 0 or tc.mu_lo > 0 or tc.knn_mode == "random" else None
    every = args.checkpoint_every

    def on_step(step: int, nets: GanNets, report: StepReport) -> None:
        if every and (step + 1) % every == 0 and step + 1 < tc.steps:
            _save_gan(args.out, nets)

    result = train_loop(tc, x, y, comparator=C, on_step=on_step)
    _save_gan(args.out, result.nets)
    if args.log:
        _write_log(args.log, result.log)
    if result.targets is not None:
        print(f"utilization card(chi)/M = {result.utilization:.4f}")
    print(f"checkpoint written to {args.out}")
    return 0


def _save_gan(path, nets: GanNets) -> None:
    extra = [nets.C] if nets.C is not None else []
    ckpt.save_networks(path, nets.G, nets.D, *extra)


def cmd_train_translator(args) -> int:
    cfg = _config(args)
    x = _dataset(args.x or cfg["data"]["x"], "x")
    y = _dataset(args.y or cfg["data"]["y"], "y")
    tc = cfg.train_config(x.shape[1])
    nets = make_cycle(tc, x.shape[1], y.shape[1])
    rows: list[dict] = []
    train_translator(tc, nets, DatasetSampler(x), y, on_step=lambda s, r: rows.append(_report_row(s, r)))
    _save_cycle(args.out, nets)
    if args.log:
        _write_log(args.log, rows)
    print(f"translators written to {args.out}")
    return 0


def cmd_fine_tune(args) -> int:
    cfg = _config(args)
    y = _dataset(args.y or cfg["data"]["y"], "y")
    G = ckpt.load_network(args.sampler, "G", trainable=False)
    nets = _load_cycle(args.translator)
    if G.out_dim != nets.A.in_dim:
        raise ckpt.CheckpointError(
            f"sampler emits dimension {G.out_dim}, translator expects {nets.A.in_dim}")
    tc = cfg.train_config(G.out_dim)
    steps = tc.steps if args.steps is None else args.steps
    rows: list[dict] = []
    fine_tune_translator(tc, nets, G, y, steps, Rng(tc.seed),
                         on_step=lambda s, r: rows.append(_report_row(s, r)))
    _save_cycle(args.out, nets)
    if args.log:
        _write_log(args.log, rows)
    print(f"fine-tuned translators written to {args.out}")
    return 0


def cmd_sample(args) -> int:
    G = ckpt.load_network(args.checkpoint, "G", trainable=False)
    x = generator_forward(G, _latent(Rng(args.seed), args.n, G.in_dim)).data
    datamod.save_samples(args.out, x)
    if args.features_out:
        tensors = ckpt.read_tensors(args.checkpoint)
        C = (ckpt.network_from_tensors(tensors, "C", trainable=False) if "C/.kind" in tensors
             else make_comparator(G.out_dim, 1234))
        feats = comparator_features(C, x)
        ckpt.write_tensors(args.features_out, {"features": (feats.f_hi if args.layer == "hi" else feats.f_lo).data})
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_cascade(args) -> int:
    G = ckpt.load_network(args.sampler, "G", trainable=False)
    A = ckpt.load_network(args.translator, "A", trainable=False)
    pipe = IanPipeline(G, A, {"sampler": args.sampler, "translator": args.translator})
    out = ian_sample(pipe, _latent(Rng(args.seed), args.n, pipe.latent_dim))
    datamod.save_samples(args.out, out)
    print(f"wrote {args.n} cascade samples to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    ev = cfg["eval"]
    x = _dataset(args.x or cfg["data"]["x"], "x")
    y = _dataset(args.y or cfg["data"]["y"], "y")
    samples = datamod.load_dataset(args.samples)
    clf = ckpt.load_network(args.classifier, "C", trainable=False)
    report = evaluate(samples, x, y, clf, ev["class_x"], ev["class_y"], n_noise=ev["n_noise"],
                      seed=ev["seed"], cfg_hash=config_hash(cfg.to_ini()))
    row = report.row()
    if args.out:
        datamod.write_rows_csv(args.out, [row], list(row))
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return 0


def cmd_traverse(args) -> int:
    D = ckpt.load_network(args.disc, "D", trainable=False)
    data = datamod.load_dataset(args.data)
    for i in (args.a, args.b):
        if not 0 <= i < len(data):
            raise ValueError(f"index {i} outside the data set (size {len(data)})")
    translators = [ckpt.load_network(p, "A", trainable=False) for p in args.translator or []]
    grid = manifold_traverse(TraversalPlan(data[args.a], data[args.b], args.n, translators), D)
    if Path(args.out).suffix.lower() == ".pgm":
        if grid.shape[-1] != datamod.SIDE * datamod.SIDE:
            raise ValueError("PGM output needs 16x16 image data")
        datamod.write_pgm(args.out, datamod.montage(grid))
    else:
        rows = grid.reshape(-1, grid.shape[-1])
        datamod.write_points_csv(args.out, rows)
    print(f"traversal grid {grid.shape[0]}x{grid.shape[1]} written to {args.out}")
    return 0


def cmd_bound_check(args) -> int:
    if args.comparator:
        C = ckpt.load_network(args.comparator, "C", trainable=False)
    else:
        C = _stored_comparator(args.queries, args.features)
    feats = _load_features(args.features, C, args.layer, args.n, args.seed)
    queries = _load_features(args.queries, C, args.layer, args.n, args.seed)
    if feats.shape[1] != queries.shape[1]:
        raise ValueError(f"feature dimension {feats.shape[1]} != query dimension {queries.shape[1]} "
                         "(pass --comparator to map data sets into feature space)")
    gaps = bound_gaps(feats, queries, args.k)
    print(f"queries={len(gaps)} k={args.k} M={len(feats)} min_gap={gaps.min():.6g} mean_gap={gaps.mean():.6g}")
    if gaps.min() < GAP_TOL:
        raise InvariantViolation(f"negative Jensen gap {gaps.min():.6g}")
    return 0


def cmd_grad_check(args) -> int:
    results = run_grad_checks(args.seed)
    worst = 0.0
    for name, err in results:
        flag = "ok" if err < GRAD_TOL else "FAIL"
        print(f"{name:28s} rel_err={err:.3e} {flag}")
        worst = max(worst, err)
    if worst >= GRAD_TOL:
        raise InvariantViolation(f"gradient check failed: worst relative error {worst:.3e}")
    return 0


def clustered_points(rng: Rng, n: int, dim: int, n_clusters: int = 20, spread: float = 0.05):
    centers = rng.uniform((n_clusters, dim), -1.0, 1.0)
    return centers[rng.integers(n_clusters, n)] + rng.normal((n, dim), 0.0, spread)


def cmd_bench_knn(args) -> int:
    rng = Rng(args.seed)
    pts = clustered_points(rng, args.n, args.dim)
    queries = clustered_points(rng.spawn(1), args.queries, args.dim)
    fs = FeatureSet(pts)
    tree = build_balltree(fs, args.leaf_size)
    t0 = time.perf_counter()
    got = knn_query_batch(tree, queries, args.k, thread_count())
    t_tree = time.perf_counter() - t0
    t0 = time.perf_counter()
    want = brute_force_knn_batch(fs, queries, args.k)
    t_brute = time.perf_counter() - t0
    frac = tree.stats["distance_evals"] / tree.stats["queries"] / fs.M
    print(f"M={fs.M} dim={args.dim} queries={args.queries} k={args.k} leaf_size={args.leaf_size}")
    print(f"tree {t_tree:.3f}s brute {t_brute:.3f}s evals/query/M={frac:.4f}")
    if args.out:
        datamod.write_rows_csv(args.out, [{"M": fs.M, "dim": args.dim, "queries": args.queries, "k": args.k,
                                           "leaf_size": args.leaf_size, "evals_fraction": frac}],
                               ["M", "dim", "queries", "k", "leaf_size", "evals_fraction"])
    if got != want:
        raise InvariantViolation("ball-tree results differ from brute force")
    return 0


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ian-forge", description="K-GAN and IAN cascade desk lab")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def config_args(sp, seed_help="overrides [train] seed"):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int, help=seed_help)
        sp.add_argument("--x", help="overrides [data] x")
        sp.add_argument("--y", help="overrides [data] y")

    sp = sub.add_parser("make-data", help="generate a synthetic data set")
    sp.add_argument("--kind", required=True, choices=datamod.KINDS)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_make_data)

    sp = sub.add_parser("pretrain-comparator", help="train C with a class head on X vs Y")
    config_args(sp, "comparator seed (default: [model] comparator_seed)")
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_pretrain_comparator)

    sp = sub.add_parser("train", help="train a sampling GAN (vanilla, kgan, mx, perceptual)")
    config_args(sp)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--log", help="per-step CSV log")
    sp.add_argument("--checkpoint-every", type=int, default=0, help="intermediate checkpoint period")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("train-translator", help="train the cycle-consistent translators A, B")
    config_args(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    sp.set_defaults(fn=cmd_train_translator)

    sp = sub.add_parser("fine-tune", help="continue translator training on sampler outputs")
    config_args(sp)
    sp.add_argument("--sampler", required=True, help="checkpoint with G")
    sp.add_argument("--translator", required=True, help="checkpoint with A, B, DX, DY")
    sp.add_argument("--steps", type=int, help="overrides [train] steps")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    sp.set_defaults(fn=cmd_fine_tune)

    sp = sub.add_parser("sample", help="draw G(z)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help=".csv or .pgm")
    sp.add_argument("--features-out", help="also write comparator features as a KGAN1 file")
    sp.add_argument("--layer", choices=("hi", "lo"), default="hi")
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("cascade", help="draw A(G(z))")
    sp.add_argument("--sampler", required=True)
    sp.add_argument("--translator", required=True)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_cascade)

    sp = sub.add_parser("eval", help="proxy class scores and normalised NN error")
    config_args(sp, "unused; the [eval] seed applies")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--classifier", required=True, help="checkpoint from pretrain-comparator")
    sp.add_argument("--out", help="metrics CSV")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("traverse", help="decode convex codes between two examples")
    sp.add_argument("--disc", required=True, help="checkpoint with an autoencoder D")
    sp.add_argument("--data", required=True)
    sp.add_argument("--a", type=int, required=True, help="index of the first endpoint")
    sp.add_argument("--b", type=int, required=True, help="index of the second endpoint")
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--translator", action="append", help="translator checkpoint (repeatable)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_traverse)

    sp = sub.add_parser("bound-check", help="verify the KNN cross-entropy bound")
    sp.add_argument("--features", required=True, help="stored features: KGAN1 or data set")
    sp.add_argument("--queries", required=True, help="queries: KGAN1 features, G checkpoint or data set")
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--comparator", help="map data through this comparator checkpoint")
    sp.add_argument("--layer", choices=("hi", "lo"), default="hi")
    sp.add_argument("--n", type=int, default=256, help="queries drawn from a generator")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_bound_check)

    sp = sub.add_parser("grad-check", help="finite-difference gradient audit")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_grad_check)

    sp = sub.add_parser("bench-knn", help="ball tree vs brute force on clustered points")
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--dim", type=int, default=16)
    sp.add_argument("--queries", type=int, default=200)
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--leaf-size", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="CSV with the deterministic counters")
    sp.set_defaults(fn=cmd_bench_knn)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except InvariantViolation as exc:
        print(f"ian-forge: invariant violated: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"ian-forge {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ckpt.CheckpointError, ValueError, OSError, NonFiniteError) as exc:
        print(f"ian-forge {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
