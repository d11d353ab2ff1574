"""Command-line interface binding the pipeline together.

Exit codes: 0 success, 1 usage error, 2 data/processing error.  Every
subcommand is deterministic under --seed; --config points at a key=value
file overriding the defaults in config.Settings.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("sharpcloud")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sharpcloud",
                     description="Edge-aware point cloud consolidation")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--config", type=Path, default=None,
                       help="key=value settings file overriding defaults")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("scan", help="virtually scan a mesh into a noisy point cloud")
    p.add_argument("--mesh", type=Path, required=True, help="input OBJ mesh")
    p.add_argument("--edges", type=Path, default=None, help="edge annotation file")
    p.add_argument("--nq", type=int, default=None, help="depth quantization levels")
    p.add_argument("--out", type=Path, required=True, help="output PLY cloud")
    common(p)

    p = sub.add_parser("patches", help="extract a training patch dataset from a scan")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--edges", type=Path, required=True)
    p.add_argument("--cloud", type=Path, required=True, help="scanned PLY (normalized mesh frame)")
    p.add_argument("--count", type=int, default=None, help="number of patch centroids")
    p.add_argument("--out", type=Path, required=True, help="output patch dataset")
    common(p)

    p = sub.add_parser("train", help="train the consolidation network on patch datasets")
    p.add_argument("--patches", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    common(p)

    p = sub.add_parser("consolidate", help="densify a point cloud with a trained network")
    p.add_argument("--cloud", type=Path, required=True)
    p.add_argument("--params", type=Path, required=True, help="trained checkpoint")
    p.add_argument("--out", type=Path, required=True)
    common(p)

    p = sub.add_parser("refine", help="RANSAC/PCA cleanup of a consolidated cloud")
    p.add_argument("--cloud", type=Path, required=True, help="PLY with is_edge flags")
    p.add_argument("--out", type=Path, required=True)
    common(p)

    p = sub.add_parser("eval", help="error statistics, histograms, and figures")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--edges", type=Path, required=True)
    p.add_argument("--points", type=Path, default=None, help="PLY cloud to evaluate")
    p.add_argument("--sweep", action="store_true",
                   help="run the full quantization-noise sweep (needs --params)")
    p.add_argument("--params", type=Path, default=None)
    p.add_argument("--nq-values", type=int, nargs="+", default=[120, 80, 50])
    p.add_argument("--report", type=Path, required=True, help="report output directory")
    p.add_argument("--label", default="cloud")
    common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    common(p)
    return parser


def _load_mesh_frame(args, settings):
    """Read mesh (+ optional edges) and normalize both into the scan frame."""
    from .formats import read_edges, read_obj
    from .scanner import normalize_mesh

    mesh = read_obj(args.mesh)
    edges = read_edges(args.edges) if getattr(args, "edges", None) else None
    mesh, edges, transform = normalize_mesh(mesh, edges)
    if edges is None:
        edges = np.zeros((0, 2, 3))
    return mesh, edges, transform


def cmd_scan(args, settings):
    from .formats import write_ply
    from .scanner import virtual_scan

    mesh, _, _ = _load_mesh_frame(args, settings)
    cloud = virtual_scan(mesh, settings.scan_config(n_q=args.nq, seed=args.seed))
    write_ply(args.out, cloud)
    log.info("scanned %d points -> %s", len(cloud), args.out)
    return 0


def cmd_patches(args, settings):
    from .formats import read_ply, write_patch_dataset
    from .patches import (PatchError, associate_ground_truth, build_knn_graph,
                          extract_patch, select_training_centroids)

    mesh, edges, _ = _load_mesh_frame(args, settings)
    cloud = read_ply(args.cloud)
    count = args.count if args.count is not None else settings.num_centroids
    rng = np.random.default_rng(args.seed)
    graph = build_knn_graph(cloud, k=settings.knn_k)
    centroids = select_training_centroids(cloud, m=count, rng=rng)
    patches = []
    for c in centroids:
        try:
            patch = extract_patch(cloud, graph, int(c),
                                  dijkstra_size=settings.dijkstra_size,
                                  sample_size=settings.n_hat, rng=rng)
            patches.append(associate_ground_truth(patch, mesh, edges,
                                                  margin=settings.gt_margin))
        except PatchError as exc:
            log.warning("skipping centroid %d: %s", c, exc)
    if not patches:
        raise PatchError("no usable patches extracted")
    write_patch_dataset(args.out, patches, mesh_id=str(args.mesh))
    log.info("wrote %d patches -> %s", len(patches), args.out)
    return 0


def cmd_train(args, settings):
    from .formats import read_patch_dataset
    from .network import init_params, load_checkpoint, save_checkpoint
    from .pipeline import adam_from_aux, train
    from .report import save_loss_curve, write_training_log

    dataset = []
    for path in args.patches:
        patches, _ = read_patch_dataset(path)
        dataset.extend(patches)
    args.out.mkdir(parents=True, exist_ok=True)
    arch = settings.architecture()
    adam = None
    if args.resume is not None:
        params, extra, aux = load_checkpoint(args.resume, expected_arch=arch)
        adam = adam_from_aux(params, aux, extra.get("adam_step", 0))
        log.info("resuming from %s at optimizer step %d", args.resume, adam.step)
    else:
        params = init_params(arch, seed=args.seed)
    cfg = settings.train_config(seed=args.seed)
    params, history, adam = train(dataset, params, cfg, checkpoint_dir=args.out, adam=adam)
    save_checkpoint(args.out / "params_final.npz", params,
                    extra={"epochs": cfg.epochs, "steps": len(history),
                           "adam_step": adam.step},
                    aux={**{f"m/{k}": v for k, v in adam.m.items()},
                         **{f"v/{k}": v for k, v in adam.v.items()}})
    write_training_log(args.out / "training_log.csv", history)
    save_loss_curve(args.out / "loss_curve.png", history)
    log.info("final joint loss %.6f after %d steps", history[-1].joint, len(history))
    return 0


def cmd_consolidate(args, settings):
    from .formats import read_ply, write_ply
    from .network import load_checkpoint
    from .pipeline import consolidate

    cloud = read_ply(args.cloud)
    params, _, _ = load_checkpoint(args.params)
    out = consolidate(cloud, params, settings.consolidate_config(seed=args.seed))
    write_ply(args.out, out)
    log.info("consolidated %d -> %d points (%d edge-flagged)",
             len(cloud), len(out), int(out.is_edge.sum()))
    return 0


def cmd_refine(args, settings):
    from .formats import read_ply, write_ply
    from .refine import refine

    cloud = read_ply(args.cloud)
    out = refine(cloud, settings.refine_config(seed=args.seed))
    write_ply(args.out, out)
    log.info("refined %d -> %d points", len(cloud), len(out))
    return 0


def cmd_eval(args, settings):
    from .formats import read_ply
    from .metrics import (distance_histogram, edge_error_stats, noise_sweep_report,
                          surface_error_stats)
    from .report import (save_histogram_figure, write_histogram_csv,
                         write_stats_csv, write_sweep_report)
    from .geometry import edges_closest_points, mesh_closest_points

    mesh, edges, _ = _load_mesh_frame(args, settings)
    args.report.mkdir(parents=True, exist_ok=True)
    hist_range = (0.0, settings.hist_range_max)

    if args.sweep:
        if args.params is None:
            sys.stderr.write("error: --sweep requires --params\n")
            return 1
        from .network import load_checkpoint
        params, _, _ = load_checkpoint(args.params)
        rows = noise_sweep_report(mesh, edges, params,
                                  n_q_values=args.nq_values,
                                  scan_cfg=settings.scan_config(seed=args.seed),
                                  consolidate_cfg=settings.consolidate_config(seed=args.seed),
                                  hist_bins=settings.hist_bins, hist_range=hist_range)
        write_sweep_report(args.report, rows)
        log.info("sweep report -> %s", args.report)
        return 0

    if args.points is None:
        sys.stderr.write("error: provide --points (or --sweep with --params)\n")
        return 1
    cloud = read_ply(args.points)
    surf = surface_error_stats(cloud.points, mesh)
    edge = edge_error_stats(cloud.points, edges) if len(edges) else None
    write_stats_csv(args.report / "stats.csv",
                    [(args.label, "eval", len(cloud), surf, edge)])
    d_surf, _, _ = mesh_closest_points(cloud.points, mesh.triangles)
    entries = []
    counts, bin_edges = distance_histogram(d_surf, settings.hist_bins, hist_range)
    entries.append((args.label, "surface", counts, bin_edges))
    figure_entries = [("surface", counts, bin_edges)]
    if len(edges):
        d_edge, _, _ = edges_closest_points(cloud.points, edges)
        e_counts, _ = distance_histogram(d_edge, settings.hist_bins, hist_range)
        entries.append((args.label, "edge", e_counts, bin_edges))
        figure_entries.append(("edge", e_counts, bin_edges))
    write_histogram_csv(args.report / "histograms.csv", entries)
    save_histogram_figure(args.report / "histograms.png", figure_entries,
                          title=f"{args.label}: distance distributions")
    log.info("surface mean %.3e rms %.3e -> %s", surf.mean, surf.rms, args.report)
    return 0


def cmd_gradcheck(args, settings):
    from .gradcheck import run_suite

    report, worst = run_suite(seed=args.seed)
    for name in sorted(report):
        print(f"{name:32s} {report[name]:.3e}")
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-3 else 2


_COMMANDS = {
    "scan": cmd_scan,
    "patches": cmd_patches,
    "train": cmd_train,
    "consolidate": cmd_consolidate,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    from .config import ConfigError, load_settings
    try:
        settings = load_settings(args.config)
        return _COMMANDS[args.command](args, settings)
    except SystemExit:
        raise
    except (ConfigError, OSError) as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
