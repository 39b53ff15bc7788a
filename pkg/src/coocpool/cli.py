"""Command-line surface for the co-occurrence retrieval pipeline.

Subcommands: ``aggregate`` (tensors -> descriptors), ``fit-whiten``,
``build-index``, ``eval`` (mAP with optional query expansion and
multiscale), ``bench`` (convolution vs. max-correlation timing),
``inspect`` (spatial-weight heatmaps, channel-vector correlations), and
``train`` (contrastive filter training).

Every command writes a ``manifest.json`` recording the resolved parameters
so a run can be reproduced bit-exactly (timings aside).  Exit codes:
0 success, 1 runtime failure, 2 usage error.  ``COOC_THREADS`` caps
file-level parallelism.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cooccurrence import (
    channel_cooc_vector,
    cooc_conv,
    cooc_correlation_matrix,
    full_offset_grid,
    load_filter,
    make_filter,
    save_filter,
    shih_cooc_tensor,
)
from .errors import CoocError
from .evaluation import load_groundtruth, mean_ap, write_ap_report
from .pooling import (
    bilinear_pool,
    channel_cooc_weights,
    compact_bilinear_pool,
    linear_weighted_pool,
    make_sketch_params,
    masked_tensor,
    spatial_cooc_weights,
    spatial_mask_center,
    spatial_mask_topdown,
    sum_pool,
    write_heatmap_csv,
    write_heatmap_pgm,
)
from .retrieval import alpha_qe, average_qe, build_index, load_index, query, save_index
from .tensors import l2norm, load_tensor, mean_activation, save_tensor
from .training import TrainConfig, load_pair_list, train
from .whitening import (
    apply_whitening,
    fit_whitening,
    load_whitening,
    multiscale_aggregate,
    save_whitening,
)


def _worker_count() -> int:
    env = os.environ.get("COOC_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _map_files(fn, items):
    workers = _worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_manifest(out_dir: Path, command: str, params: dict, inputs, outputs, timings) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "parameters": params,
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "timings": timings,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _public_params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _tensor_files(directory: Path) -> list[Path]:
    files = sorted(directory.glob("*.cooct"))
    if not files:
        raise CoocError(f"no .cooct files in {directory}")
    return files


def _spatial_mask(kind: str, m: int, n: int):
    if kind == "topdown":
        return spatial_mask_topdown(m, n)
    if kind == "center":
        return spatial_mask_center(m, n)
    return None


def _load_descriptor(path: Path) -> np.ndarray:
    return load_tensor(path).reshape(-1)


def _load_descriptor_set(directory: Path, multiscale: bool) -> dict[str, np.ndarray]:
    """Map id -> descriptor; with multiscale, files sharing a stem before
    ``@`` are fused by mean + renormalization."""
    files = _tensor_files(directory)
    if not multiscale:
        return {f.stem: _load_descriptor(f) for f in files}
    groups: dict[str, list[Path]] = {}
    for f in files:
        stem = f.stem.split("@", 1)[0]
        groups.setdefault(stem, []).append(f)
    return {
        stem: multiscale_aggregate([_load_descriptor(f) for f in sorted(members)])
        for stem, members in groups.items()
    }


# ----------------------------------------------------------------- aggregate


def cmd_aggregate(args) -> int:
    in_dir, out_dir = Path(args.input), Path(args.out)
    files = _tensor_files(in_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    filters: dict[int, object] = {}
    sketches: dict[int, object] = {}
    trained = load_filter(args.filter) if args.filter else None

    def filter_for(depth: int):
        if trained is not None:
            return trained
        if depth not in filters:
            filters[depth] = make_filter(depth, args.radius, args.diag)
        return filters[depth]

    def sketch_for(depth: int):
        if depth not in sketches:
            sketches[depth] = make_sketch_params(depth, args.sketch_dim, args.seed)
        return sketches[depth]

    def process(path: Path):
        tensor = load_tensor(path)
        mask = _spatial_mask(args.mask, tensor.shape[0], tensor.shape[1])
        if mask is not None:
            tensor = masked_tensor(tensor, mask)
        if args.pool == "ucrow":
            desc = sum_pool(tensor)
        else:
            cooc = cooc_conv(tensor, filter_for(tensor.shape[2]), mean_activation(tensor))
            if args.pool == "chco-sct":
                alpha = spatial_cooc_weights(cooc, args.a, args.b)
                beta = channel_cooc_weights(channel_cooc_vector(cooc), args.eps)
                desc = linear_weighted_pool(tensor, alpha, beta)
            elif args.pool == "bp":
                desc = bilinear_pool(tensor, cooc).reshape(-1)
            else:  # cbp
                desc = compact_bilinear_pool(tensor, cooc, sketch_for(tensor.shape[2]))
        out_path = out_dir / path.name
        save_tensor(l2norm(desc).reshape(1, 1, -1), out_path)
        return out_path

    outputs = []
    failures = []
    for path, result in zip(files, _map_files(lambda p: _attempt(process, p), files)):
        if isinstance(result, Exception):
            print(f"error: {path}: {result}", file=sys.stderr)
            failures.append(path)
        else:
            outputs.append(result)

    _write_manifest(
        out_dir,
        "aggregate",
        _public_params(args),
        files,
        outputs,
        {"wall_s": time.perf_counter() - started, "failed": len(failures)},
    )
    return 1 if failures else 0


def _attempt(fn, item):
    try:
        return fn(item)
    except Exception as exc:  # per-file isolation; the run continues
        return exc


# ---------------------------------------------------------------- whitening


def cmd_fit_whiten(args) -> int:
    started = time.perf_counter()
    files = _tensor_files(Path(args.input))
    descriptors = [_load_descriptor(f) for f in files]
    model = fit_whitening(descriptors, args.dim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_whitening(model, out)
    _write_manifest(
        out.parent,
        "fit-whiten",
        _public_params(args),
        files,
        [out],
        {"wall_s": time.perf_counter() - started},
    )
    print(f"whitening model: {model.input_dim} -> {model.out_dim} dims, {len(files)} samples")
    return 0


# -------------------------------------------------------------- build-index


def cmd_build_index(args) -> int:
    started = time.perf_counter()
    descriptors = _load_descriptor_set(Path(args.input), args.ms)
    model = load_whitening(args.whiten) if args.whiten else None
    entries = []
    for key in sorted(descriptors):
        vec = descriptors[key]
        entries.append((key, apply_whitening(model, vec) if model else vec))
    index = build_index(entries)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, out)
    _write_manifest(
        out.parent,
        "build-index",
        _public_params(args),
        [args.input],
        [out],
        {"wall_s": time.perf_counter() - started},
    )
    print(f"indexed {len(index)} descriptors of dim {index.dim}")
    return 0


# --------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    started = time.perf_counter()
    index = load_index(Path(args.index))
    ground_truth = load_groundtruth(Path(args.gt))
    queries = _load_descriptor_set(Path(args.queries), args.ms)
    model = load_whitening(args.whiten) if args.whiten else None

    alphaqe = None
    if args.alphaqe:
        n_str, _, alpha_str = args.alphaqe.partition(",")
        if not alpha_str:
            print("error: --alphaqe expects N,ALPHA", file=sys.stderr)
            return 2
        alphaqe = (int(n_str), float(alpha_str))

    def rank_for(gt):
        vec = queries.get(gt.query_id)
        if vec is None:
            vec = queries.get(gt.query_image)
        if vec is None:
            raise CoocError(f"no query descriptor for {gt.query_id} ({gt.query_image})")
        if model is not None:
            vec = apply_whitening(model, vec)
        vec = l2norm(vec)
        ranked = query(index, vec)
        if args.aqe:
            vec = average_qe(index, vec, ranked, args.aqe)
            ranked = query(index, vec)
        elif alphaqe:
            vec = alpha_qe(index, vec, ranked, alphaqe[0], alphaqe[1])
            ranked = query(index, vec)
        return [(key, dist) for key, dist in ranked if key != gt.query_image]

    rankings = _map_files(rank_for, ground_truth)
    scored = [(r, gt) for r, gt in zip(rankings, ground_truth) if gt.scoreable]
    result = mean_ap(scored)
    rows = [(gt.query_id, _ap_of(r, gt)) for r, gt in scored]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ap_report(rows, result, out_dir / "ap.csv")
    _write_manifest(
        out_dir,
        "eval",
        _public_params(args),
        [args.index, args.queries, args.gt],
        [out_dir / "ap.csv"],
        {"wall_s": time.perf_counter() - started},
    )
    print(f"mAP {result:.4f} over {len(rows)} queries")
    return 0


def _ap_of(ranked, gt):
    from .evaluation import average_precision

    return average_precision(ranked, gt)


# -------------------------------------------------------------------- bench


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise CoocError(f"bad shape {text!r}, expected MxNxD")
    m, n, d = (int(p) for p in parts)
    return m, n, d


def _time_call(fn, reps: int) -> float:
    best = []
    for _ in range(reps):
        started = time.perf_counter()
        fn()
        best.append(time.perf_counter() - started)
    return float(np.mean(best)) * 1000.0


def cmd_bench(args) -> int:
    started = time.perf_counter()
    rng = np.random.default_rng(args.seed)
    offsets = full_offset_grid(args.radius)
    report = []
    for text in args.shapes.split(","):
        m, n, d = _parse_shape(text.strip())
        tensor = rng.random((m, n, d))
        filt = make_filter(d, args.radius, 0.0)
        thr = mean_activation(tensor)
        conv_out = cooc_conv(tensor, filt, thr)
        shih_out = shih_cooc_tensor(tensor, offsets)
        conv_ms = _time_call(lambda: cooc_conv(tensor, filt, thr), args.reps)
        shih_ms = _time_call(lambda: shih_cooc_tensor(tensor, offsets), max(1, args.reps // 10))
        report.append(
            {
                "shape": f"{m}x{n}x{d}",
                "conv_ms": conv_ms,
                "shih_ms": shih_ms,
                "speedup": shih_ms / conv_ms if conv_ms > 0 else float("inf"),
                "fingerprint": {"conv_sum": float(conv_out.sum()), "shih_sum": float(shih_out.sum())},
            }
        )
        print(
            f"{m}x{n}x{d}: conv {conv_ms:.3f} ms, max-correlation {shih_ms:.3f} ms, "
            f"speedup {report[-1]['speedup']:.1f}x"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_manifest(
        out_dir,
        "bench",
        _public_params(args),
        [],
        [out_dir / "bench.json"],
        {"wall_s": time.perf_counter() - started},
    )
    return 0


# ------------------------------------------------------------------ inspect


def cmd_inspect(args) -> int:
    started = time.perf_counter()
    in_path = Path(args.input)
    files = _tensor_files(in_path) if in_path.is_dir() else [in_path]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    vectors = []
    names = []
    for path in files:
        tensor = load_tensor(path)
        filt = make_filter(tensor.shape[2], args.radius, 0.0)
        cooc = cooc_conv(tensor, filt, mean_activation(tensor))
        alpha = spatial_cooc_weights(cooc, args.a, args.b)
        csv_path = out_dir / f"{path.stem}_alpha.csv"
        pgm_path = out_dir / f"{path.stem}_alpha.pgm"
        write_heatmap_csv(alpha, csv_path)
        write_heatmap_pgm(alpha, pgm_path)
        outputs += [csv_path, pgm_path]
        vectors.append(channel_cooc_vector(cooc))
        names.append(path.stem)
    if len(vectors) >= 2:
        corr = cooc_correlation_matrix(vectors)
        corr_path = out_dir / "cooc_correlation.csv"
        with open(corr_path, "w") as fh:
            fh.write("," + ",".join(names) + "\n")
            for name, row in zip(names, corr):
                fh.write(name + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
        outputs.append(corr_path)
    _write_manifest(
        out_dir,
        "inspect",
        _public_params(args),
        files,
        outputs,
        {"wall_s": time.perf_counter() - started},
    )
    return 0


# -------------------------------------------------------------------- train


def cmd_train(args) -> int:
    started = time.perf_counter()
    pairs = load_pair_list(Path(args.pairs))
    cfg = TrainConfig(
        margin=args.tau,
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        val_fraction=args.val_frac,
    )
    result = train(pairs, cfg, radius=args.radius, sketch_dim=args.sketch_dim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_filter(result.filter, out)
    loss_path = out.with_suffix(".losses.csv")
    with open(loss_path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, (tr, vl) in enumerate(zip(result.train_losses, result.val_losses)):
            fh.write(f"{epoch},{tr:.8f},{vl:.8f}\n")
    _write_manifest(
        out.parent,
        "train",
        _public_params(args),
        [args.pairs],
        [out, loss_path],
        {"wall_s": time.perf_counter() - started},
    )
    print(f"trained {args.epochs} epochs; best epoch {result.best_epoch}; filter -> {out}")
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coocpool",
        description="Co-occurrence pooling, retrieval, and evaluation over activation tensors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    agg = sub.add_parser("aggregate", help="pool tensors into descriptor files")
    agg.add_argument("--input", required=True, help="directory of .cooct tensors")
    agg.add_argument("--out", required=True, help="output directory for descriptors")
    agg.add_argument("--pool", required=True, choices=["ucrow", "chco-sct", "bp", "cbp"])
    agg.add_argument("--mask", default="none", choices=["none", "topdown", "center"])
    agg.add_argument("--radius", type=int, default=4)
    agg.add_argument("--diag", type=float, default=0.0)
    agg.add_argument("--a", type=float, default=2.0)
    agg.add_argument("--b", type=float, default=2.0)
    agg.add_argument("--eps", type=float, default=1e-6)
    agg.add_argument("--sketch-dim", type=int, default=8192)
    agg.add_argument("--seed", type=int, default=0)
    agg.add_argument("--filter", default=None, help="trained COOF filter to use instead of the canonical one")
    agg.set_defaults(func=cmd_aggregate)

    fit = sub.add_parser("fit-whiten", help="fit PCA whitening on descriptors")
    fit.add_argument("--input", required=True, help="directory of descriptor .cooct files")
    fit.add_argument("--out", required=True, help="output .coow model path")
    fit.add_argument("--dim", type=int, required=True)
    fit.set_defaults(func=cmd_fit_whiten)

    build = sub.add_parser("build-index", help="build a descriptor index")
    build.add_argument("--input", required=True)
    build.add_argument("--out", required=True)
    build.add_argument("--whiten", default=None, help=".coow model to apply")
    build.add_argument("--ms", action="store_true", help="fuse multiscale descriptors by stem")
    build.set_defaults(func=cmd_build_index)

    ev = sub.add_parser("eval", help="rank queries and report mAP")
    ev.add_argument("--index", required=True)
    ev.add_argument("--queries", required=True, help="directory of query descriptors")
    ev.add_argument("--gt", required=True, help="ground-truth directory")
    ev.add_argument("--out", required=True)
    ev.add_argument("--whiten", default=None)
    ev.add_argument("--aqe", type=int, default=None, metavar="N")
    ev.add_argument("--alphaqe", default=None, metavar="N,ALPHA")
    ev.add_argument("--ms", action="store_true")
    ev.set_defaults(func=cmd_eval)

    bench = sub.add_parser("bench", help="time convolution vs. max-correlation co-occurrence")
    bench.add_argument("--shapes", default="32x24x512,32x24x32")
    bench.add_argument("--radius", type=int, default=4)
    bench.add_argument("--reps", type=int, default=50)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", required=True)
    bench.set_defaults(func=cmd_bench)

    ins = sub.add_parser("inspect", help="emit spatial-weight heatmaps and correlations")
    ins.add_argument("--input", required=True, help="tensor file or directory")
    ins.add_argument("--out", required=True)
    ins.add_argument("--radius", type=int, default=4)
    ins.add_argument("--a", type=float, default=2.0)
    ins.add_argument("--b", type=float, default=2.0)
    ins.set_defaults(func=cmd_inspect)

    tr = sub.add_parser("train", help="train the co-occurrence filter on labeled pairs")
    tr.add_argument("--pairs", required=True, help="TSV pair list: path_a, path_b, label")
    tr.add_argument("--out", required=True, help="output .coof filter path")
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--tau", type=float, default=0.7)
    tr.add_argument("--batch", type=int, default=5)
    tr.add_argument("--epochs", type=int, default=30)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--radius", type=int, default=4)
    tr.add_argument("--sketch-dim", type=int, default=8192)
    tr.add_argument("--val-frac", type=float, default=0.2)
    tr.set_defaults(func=cmd_train)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CoocError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
