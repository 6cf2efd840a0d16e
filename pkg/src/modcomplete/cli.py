"""Command-line entry point: ``modcomplete <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .evaluation import incomplete_queries, run_evaluation
from .graph import DEFAULT_MAX_USER_ITEMS, ItemGraph, project_item_graph
from .io import (
    read_checkpoint,
    read_features,
    read_graph,
    read_interactions,
    read_mask,
    sha256_file,
    write_checkpoint,
    write_features,
    write_graph,
    write_id_map,
    write_mask,
)
from .modality import ModalityMask, ModalityStore, apply_masking
from .model.network import TrainConfig, forward
from .model.train import LOG_COLUMNS, train
from .pipeline import prepare_sample
from .retrieval import retrieve
from .seeding import stage_rng
from .synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger("modcomplete")


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------- arguments


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modcomplete", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON run config; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        if out:
            sp.add_argument("--out", help="output directory")

    def inputs(sp):
        sp.add_argument("--interactions", help="TSV user_id<TAB>item_id")
        sp.add_argument("--graph", help="graph cache written by build-graph")
        sp.add_argument("--features", action="append", metavar="MODALITY=PATH", help="repeatable")
        sp.add_argument("--mask", help="mask CSV written by mask")

    def retrieval(sp):
        sp.add_argument("--k", type=int, help="anchors per query")
        sp.add_argument("--t", type=int, help="expansion iteration cap")
        sp.add_argument("--kn", type=int, help="neighbourhood hops for baselines")
        sp.add_argument("--anchor-modality", help="force anchors from this modality")

    sp = sub.add_parser("build-graph", help="project interactions onto an item graph")
    common(sp)
    sp.add_argument("--interactions")
    sp.add_argument("--max-user-items", type=int, default=DEFAULT_MAX_USER_ITEMS)
    sp.add_argument("--min-degree", type=int, default=0)

    sp = sub.add_parser("mask", help="hide a fraction of item-modality slots")
    common(sp)
    sp.add_argument("--features", action="append", metavar="MODALITY=PATH")
    sp.add_argument("--rate", type=float)

    sp = sub.add_parser("retrieve", help="anchor search and subgraph expansion per query")
    common(sp)
    inputs(sp)
    retrieval(sp)
    sp.add_argument("--sample", type=int, help="random subset of queries")

    sp = sub.add_parser("train", help="fit the completion network")
    common(sp)
    inputs(sp)
    retrieval(sp)
    sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("complete", help="fill every masked slot with a trained model")
    common(sp)
    inputs(sp)
    retrieval(sp)
    sp.add_argument("--model", help="checkpoint written by train")
    sp.add_argument("--sample", type=int)

    sp = sub.add_parser("evaluate", help="relevance comparison and completion quality report")
    common(sp)
    inputs(sp)
    retrieval(sp)
    sp.add_argument("--synthetic", action="store_true", help="use the planted-cluster generator")
    sp.add_argument("--model", help="skip training and use this checkpoint")
    sp.add_argument("--rate", type=float)
    sp.add_argument("--sample", type=int)
    sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("bench", help="retrieval throughput on a large synthetic graph")
    common(sp)
    retrieval(sp)
    sp.add_argument("--sample", type=int, default=1000, help="number of queries")
    sp.add_argument("--items", type=int, default=10000)
    return p


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    for key in ("interactions", "graph", "mask", "model", "out"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.paths[key] = val
    if getattr(args, "features", None):
        feats = {}
        for spec in args.features:
            name, sep, path = spec.partition("=")
            if not sep or not name or not path:
                raise CliError(f"--features expects MODALITY=PATH, got {spec!r}")
            feats[name] = path
        cfg.paths["features"] = feats
    if getattr(args, "rate", None) is not None:
        cfg.masking["rate"] = args.rate
    for flag, key in (("k", "k"), ("t", "t"), ("kn", "k_n"), ("anchor_modality", "anchor_modality")):
        val = getattr(args, flag, None)
        if val is not None:
            cfg.retrieval[key] = val
    if getattr(args, "epochs", None) is not None:
        cfg.model["epochs"] = args.epochs
    if getattr(args, "sample", None) is not None:
        cfg.eval["sample"] = args.sample
    return cfg


# ---------------------------------------------------------------- loading


def _need(cfg: RunConfig, key: str, flag: str) -> Path:
    val = cfg.paths.get(key)
    if not val:
        raise CliError(f"missing required input {flag}")
    path = Path(val)
    if not path.exists():
        raise CliError(f"required file not found: {path}")
    return path


def _load_graph(cfg: RunConfig) -> tuple[ItemGraph, list[Path]]:
    if cfg.paths.get("graph"):
        path = _need(cfg, "graph", "--graph")
        return read_graph(path), [path]
    if cfg.paths.get("interactions"):
        path = _need(cfg, "interactions", "--interactions")
        return project_item_graph(read_interactions(path)), [path]
    raise CliError("missing required input: --graph (from build-graph) or --interactions")


def _load_store(cfg: RunConfig, n_items: int | None = None) -> tuple[ModalityStore, list[Path]]:
    feats = cfg.paths.get("features") or {}
    if not feats:
        raise CliError("missing required input --features MODALITY=PATH")
    mats, paths = {}, []
    for name, p in feats.items():
        path = Path(p)
        if not path.exists():
            raise CliError(f"required file not found: {path}")
        mats[name] = read_features(path)
        paths.append(path)
    store = ModalityStore.from_arrays(mats)
    if n_items is not None and store.n_items != n_items:
        raise CliError(f"features have {store.n_items} rows but the graph has {n_items} items")
    return store, paths


def _load_mask(cfg: RunConfig, store: ModalityStore) -> tuple[ModalityMask, list[Path]]:
    path = _need(cfg, "mask", "--mask (from the mask subcommand)")
    return read_mask(path, list(store.names), store.n_items), [path]


def _anchor_modality(cfg: RunConfig, store: ModalityStore):
    rcfg = cfg.retrieval_config()
    if rcfg.anchor_modality is not None:
        rcfg.anchor_modality = store.index(str(rcfg.anchor_modality))
    return rcfg


# ---------------------------------------------------------------- outputs


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: RunConfig, inputs: list[Path], outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {name: sha256_file(out / name) for name in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------- commands


def cmd_build_graph(args) -> int:
    cfg = _run_config(args)
    src = _need(cfg, "interactions", "--interactions")
    log_ = read_interactions(src)
    g = project_item_graph(log_, max_user_items=args.max_user_items, min_degree=args.min_degree)
    out = _out_dir(cfg)
    write_graph(out / "graph.ggr", g)
    write_id_map(out / "item_ids.csv", log_.item_ids)
    _write_manifest(out, "build-graph", cfg, [src], ["graph.ggr", "item_ids.csv"])
    print(f"N={g.n} E={g.edge_count}")
    return 0


def cmd_mask(args) -> int:
    cfg = _run_config(args)
    store, inputs = _load_store(cfg)
    mask = apply_masking(store.n_items, store.n_modalities, float(cfg.masking["rate"]), cfg.mask_seed())
    out = _out_dir(cfg)
    write_mask(out / "mask.csv", mask, store.names)
    summary = mask.summary()
    with open(out / "mask_summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["items", "full"] + [f"missing_{n}" for n in store.names])
        w.writerow([summary["items"], summary["full"]] + [summary[f"missing_{m}"] for m in range(store.n_modalities)])
    _write_manifest(out, "mask", cfg, inputs, ["mask.csv", "mask_summary.csv"])
    parts = " ".join(f"missing_{n}={summary[f'missing_{m}']}" for m, n in enumerate(store.names))
    print(f"items={summary['items']} full={summary['full']} {parts}")
    return 0


def _map(cfg: RunConfig, fn, items):
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _queries(cfg: RunConfig, mask: ModalityMask) -> list[int]:
    items = np.flatnonzero(~mask.observed.all(axis=1))
    if items.size == 0:
        items = np.arange(mask.n_items)
    sample = cfg.eval.get("sample")
    if sample is not None and sample < items.size:
        items = np.sort(stage_rng(cfg.seed, "sample").choice(items, size=sample, replace=False))
    return items.tolist()


def cmd_retrieve(args) -> int:
    cfg = _run_config(args)
    g, gin = _load_graph(cfg)
    store, fin = _load_store(cfg, g.n)
    mask, min_ = _load_mask(cfg, store)
    store = store.zero_unobserved(mask)
    rcfg = _anchor_modality(cfg, store)
    queries = _queries(cfg, mask)
    results = _map(cfg, lambda i: retrieve(g, store, mask, i, rcfg.k, rcfg.t, rcfg.anchor_modality), queries)
    out = _out_dir(cfg)
    with open(out / "retrieval.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "modality", "anchor_ids", "subgraph_ids", "phi"])
        for res in results:
            w.writerow(
                [
                    res.query,
                    ";".join(store.names[m] for m in res.anchors.modality),
                    ";".join(map(str, res.anchors.anchors)),
                    ";".join(map(str, res.subgraph.nodes)),
                    _fmt(res.subgraph.phi),
                ]
            )
    _write_manifest(out, "retrieve", cfg, gin + fin + min_, ["retrieval.csv"])
    print(f"queries={len(results)}")
    return 0


def _write_train_log(path: Path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for h in history:
            w.writerow(h.row())


def _checkpoint_meta(tcfg: TrainConfig, store: ModalityStore, rcfg) -> dict:
    return {
        "train_config": tcfg.to_dict(),
        "retrieval_config": rcfg.to_dict(),
        "modalities": list(store.names),
        "dims": list(store.dims),
        "init": "uniform(+-1/sqrt(fan_in)) weights, zero biases, unit LN gains, N(0,1/d) codebook",
    }


def cmd_train(args) -> int:
    cfg = _run_config(args)
    g, gin = _load_graph(cfg)
    store, fin = _load_store(cfg, g.n)
    mask, min_ = _load_mask(cfg, store)
    store = store.zero_unobserved(mask)
    rcfg = _anchor_modality(cfg, store)
    tcfg = cfg.train_config(synthetic=bool(cfg.eval.get("synthetic_model")))
    params, history = train(g, store, mask, tcfg, rcfg, threads=cfg.threads)
    out = _out_dir(cfg)
    write_checkpoint(out / "model.gmp", params, _checkpoint_meta(tcfg, store, rcfg))
    _write_train_log(out / "train_log.csv", history)
    _write_manifest(out, "train", cfg, gin + fin + min_, ["model.gmp", "train_log.csv"])
    print(f"epochs={len(history)} recon={history[-1].recon:.6f} val_recon={history[-1].val_recon:.6f}")
    return 0


def cmd_complete(args) -> int:
    cfg = _run_config(args)
    g, gin = _load_graph(cfg)
    store, fin = _load_store(cfg, g.n)
    mask, min_ = _load_mask(cfg, store)
    model_path = _need(cfg, "model", "--model (from train)")
    params, meta = read_checkpoint(model_path)
    if list(meta["dims"]) != list(store.dims):
        raise CliError(f"checkpoint dims {meta['dims']} do not match features {list(store.dims)}")
    tcfg = TrainConfig.from_dict(meta["train_config"])
    full = store
    store = store.zero_unobserved(mask)
    rcfg = _anchor_modality(cfg, store)
    queries = [i for i in _queries(cfg, mask) if not mask.observed[i].all()]

    def run(i):
        sample, _ = prepare_sample(g, store, mask, i, rcfg, tcfg.k)
        missing = np.flatnonzero(~mask.observed[i]).tolist()
        return i, forward(sample.x_in, params, tcfg, missing, None).outputs

    results = _map(cfg, run, queries)
    out = _out_dir(cfg)
    rows = {m: [] for m in range(store.n_modalities)}
    with open(out / "completions.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "modality", "row", "dim"])
        for i, outs in results:
            for m, vec in sorted(outs.items()):
                w.writerow([i, store.names[m], len(rows[m]), vec.shape[0]])
                rows[m].append((i, vec))
    written = ["completions.csv"]
    for m, name in enumerate(store.names):
        part = np.array([v for _, v in rows[m]]).reshape(len(rows[m]), store.dims[m])
        write_features(out / f"completions_{name}.gmc", part)
        filled = full.features[m].copy()
        for i, v in rows[m]:
            filled[i] = v
        write_features(out / f"completed_{name}.gmc", filled)
        written += [f"completions_{name}.gmc", f"completed_{name}.gmc"]
    _write_manifest(out, "complete", cfg, gin + fin + min_ + [model_path], written)
    print(f"completed_items={len(results)}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    inputs: list[Path] = []
    if args.synthetic or cfg.eval.get("synthetic") is not None:
        spec = cfg.synthetic_spec()
        data = generate_synthetic(spec)
        g, truth = data.graph, data.truth
        cfg.eval["synthetic"] = spec.to_dict()
        synthetic = True
    else:
        g, gin = _load_graph(cfg)
        truth, fin = _load_store(cfg, g.n)
        inputs = gin + fin
        synthetic = False
    if cfg.paths.get("mask"):
        mask, min_ = _load_mask(cfg, truth)
        inputs += min_
    else:
        mask = apply_masking(truth.n_items, truth.n_modalities, float(cfg.masking["rate"]), cfg.mask_seed())
    tcfg = cfg.train_config(synthetic=synthetic)
    rcfg = _anchor_modality(cfg, truth)
    params = None
    if cfg.paths.get("model"):
        model_path = _need(cfg, "model", "--model")
        params, meta = read_checkpoint(model_path)
        tcfg = TrainConfig.from_dict(meta["train_config"])
        inputs.append(model_path)
    run = run_evaluation(
        g, truth, mask, tcfg, rcfg,
        threads=cfg.threads,
        sample=cfg.eval.get("sample"),
        params=params,
        config_echo={"run": cfg.echo(), "train": tcfg.to_dict(), "retrieval": rcfg.to_dict()},
    )
    out = _out_dir(cfg)
    (out / "report.json").write_text(json.dumps(run.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "relevance.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "modality", "neighbor_mean", "retrieved_mean"])
        for r in run.relevance_rows:
            w.writerow([r.query, truth.names[r.modality], _fmt(r.neighbor_mean), _fmt(r.retrieved_mean)])
    written = ["report.json", "relevance.csv"]
    if run.history:
        _write_train_log(out / "train_log.csv", run.history)
        write_checkpoint(out / "model.gmp", run.params, _checkpoint_meta(tcfg, truth, rcfg))
        written += ["train_log.csv", "model.gmp"]
    _write_manifest(out, "evaluate", cfg, inputs, [w for w in written if w != "report.json"])
    rel, comp = run.report["relevance"], run.report["completion"]
    print(
        f"relevance neighbor={rel['neighbor_mean']:.4f} retrieved={rel['retrieved_mean']:.4f} | "
        + " ".join(f"{k}_cos={comp[k]['mean_cosine']:.4f}" for k in ("retrieval_model", "neighbor_mean", "zero_fill"))
    )
    return 0


def bench_spec(n_items: int, seed: int) -> SyntheticSpec:
    """Roughly degree-5 planted-cluster graph with about 200 items per cluster."""
    per = 200
    clusters = max(1, n_items // per)
    return SyntheticSpec(
        n_clusters=clusters,
        items_per_cluster=per,
        p_intra=1.6 / (per - 1),
        p_inter=3.5 / max(1, per * (clusters - 1)),
        seed=seed,
    )


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    spec = bench_spec(args.items, cfg.seed)
    data = generate_synthetic(spec)
    mask = apply_masking(data.store.n_items, 2, float(cfg.masking["rate"]), cfg.mask_seed())
    store = data.store.zero_unobserved(mask)
    rcfg = cfg.retrieval_config()
    n_q = int(cfg.eval.get("sample") or 1000)
    queries = np.sort(stage_rng(cfg.seed, "sample").choice(data.graph.n, size=min(n_q, data.graph.n), replace=False))
    start = time.perf_counter()
    results = _map(cfg, lambda i: retrieve(data.graph, store, mask, int(i), rcfg.k, rcfg.t, rcfg.anchor_modality), queries)
    elapsed = time.perf_counter() - start
    sizes = [len(r.subgraph.nodes) for r in results]
    report = {
        "items": data.graph.n,
        "edges": data.graph.edge_count,
        "queries": len(results),
        "k": rcfg.k,
        "t": rcfg.t,
        "retrieval_seconds": elapsed,
        "per_query_ms": 1000.0 * elapsed / max(1, len(results)),
        "mean_subgraph_size": float(np.mean(sizes)) if sizes else 0.0,
    }
    out = _out_dir(cfg)
    (out / "bench.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(report, sort_keys=True))
    return 0


COMMANDS = {
    "build-graph": cmd_build_graph,
    "mask": cmd_mask,
    "retrieve": cmd_retrieve,
    "train": cmd_train,
    "complete": cmd_complete,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
