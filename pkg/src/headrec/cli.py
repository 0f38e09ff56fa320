"""Batch command line: prepare, train, eval, viz, check, grid (and synth for demo data).

Exit codes: 0 success, 2 usage, 3 I/O or format error, 4 numerical abort,
5 failed check, 6 configuration or shape mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from . import model as M
from .data import (
    DatasetError,
    SplitSpec,
    ensure_dir,
    file_sha256,
    load_partitions,
    load_reviews,
    split_dataset,
    vocabulary,
    write_degrees,
    write_records,
)
from .embedding import EmbeddingFormatError, EmbeddingTable, load_table
from .evaluation import check_theorems, evaluate_ranking, fidelity_of, viz_rows
from .objectives import NonFiniteLossError
from .training import CrossDomainData, fit, forward_losses, grid_search

log = logging.getLogger("headrec")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_CHECK = 5
EXIT_CONFIG = 6

SOURCE_FILE = "source.jsonl"
PARTS = ("train", "valid", "test")
DEGREES_FILE = "degrees.csv"
VOCAB_FILE = "vocab.txt"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "checkpoint.bin"
INITIAL_CHECKPOINT_FILE = "checkpoint_init.bin"
CURVES_FILE = "curves.csv"
REPORT_FILE = "report.txt"


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


def target_file(part: str) -> str:
    return f"target.{part}.jsonl"


# -- manifest ------------------------------------------------------------------------

def write_manifest(out: Path, command: str, seed: int, config: dict, inputs: dict,
                   outputs: list[str]) -> None:
    """One manifest per output directory; no timestamps so reruns are byte-identical."""
    manifest = {
        "tool": "headrec",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {k: file_sha256(v) for k, v in sorted(inputs.items())},
        "outputs": sorted(outputs),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


def resolve_seed(arg) -> int:
    if arg is not None:
        return int(arg)
    env = os.environ.get("HEAD_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"HEAD_SEED must be an integer, got {env!r}") from None


# -- prepared data --------------------------------------------------------------------

def load_prepared(prepared: Path):
    prepared = Path(prepared)
    if not (prepared / SOURCE_FILE).exists():
        raise FileNotFoundError(f"{prepared}: not a prepared directory (no {SOURCE_FILE})")
    (source,) = load_partitions([prepared / SOURCE_FILE], "source")
    train, valid, test = load_partitions([prepared / target_file(p) for p in PARTS], "target")
    return source, train, valid, test


def prepared_inputs(prepared: Path) -> dict:
    return {name: Path(prepared) / name
            for name in [SOURCE_FILE] + [target_file(p) for p in PARTS]}


def embedding_table(spec: dict, source, train) -> EmbeddingTable:
    if spec["kind"] == "synthetic":
        return EmbeddingTable.synthetic(vocabulary([source, train]), dim=spec["dim"],
                                        seed=spec["seed"])
    return load_table(spec["path"], spec.get("geometry", "euclidean"))


def build_data(prepared: Path, emb_spec: dict, doc_len: int) -> CrossDomainData:
    source, train, valid, test = load_prepared(prepared)
    table = embedding_table(emb_spec, source, train)
    return CrossDomainData(source, train, valid, test, table, doc_len=doc_len)


def embedding_spec(args, cfg, seed: int) -> dict:
    if args.embedding == "synthetic":
        return {"kind": "synthetic", "dim": cfg.embed_dim, "seed": seed}
    return {"kind": "file", "path": str(Path(args.embedding).resolve()),
            "geometry": args.embedding_geometry}


# -- commands ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synthetic import SyntheticSpec, generate_synthetic

    seed = resolve_seed(args.seed)
    kw = {"seed": seed}
    if args.shared_dims is not None:
        kw["shared_dims"] = args.shared_dims
    src, tgt = generate_synthetic(SyntheticSpec(**kw))
    out = ensure_dir(args.out)
    write_records(out / "source.jsonl", src.interactions, src)
    write_records(out / "target.jsonl", tgt.interactions, tgt)
    print(f"source={out / 'source.jsonl'} interactions={len(src)}")
    print(f"target={out / 'target.jsonl'} interactions={len(tgt)}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    if not args.source or not args.target:
        raise UsageError("prepare needs --source and --target")
    seed = resolve_seed(args.seed)
    source = load_reviews(args.source, "source")
    target = load_reviews(args.target, "target")
    parts = split_dataset(target, SplitSpec(seed=seed))
    out = ensure_dir(args.out)
    write_records(out / SOURCE_FILE, source.interactions, source)
    for name, part in zip(PARTS, parts):
        write_records(out / target_file(name), part.interactions, part)
    write_degrees(out / DEGREES_FILE, {"source": source, "target": parts[0]})
    vocab = vocabulary([source, parts[0]])
    (out / VOCAB_FILE).write_text("".join(t + "\n" for t in vocab), encoding="utf-8")
    outputs = [SOURCE_FILE, DEGREES_FILE, VOCAB_FILE] + [target_file(p) for p in PARTS]
    write_manifest(out, "prepare", seed, {"split": dataclasses.asdict(SplitSpec(seed=seed))},
                   {"source": args.source, "target": args.target}, outputs)
    print(f"source_interactions={len(source)} skipped={source.skipped}")
    print(f"target_interactions={len(target)} skipped={target.skipped}")
    for name, part in zip(PARTS, parts):
        print(f"target_{name}={len(part)}")
    return EXIT_OK


def _overrides(args) -> dict:
    return {
        "lambda1": args.lambda1, "lambda2": args.lambda2, "margin": args.margin,
        "aligned": args.aligned, "degree_norm": args.degree_norm,
        "candidates": args.candidates, "max_iters": args.max_iters,
        "patience": args.patience, "lr": args.lr, "seed": args.seed_resolved,
    }


def _resolve_config(args):
    """Flag values win over the config file; the seed falls back to $HEAD_SEED."""
    values = C.load(args.config) if args.config else {}
    if args.seed is not None or "seed" not in values:
        args.seed_resolved = resolve_seed(args.seed)
    else:
        args.seed_resolved = None
    return C.resolve(values, _overrides(args))


def _curve_rows(result) -> str:
    evals = {e["iteration"]: e["ndcg"] for e in result.evals}
    lines = ["iteration,L_total,L_pred,L_emb,L_d,disc_bce,valid_ndcg"]
    for h in result.history:
        v = evals.get(h["iteration"])
        lines.append(",".join([str(h["iteration"])] + [f"{h[k]:.10g}" for k in
                              ("L_total", "L_pred", "L_emb", "L_d", "disc_bce")]
                              + ["" if v is None else f"{v:.10g}"]))
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    from . import plotting

    cfg, weights = _resolve_config(args)
    emb = embedding_spec(args, cfg, cfg.seed)
    data = build_data(args.prepared, emb, cfg.doc_len)
    cfg = dataclasses.replace(cfg, embed_dim=data.table.dim)
    out = ensure_dir(args.out)
    mcfg = cfg.model_config(data)
    rng = np.random.default_rng(cfg.seed)
    init = M.init_params(mcfg, rng, data.cold_masks())
    ck_config = {"model": mcfg.to_dict(), "train": dataclasses.asdict(cfg),
                 "loss": dataclasses.asdict(weights), "embedding": emb}
    M.save_checkpoint(out / INITIAL_CHECKPOINT_FILE, init, ck_config)
    result = fit(data, cfg, weights, params=init)
    M.save_checkpoint(out / CHECKPOINT_FILE, result.params, ck_config)
    (out / CURVES_FILE).write_text(_curve_rows(result), encoding="utf-8")
    (out / "config.txt").write_text(C.dump(cfg, weights), encoding="utf-8")
    outputs = [CHECKPOINT_FILE, INITIAL_CHECKPOINT_FILE, CURVES_FILE, "config.txt"]
    if result.history:
        plotting.loss_curves(result.history, out / "curves.png")
        outputs.append("curves.png")
    inputs = prepared_inputs(args.prepared)
    if emb["kind"] == "file":
        inputs["embedding"] = emb["path"]
    write_manifest(out, "train", cfg.seed, ck_config, inputs, outputs)
    print(f"iterations={result.iterations}")
    print(f"initial_valid_ndcg@10={result.initial_score:.6f}")
    print(f"best_valid_ndcg@10={result.best_score:.6f}")
    print(f"best_iteration={result.best_iteration}")
    return EXIT_OK


def load_model(checkpoint, prepared):
    params, ck = M.load_checkpoint(checkpoint)
    train_cfg = ck["train"]
    data = build_data(prepared, ck["embedding"], int(train_cfg["doc_len"]))
    mcfg = M.ModelConfig(**ck["model"])
    real = dataclasses.replace(mcfg, n_src_users=data.source.n_users,
                               n_src_items=data.source.n_items,
                               n_tgt_users=data.target.n_users, n_tgt_items=data.target.n_items,
                               embed_dim=data.table.dim)
    M.check_shapes(params, real)
    return params, ck, data


def disc_bce(params, data, ck, seed: int) -> float:
    """Discriminator BCE (mean of the four domain terms) on one seeded batch."""
    from .objectives import LossWeights
    from .training import TrainConfig

    cfg = TrainConfig(**ck["train"])
    weights = LossWeights(**ck["loss"])
    batch = data.sample(np.random.default_rng(seed), cfg.batch_size, True)
    _, _, terms, _ = forward_losses(params, data, batch, weights, cfg)
    return float(terms["L_d"].value) / 4.0


def evaluation_report(params, ck, data, seed: int, candidates: int) -> list[str]:
    res = evaluate_ranking(params, data, "test", candidates, seed=seed)
    fid = fidelity_of(params, data)
    theorems = check_theorems(params, seed)
    lines = [
        f"ndcg@10={res.ndcg:.6f}",
        f"hr@10={res.hr:.6f}",
        f"lists={res.n_lists}",
        f"cold_lists={res.cold}",
        f"hierarchy_rho={fid.rho:.6f}",
        f"hierarchy_flagged={'yes' if fid.flagged else 'no'}",
        f"disc_bce={disc_bce(params, data, ck, seed):.6f}",
    ]
    lines += [f"check.{c.name}={'pass' if c.passed else 'fail'}" for c in theorems.checks]
    return lines


def cmd_eval(args) -> int:
    params, ck, data = load_model(args.checkpoint, args.prepared)
    if args.seed is not None or os.environ.get("HEAD_SEED"):
        seed = resolve_seed(args.seed)
    else:
        seed = int(ck["train"]["seed"])
    candidates = args.candidates or int(ck["train"]["candidates"])
    lines = evaluation_report(params, ck, data, seed, candidates)
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = ensure_dir(args.out)
        (out / REPORT_FILE).write_text(text, encoding="utf-8")
        inputs = prepared_inputs(args.prepared)
        inputs["checkpoint"] = args.checkpoint
        write_manifest(out, "eval", seed, {"candidates": candidates}, inputs, [REPORT_FILE])
    return EXIT_OK


def viz_csv(rows) -> str:
    lines = ["item_id,degree,poincare_radius,x,y"]
    lines += [f"{i},{d},{r:.10f},{x:.10f},{y:.10f}" for i, d, r, x, y in rows]
    return "\n".join(lines) + "\n"


def cmd_viz(args) -> int:
    from . import plotting

    params, ck, data = load_model(args.checkpoint, args.prepared)
    seed = resolve_seed(args.seed)
    rows = viz_rows(params, data, sample=args.sample, seed=seed)
    out = Path(args.out)
    ensure_dir(out.parent if out.parent != Path("") else ".")
    out.write_text(viz_csv(rows), encoding="utf-8")
    print(f"rows={len(rows)} path={out}")
    if args.image:
        plotting.poincare_scatter(rows, args.image)
        print(f"image={args.image}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .selfcheck import autodiff_suite, geometry_suite

    seed = resolve_seed(args.seed)
    params = None
    if args.checkpoint:
        params, _ = M.load_checkpoint(args.checkpoint)
    report = check_theorems(params, seed)
    checks = list(report.checks)
    if not args.theorems_only:
        checks += geometry_suite(seed) + autodiff_suite(seed, points=args.points)
    for c in checks:
        print(f"{c.name}={'pass' if c.passed else 'FAIL'} [{c.theorem}] {c.detail}")
    failed = [c.name for c in checks if not c.passed]
    print(f"status={'fail' if failed else 'pass'}")
    if failed:
        raise CheckFailed(", ".join(failed))
    return EXIT_OK


def _grid_values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None
    if not vals:
        raise UsageError("grid must be non-empty")
    return vals


def cmd_grid(args) -> int:
    from . import plotting

    cfg, weights = _resolve_config(args)
    emb = embedding_spec(args, cfg, cfg.seed)
    data = build_data(args.prepared, emb, cfg.doc_len)
    cfg = dataclasses.replace(cfg, embed_dim=data.table.dim)
    g1, g2 = _grid_values(args.grid1), _grid_values(args.grid2)
    res = grid_search(data, g1, g2, cfg, weights)
    out = ensure_dir(args.out)
    (out / "grid.csv").write_text(res.to_csv(), encoding="utf-8")
    plotting.lambda_heatmap(res.matrix, g1, g2, out / "grid.png")
    inputs = prepared_inputs(args.prepared)
    write_manifest(out, "grid", cfg.seed, {"train": dataclasses.asdict(cfg),
                                          "loss": dataclasses.asdict(weights),
                                          "embedding": emb, "grid1": g1, "grid2": g2},
                   inputs, ["grid.csv", "grid.png"])
    sys.stdout.write(res.to_csv())
    print(f"best_lambda1={res.best[0]:g}")
    print(f"best_lambda2={res.best[1]:g}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _onoff(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("prepared", help="directory written by 'prepare'")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--embedding", default="synthetic", help="'synthetic' or a vector file")
    p.add_argument("--embedding-geometry", default="euclidean", choices=("euclidean", "poincare"))
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--aligned", type=_onoff)
    p.add_argument("--degree-norm", type=_onoff)
    p.add_argument("--candidates", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="headrec", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, help="falls back to $HEAD_SEED, then 0")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic source/target review pair")
    p.add_argument("--out", required=True)
    p.add_argument("--shared-dims", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="split the target 80/10/10 and write degree tables")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train and write the best checkpoint and curves")
    _training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ranking metrics, hierarchy fidelity, theorem checks")
    p.add_argument("checkpoint")
    p.add_argument("prepared")
    p.add_argument("--candidates", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="degree-radius CSV of target items")
    p.add_argument("checkpoint")
    p.add_argument("prepared")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--image", help="optional scatter image path")
    p.add_argument("--sample", type=int, default=1000)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("check", help="theorem checks plus geometry and autodiff suites")
    p.add_argument("--config", help="accepted for symmetry; checks use fixed fixtures")
    p.add_argument("--checkpoint", help="run the degree-ratio check on these parameters")
    p.add_argument("--points", type=int, default=100, help="finite-difference points per op")
    p.add_argument("--theorems-only", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("grid", help="validation NDCG@10 over a (lambda1, lambda2) grid")
    _training_flags(p)
    p.add_argument("--grid1", default="0.01,0.05,0.1,0.5,1.0")
    p.add_argument("--grid2", default="0.01,0.05,0.1,0.5,1.0")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # flags that belong to the whole run may also follow the subcommand
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _hoist_seed(argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (M.ShapeMismatchError, C.ConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DatasetError, EmbeddingFormatError, M.CheckpointError,
            json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO


def _hoist_seed(argv: list[str]) -> list[str]:
    """Move ``--seed N`` written after the subcommand in front of it."""
    out, seed = [], []
    k = 0
    while k < len(argv):
        a = argv[k]
        if a == "--seed" and k + 1 < len(argv):
            seed = [a, argv[k + 1]]
            k += 2
            continue
        if a.startswith("--seed="):
            seed = [a]
            k += 1
            continue
        out.append(a)
        k += 1
    return seed + out


if __name__ == "__main__":
    sys.exit(main())
