"""Command-line pipeline driver.

Every subcommand reads and writes only the files named on its command line,
stages outputs in temporary files that are renamed into place only after the
whole command succeeded, and finishes by writing a manifest recording its
configuration and the digest of every input.  Reruns with identical inputs
and seeds produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .dataset import (
    LABELS_FORMAT_VERSION,
    SplitSpec,
    apply_labels,
    assign_labels,
    caption_heuristic,
    generate_synthetic_corpus,
    load_labels,
    save_labels,
    split_corpus,
)
from .evaluate import compute_metrics, group_blocks, render_overlay, save_metrics
from .gnn import GnnConfig, infer, init_model, load_model, save_model, train
from .graph import PageGraph, featurize, load_graphs, prune_islands, save_graphs
from .model import (
    Document,
    TokenLabel,
    dumps_json,
    load_document,
    load_regions,
    regions_for_page,
    save_document,
    save_regions,
    validate_document,
)
from .reprs import (
    PATTERN_MODES,
    load_tables,
    load_vocabulary,
    save_tables,
    save_vocabulary,
    train_skipgram,
)

FEATURE_SETS = ("bbox", "bbox+repr", "bbox+ext", "bbox+repr+ext")

MANIFEST_FORMAT_VERSION = 1


def _default_threads() -> int:
    raw = os.environ.get("TABLEGRAPH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class _Staged:
    """Declared outputs, written to temp names and renamed on commit."""

    def __init__(self) -> None:
        self._pairs: list[tuple[Path, Path]] = []

    def path(self, final: str | Path) -> Path:
        final = Path(final)
        tmp = final.with_name(final.name + ".tmp")
        self._pairs.append((tmp, final))
        return tmp

    @property
    def finals(self) -> list[str]:
        return [str(final) for _, final in self._pairs]

    def commit(self) -> None:
        for tmp, final in self._pairs:
            os.replace(tmp, final)

    def discard(self) -> None:
        for tmp, _ in self._pairs:
            tmp.unlink(missing_ok=True)


def _digest(path: str | Path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_valid_document(path: str | Path) -> Document:
    doc = load_document(path)
    problems = validate_document(doc)
    if problems:
        shown = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise ValueError(f"invalid tokens file {path}: {shown}{more}")
    return doc


def _load_labeled_graphs(paths: Sequence[str]) -> list[PageGraph]:
    graphs: list[PageGraph] = []
    for path in paths:
        _, pages = load_graphs(path)
        graphs.extend(pages)
    return graphs


# ---------------------------------------------------------------------------
# Subcommand handlers; each returns (inputs, config echo, manifest path)
# ---------------------------------------------------------------------------


def _cmd_synth(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    triples, tables = generate_synthetic_corpus(args.n, args.seed)
    doc_id = f"synth-{args.seed}"
    doc = Document(doc_id=doc_id, pages=tuple(page for page, _, _ in triples))
    save_document(doc, staged.path(out_dir / "synth.tokens.json"))
    save_labels(
        doc_id,
        [labeled for _, labeled, _ in triples],
        staged.path(out_dir / "synth.labels.json"),
        tokens_file="synth.tokens.json",
    )
    regions = [r for _, _, page_regions in triples for r in page_regions]
    save_regions(doc_id, regions, staged.path(out_dir / "synth.regions.json"))
    save_tables(tables, staged.path(out_dir / "synth.tables.json"))
    config = {"n": args.n, "seed": args.seed, "out_dir": str(out_dir)}
    return [], config, out_dir / "synth.manifest.json"


def _cmd_label(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    doc = _load_valid_document(args.tokens)
    _, regions = load_regions(args.regions)
    labeled = []
    for page in doc.pages:
        page_regions = regions_for_page(regions, page.page_no)
        lp = assign_labels(page, page_regions)
        if args.caption_fixup:
            lp = caption_heuristic(lp, page_regions, gap=args.caption_gap)
        labeled.append(lp)
    save_labels(doc.doc_id, labeled, staged.path(args.out), tokens_file=args.tokens)
    config = {
        "tokens": args.tokens,
        "regions": args.regions,
        "caption_fixup": args.caption_fixup,
        "caption_gap": args.caption_gap,
        "out": args.out,
    }
    return [args.tokens, args.regions], config, Path(args.out + ".manifest.json")


def _cmd_build_graphs(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    inputs = [args.tokens]
    doc = _load_valid_document(args.tokens)
    labels_by_page = None
    if args.labels:
        inputs.append(args.labels)
        _, _, labels_by_page = load_labels(args.labels)
    vocab = None
    if "repr" in args.features.split("+"):
        if not args.vocab:
            raise ValueError(f"feature set {args.features!r} needs --vocab")
        inputs.append(args.vocab)
        vocab = load_vocabulary(args.vocab)
    use_ext = "ext" in args.features.split("+")

    # A labels file that covers only part of the document selects that part:
    # this is how the train/val/test splits become separate graph files.
    pages = list(doc.pages)
    if labels_by_page is not None:
        pages = [page for page in pages if page.page_no in labels_by_page]
        if not pages:
            raise ValueError("labels file covers no page of the tokens file")

    def build(page):
        labels = None if labels_by_page is None else labels_by_page[page.page_no]
        graph = featurize(page, labels=labels, vocab=vocab, use_ext=use_ext)
        if args.prune_islands is not None:
            graph = prune_islands(graph, args.prune_islands)
        return graph

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            graphs = list(pool.map(build, pages))
    else:
        graphs = [build(page) for page in pages]
    save_graphs(doc.doc_id, graphs, staged.path(args.out))
    config = {
        "tokens": args.tokens,
        "labels": args.labels,
        "vocab": args.vocab,
        "features": args.features,
        "prune_islands": args.prune_islands,
        "threads": args.threads,
        "out": args.out,
    }
    return inputs, config, Path(args.out + ".manifest.json")


def _cmd_repr_train(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    tables = load_tables(args.tables)
    vocab = train_skipgram(
        tables,
        mode=args.mode,
        dim=args.dim,
        epochs=args.epochs,
        seed=args.seed,
        limit=args.limit,
        rhombus_uses_diagonal=args.rhombus_diagonal,
    )
    save_vocabulary(vocab, staged.path(args.out))
    config = {
        "tables": args.tables,
        "mode": args.mode,
        "dim": args.dim,
        "epochs": args.epochs,
        "seed": args.seed,
        "limit": args.limit,
        "rhombus_diagonal": args.rhombus_diagonal,
        "out": args.out,
    }
    return [args.tables], config, Path(args.out + ".manifest.json")


def _cmd_gnn_train(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    inputs = list(args.graphs)
    graphs = _load_labeled_graphs(args.graphs)
    if not graphs:
        raise ValueError("no pages found in the graph files")
    val_graphs = None
    if args.val_graphs:
        inputs.extend(args.val_graphs)
        val_graphs = _load_labeled_graphs(args.val_graphs)
    config = GnnConfig(
        in_dim=graphs[0].feature_dim,
        layers=args.layers,
        sizing=args.sizing,
        hidden=args.hidden,
        param_budget=args.param_budget,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
    )
    model = init_model(config)
    result = train(model, graphs, val_graphs)
    save_model(model, staged.path(args.out))
    curve_path = args.curve or args.out + ".curve.json"
    curve = {
        "format_version": 1,
        "losses": result.losses,
        "val_accuracies": result.val_accuracies,
    }
    staged.path(curve_path).write_text(dumps_json(curve), encoding="utf-8")
    echo = {
        "graphs": list(args.graphs),
        "val_graphs": list(args.val_graphs or []),
        "layers": args.layers,
        "sizing": args.sizing,
        "hidden": args.hidden,
        "param_budget": args.param_budget,
        "lr": args.lr,
        "epochs": args.epochs,
        "seed": args.seed,
        "out": args.out,
        "curve": curve_path,
    }
    return inputs, echo, Path(args.out + ".manifest.json")


def _cmd_infer(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    doc_id, graphs = load_graphs(args.graphs)
    model = load_model(args.model)
    pages = []
    for graph in graphs:
        labels, probs = infer(model, graph)
        pages.append(
            {
                "page_no": graph.page_no,
                "labels": [label.value for label in labels],
                "confidence": [round(float(p.max()), 6) for p in probs],
            }
        )
    data = {
        "format_version": LABELS_FORMAT_VERSION,
        "doc_id": doc_id,
        "tokens_file": "",
        "pages": pages,
    }
    staged.path(args.out).write_text(dumps_json(data), encoding="utf-8")
    config = {"graphs": args.graphs, "model": args.model, "out": args.out}
    return [args.graphs, args.model], config, Path(args.out + ".manifest.json")


def _cmd_eval(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    _, _, gold_pages = load_labels(args.gold)
    _, _, pred_pages = load_labels(args.pred)
    if sorted(gold_pages) != sorted(pred_pages):
        raise ValueError(
            f"gold pages {sorted(gold_pages)} and predicted pages "
            f"{sorted(pred_pages)} differ"
        )
    gold: list[TokenLabel] = []
    pred: list[TokenLabel] = []
    for page_no in sorted(gold_pages):
        g, p = gold_pages[page_no], pred_pages[page_no]
        if len(g) != len(p):
            raise ValueError(
                f"page {page_no}: {len(g)} gold labels vs {len(p)} predictions"
            )
        gold.extend(g)
        pred.extend(p)
    report = compute_metrics(gold, pred)
    save_metrics(report, staged.path(args.out))
    if args.print_report:
        sys.stdout.write(report.to_text())
    config = {"gold": args.gold, "pred": args.pred, "out": args.out}
    return [args.gold, args.pred], config, Path(args.out + ".manifest.json")


def _cmd_render(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    doc = _load_valid_document(args.tokens)
    _, _, labels_by_page = load_labels(args.labels)
    covered = [p for p in doc.pages if p.page_no in labels_by_page]
    if not covered:
        raise ValueError("labels file covers no page of the tokens file")
    subset = Document(doc_id=doc.doc_id, pages=tuple(covered))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for labeled in apply_labels(subset, labels_by_page):
        page = labeled.page
        if args.blocks:
            svg = render_overlay(page, blocks=group_blocks(page, labeled.labels))
        else:
            svg = render_overlay(page, predictions=labeled.labels)
        target = staged.path(out_dir / f"page-{page.page_no:03d}.svg")
        target.write_text(svg, encoding="utf-8")
    config = {
        "tokens": args.tokens,
        "labels": args.labels,
        "blocks": args.blocks,
        "out_dir": str(out_dir),
    }
    return [args.tokens, args.labels], config, out_dir / "render.manifest.json"


def _cmd_split(args: argparse.Namespace, staged: _Staged) -> tuple[list[str], dict, Path]:
    doc = _load_valid_document(args.tokens)
    doc_id, tokens_file, labels_by_page = load_labels(args.labels)
    labeled = apply_labels(doc, labels_by_page)
    spec = SplitSpec(
        train=args.train,
        val=args.val,
        test=args.test,
        seed=args.seed,
        drop_tableless_train=args.drop_tableless_train,
    )
    train_p, val_p, test_p = split_corpus(labeled, spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train_p), ("val", val_p), ("test", test_p)):
        save_labels(
            doc_id, part, staged.path(out_dir / f"{name}.labels.json"),
            tokens_file=tokens_file,
        )
    config = {
        "tokens": args.tokens,
        "labels": args.labels,
        "train": args.train,
        "val": args.val,
        "test": args.test,
        "seed": args.seed,
        "drop_tableless_train": args.drop_tableless_train,
        "out_dir": str(out_dir),
    }
    return [args.tokens, args.labels], config, out_dir / "split.manifest.json"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tablegraph",
        description="Token-graph document layout pipeline: label, train, infer, score.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--n", type=int, required=True, help="number of pages")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("label", help="join a tokens file with region annotations")
    p.add_argument("--tokens", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--caption-fixup", action="store_true",
                   help="relabel text blocks adjacent to images/tables as captions")
    p.add_argument("--caption-gap", type=float, default=30.0)
    p.set_defaults(handler=_cmd_label)

    p = sub.add_parser("split", help="split a labeled corpus into train/val/test")
    p.add_argument("--tokens", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--train", type=float, default=0.9)
    p.add_argument("--val", type=float, default=0.05)
    p.add_argument("--test", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-tableless-train", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_split)

    p = sub.add_parser("build-graphs", help="build visibility graphs with node features")
    p.add_argument("--tokens", required=True)
    p.add_argument("--labels", help="labels file; stored in the graph cache")
    p.add_argument("--vocab", help="representation embeddings file")
    p.add_argument("--features", choices=FEATURE_SETS, default="bbox+repr")
    p.add_argument("--prune-islands", type=int, metavar="K",
                   help="drop Text nodes farther than K hops from other classes")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_build_graphs)

    p = sub.add_parser("repr-train", help="train representation embeddings on table grids")
    p.add_argument("--tables", required=True)
    p.add_argument("--mode", choices=PATTERN_MODES, default="rhombus")
    p.add_argument("--dim", type=int, default=80)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=2000,
                   help="how many frequent representations to cluster")
    p.add_argument("--rhombus-diagonal", action="store_true",
                   help="use the down-right diagonal variant of the rhombus window")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_repr_train)

    p = sub.add_parser("gnn-train", help="train the node classifier on labeled graphs")
    p.add_argument("--graphs", nargs="+", required=True)
    p.add_argument("--val-graphs", nargs="*")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--sizing", choices=("base", "padding", "scaled"), default="scaled")
    p.add_argument("--hidden", type=int)
    p.add_argument("--param-budget", type=int, default=100_000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="loss-curve output (default: <out>.curve.json)")
    p.set_defaults(handler=_cmd_gnn_train)

    p = sub.add_parser("infer", help="predict token labels for built graphs")
    p.add_argument("--graphs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_infer)

    p = sub.add_parser("eval", help="score predicted labels against gold labels")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--print", dest="print_report", action="store_true",
                   help="also print the text report")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("render", help="render per-page SVG overlays")
    p.add_argument("--tokens", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--blocks", action="store_true", help="block-level view")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_render)

    return parser


def _manifest_path(args: argparse.Namespace) -> Path:
    out = getattr(args, "out", None)
    if out:
        return Path(str(out) + ".manifest.json")
    return Path(args.out_dir) / f"{args.command}.manifest.json"


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "handler", None):
        parser.print_help(sys.stderr)
        return 2
    staged = _Staged()
    try:
        inputs, config, manifest_path = args.handler(args, staged)
        digests = {path: _digest(path) for path in inputs}
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        staged.discard()
        print(f"error: {exc}", file=sys.stderr)
        failure_path = _manifest_path(args)
        if failure_path.parent.is_dir():
            failure = {
                "format_version": MANIFEST_FORMAT_VERSION,
                "tool": {"name": "tablegraph", "version": __version__},
                "command": args.command,
                "success": False,
                "error": str(exc),
            }
            failure_path.write_text(dumps_json(failure), encoding="utf-8")
        return 1
    staged.commit()
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "tool": {"name": "tablegraph", "version": __version__},
        "command": args.command,
        "config": config,
        "inputs": digests,
        "outputs": staged.finals,
        "success": True,
    }
    Path(manifest_path).write_text(dumps_json(manifest), encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
