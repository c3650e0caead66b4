"""Command-line interface: one experiment config file, one subcommand per stage.

    subparse substitute -c exp.yaml     substitution JSON
    subparse extract    -c exp.yaml     attention archive (target + variants)
    subparse induce     -c exp.yaml     predicted trees (CoNLL-U)
    subparse eval       -c exp.yaml     UUAS / relation-recall reports
    subparse sweep      -c exp.yaml     (layer, k) score grid
    subparse agreement  -c exp.yaml     subject-verb edge recall report
    subparse headsel    -c exp.yaml     head inventory + directed parsing report

Every report embeds the config hash and provider handshake; re-running a
subcommand with unchanged config and caches leaves outputs untouched.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback

from . import pipeline, report, substitution
from .agreement import (
    CONDITIONAL_MI_RECALL,
    agreement_recall,
    generate_agreement,
    save_corpus,
)
from .archive import ArchiveError
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import ROOT, CorpusError, Sentence, load_conllu_file
from .evaluation import (
    EvalConfig,
    EvalError,
    SweepCell,
    corpus_uuas,
    relation_recall,
    sweep,
    uas_las,
)
from .headsel import induce_directed, select_heads
from .induction import AggregationSpec, InducedTree, collapse_heads, induce, tree_to_conllu
from .pipeline import MissingArtifactError
from .provider import ProviderError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_PROVIDER = 4
EXIT_DATA = 5


def _eval_config(config: ExperimentConfig) -> EvalConfig:
    return EvalConfig(exclude_punct=config.evaluation.exclude_punct,
                      scheme=config.evaluation.scheme,
                      macro=config.evaluation.macro,
                      base_labels=config.evaluation.base_labels)


def _agg_spec(config: ExperimentConfig, layer: int) -> AggregationSpec:
    return AggregationSpec(layer=layer,
                           head_mode=config.aggregation.head_mode,
                           head=config.aggregation.head,
                           include_target=config.aggregation.include_target)


def _out(config: ExperimentConfig, name: str) -> str:
    return os.path.join(config.paths.output_dir, name)


def _tree_path(config: ExperimentConfig, layer: int, k: int) -> str:
    return _out(config, f"trees-L{layer}-k{k}.conllu")


def _metadata(config: ExperimentConfig, provider_meta: dict, command: str) -> dict:
    return {"config_hash": config.semantic_hash(), "provider": provider_meta,
            "command": command}


def _provider_meta_from_substitutions(config: ExperimentConfig) -> dict:
    from .substitution import load_substitutions

    path = pipeline.substitutions_path(config)
    if os.path.exists(path):
        stored, _ = load_substitutions(path)
        return stored.get("provider", {})
    return {}


def _grid_k(config: ExperimentConfig) -> list[int]:
    return sorted(set(config.k_values) | {0})


# -- subcommands ---------------------------------------------------------------


def cmd_substitute(config: ExperimentConfig, force: bool) -> int:
    sentences = pipeline.load_eval_corpus(config)
    path = pipeline.substitutions_path(config)
    if force and os.path.exists(path):
        os.remove(path)
    with pipeline.open_provider(config) as provider:
        hello = provider.hello()
        meta = pipeline.provider_metadata(hello, config)
        pipeline.ensure_substitutions(
            config, sentences, provider,
            {"provider": meta, "config_hash": config.semantic_hash()})
    print(f"substitutions: {path}")
    return EXIT_OK


def cmd_extract(config: ExperimentConfig, force: bool) -> int:
    sentences = pipeline.load_eval_corpus(config)
    with pipeline.open_provider(config) as provider:
        hello = provider.hello()
        meta = pipeline.provider_metadata(hello, config)
        subst = pipeline.ensure_substitutions(
            config, sentences, provider,
            {"provider": meta, "config_hash": config.semantic_hash()})
        sequences = pipeline.collect_sequences(sentences, subst)
        path = pipeline.archive_path(config, sequences, sorted(set(config.layers)))
        if force and os.path.exists(path):
            os.remove(path)
        pipeline.ensure_archive(config, provider, hello, sequences,
                                list(config.layers))
    print(f"attention archive: {path}")
    return EXIT_OK


def cmd_induce(config: ExperimentConfig, force: bool) -> int:
    sentences = pipeline.load_eval_corpus(config)
    subst = pipeline.require_substitutions(config, sentences)
    sequences = pipeline.collect_sequences(sentences, subst)
    archive = pipeline.archive_path(config, sequences, sorted(set(config.layers)))
    if not os.path.exists(archive):
        raise MissingArtifactError(
            f"attention archive {archive} not found; run `subparse extract` first")
    source = pipeline.open_archive_source(archive)
    provider_meta = _provider_meta_from_substitutions(config)
    config_hash = config.semantic_hash()

    targets = [_tree_path(config, layer, k)
               for layer in config.layers for k in _grid_k(config)]
    if not force and report.outputs_current(targets, config_hash):
        print("trees up to date")
        return EXIT_OK

    for layer in config.layers:
        spec = _agg_spec(config, layer)
        for k in _grid_k(config):
            blocks = []
            for sentence, subst_set in zip(sentences, subst):
                target = collapse_heads(source(sentence.words)[layer], spec)
                variants = []
                if k > 0:
                    restricted = subst_set.restrict(k)
                    variants = [collapse_heads(source(words)[layer], spec)
                                for words in restricted.all_variant_words()]
                tree, _ = induce(target, variants, spec,
                                 symmetrize_mode=config.symmetrize)
                blocks.append(tree_to_conllu(tree, sentence.words, sentence.upos,
                                             sent_id=sentence.sent_id))
            path = _tree_path(config, layer, k)
            comments = report.provenance_comments(config_hash, provider_meta,
                                                  "induce")
            text = "\n".join(comments) + "\n" + "\n".join(blocks)
            os.makedirs(config.paths.output_dir, exist_ok=True)
            with open(path, "w", encoding="utf-8") as handle:
                handle.write(text)
            print(f"trees: {path}")
    return EXIT_OK


def _load_predicted_trees(path, expected: list[Sentence]) -> list[InducedTree]:
    predicted_sentences = load_conllu_file(path)
    if len(predicted_sentences) != len(expected):
        raise EvalError(f"{path}: {len(predicted_sentences)} trees for "
                        f"{len(expected)} sentences")
    trees = []
    for predicted, sentence in zip(predicted_sentences, expected):
        if predicted.words != sentence.words:
            raise EvalError(f"{path}: word mismatch in {sentence.sent_id!r}")
        edges = []
        root = 0
        for token in predicted.tokens:
            if token.gold_head == ROOT:
                root = token.index
            else:
                pair = (min(token.index, token.gold_head),
                        max(token.index, token.gold_head))
                edges.append(pair)
        trees.append(InducedTree(n=predicted.n, edges=tuple(sorted(edges)),
                                 root=root))
    return trees


def cmd_eval(config: ExperimentConfig, force: bool) -> int:
    sentences = pipeline.load_eval_corpus(config)
    cfg = _eval_config(config)
    provider_meta = _provider_meta_from_substitutions(config)
    config_hash = config.semantic_hash()
    out_tsv = _out(config, "eval.tsv")
    out_json = _out(config, "eval.json")
    if not force and report.outputs_current([out_tsv, out_json], config_hash):
        print("eval report up to date")
        return EXIT_OK

    rows = []
    detail = {}
    best_cell = None
    for layer in config.layers:
        for k in _grid_k(config):
            path = _tree_path(config, layer, k)
            if not os.path.exists(path):
                raise MissingArtifactError(
                    f"tree file {path} not found; run `subparse induce` first")
            trees = _load_predicted_trees(path, sentences)
            pairs = [(tree, sentence) for tree, sentence in zip(trees, sentences)
                     if sentence.usable and sentence.gold is not None]
            cell_key = f"L{layer}-k{k}"
            cell: dict = {"layer": layer, "k": k}
            if "uuas" in config.evaluation.metrics:
                summary = corpus_uuas(pairs, cfg)
                cell.update(uuas=summary["uuas"], matched=summary["matched"],
                            total=summary["total"])
                detail.setdefault(cell_key, {})["uuas"] = {
                    key: summary[key] for key in
                    ("uuas", "micro", "macro", "matched", "total", "sentences")}
                detail[cell_key]["per_sentence"] = summary["per_sentence"]
            if "relation_recall" in config.evaluation.metrics:
                relations = relation_recall(pairs, cfg)
                detail.setdefault(cell_key, {})["relations"] = relations
                if best_cell is None or (cell.get("uuas") or 0) >= (best_cell[0] or 0):
                    best_cell = (cell.get("uuas"), relations)
            rows.append(cell)

    comments = report.provenance_comments(config_hash, provider_meta, "eval")
    comments.append(f"# scheme = {config.evaluation.scheme}")
    table_rows = [[str(row["layer"]), str(row["k"]), report.pct(row.get("uuas")),
                   str(row.get("matched", "-")), str(row.get("total", "-"))]
                  for row in rows]
    report.write_tsv(out_tsv, comments, ["layer", "k", "uuas", "matched", "total"],
                     table_rows)
    report.write_json(out_json, {
        "metadata": _metadata(config, provider_meta, "eval"),
        "scheme": config.evaluation.scheme,
        "cells": rows,
        "detail": detail,
    })
    print(f"eval report: {out_tsv}")

    if any("uuas" in row for row in rows):
        cells = [SweepCell(layer=row["layer"], k=row["k"], uuas=row.get("uuas"))
                 for row in rows]
        report.sweep_figure(cells, _out(config, "eval-uuas.png"))
    if best_cell is not None and best_cell[1]:
        report.relation_figure(best_cell[1], _out(config, "eval-relations.png"))
    return EXIT_OK


def cmd_sweep(config: ExperimentConfig, force: bool) -> int:
    sentences = pipeline.load_eval_corpus(config)
    cfg = _eval_config(config)
    config_hash = config.semantic_hash()
    out_tsv = _out(config, "sweep.tsv")
    out_json = _out(config, "sweep.json")
    if not force and report.outputs_current([out_tsv, out_json], config_hash):
        print("sweep report up to date")
        return EXIT_OK

    with pipeline.open_provider(config) as provider:
        hello = provider.hello()
        provider_meta = pipeline.provider_metadata(hello, config)
        subst = pipeline.ensure_substitutions(
            config, sentences, provider,
            {"provider": provider_meta, "config_hash": config_hash})
        sequences = pipeline.collect_sequences(sentences, subst)
        archive = pipeline.ensure_archive(config, provider, hello, sequences,
                                          list(config.layers))
    source = pipeline.open_archive_source(archive)
    spec = _agg_spec(config, config.layers[0])
    cells = sweep(sentences, list(config.layers), list(config.k_values), subst,
                  source, spec, cfg, symmetrize_mode=config.symmetrize)

    comments = report.provenance_comments(config_hash, provider_meta, "sweep")
    comments.append(f"# scheme = {config.evaluation.scheme}")
    # wide layout: one row per layer, target-only then each k, then the gain
    ks = sorted({c.k for c in cells if c.k > 0})
    by_cell = {(c.layer, c.k): c for c in cells}
    header = ["layer", "T."] + [f"k={k}" for k in ks] + ["delta"]
    rows = []
    for layer in config.layers:
        base = by_cell.get((layer, 0))
        row = [str(layer), report.pct(base.uuas if base else None)]
        for k in ks:
            cell = by_cell.get((layer, k))
            row.append(report.pct(cell.uuas if cell else None))
        last = by_cell.get((layer, ks[-1])) if ks else None
        if last is not None and last.delta is not None:
            row.append(f"{100.0 * last.delta:+.1f}")
        else:
            row.append("-")
        rows.append(row)
    report.write_tsv(out_tsv, comments, header, rows)
    report.write_json(out_json, {
        "metadata": _metadata(config, provider_meta, "sweep"),
        "scheme": config.evaluation.scheme,
        "cells": [{"layer": c.layer, "k": c.k, "uuas": c.uuas, "delta": c.delta,
                   "matched": c.matched, "total": c.total, "error": c.error}
                  for c in cells],
    })
    report.sweep_figure(cells, _out(config, "sweep.png"))
    print(f"sweep report: {out_tsv}")
    return EXIT_OK


def cmd_agreement(config: ExperimentConfig, force: bool) -> int:
    config_hash = config.semantic_hash()
    out_tsv = _out(config, "agreement.tsv")
    out_json = _out(config, "agreement.json")
    if not force and report.outputs_current([out_tsv, out_json], config_hash):
        print("agreement report up to date")
        return EXIT_OK

    layer = config.layers[0]
    spec = _agg_spec(config, layer)
    rows = []
    with pipeline.open_provider(config) as provider:
        hello = provider.hello()
        provider_meta = pipeline.provider_metadata(hello, config)
        for kind in config.agreement.kinds:
            examples = generate_agreement(kind, config.agreement.count,
                                          config.agreement.seed)
            os.makedirs(config.paths.output_dir, exist_ok=True)
            save_corpus(_out(config, f"agreement-{kind}.conllu"), examples)
            subst_sets = []
            for example in examples:
                subst_sets.append(substitution.generate(
                    example.sentence.words, example.sentence.upos, config.max_k,
                    provider,
                    slack_factor=config.substitution.slack_factor,
                    strict_pos=config.substitution.strict_pos,
                    include_propn=config.substitution.include_propn))
            sequences = pipeline.collect_sequences(
                [e.sentence for e in examples], subst_sets)
            archive = pipeline.ensure_archive(config, provider, hello, sequences,
                                              [layer])
            source = pipeline.open_archive_source(archive)
            for k in _grid_k(config):
                trees = []
                for example, subst_set in zip(examples, subst_sets):
                    target = collapse_heads(source(example.sentence.words)[layer],
                                            spec)
                    variants = []
                    if k > 0:
                        restricted = subst_set.restrict(k)
                        variants = [collapse_heads(source(words)[layer], spec)
                                    for words in restricted.all_variant_words()]
                    tree, _ = induce(target, variants, spec,
                                     symmetrize_mode=config.symmetrize)
                    trees.append(tree)
                hits, total = agreement_recall(trees, examples)
                rows.append({"kind": kind, "k": k, "hits": hits, "total": total,
                             "recall": hits / total if total else None})

    comments = report.provenance_comments(config_hash, provider_meta, "agreement")
    for kind, value in sorted(CONDITIONAL_MI_RECALL.items()):
        comments.append(f"# conditional_mi_reference {kind} = {value}")
    table = [[row["kind"], str(row["k"]), report.pct(row["recall"]),
              str(row["hits"]), str(row["total"])] for row in rows]
    report.write_tsv(out_tsv, comments, ["kind", "k", "recall", "hits", "total"],
                     table)
    report.write_json(out_json, {
        "metadata": _metadata(config, provider_meta, "agreement"),
        "rows": rows,
        "conditional_mi_reference": CONDITIONAL_MI_RECALL,
    })
    report.agreement_figure(rows, CONDITIONAL_MI_RECALL, _out(config, "agreement.png"))
    print(f"agreement report: {out_tsv}")
    return EXIT_OK


def cmd_headsel(config: ExperimentConfig, force: bool) -> int:
    if config.headsel.selection is None:
        raise ConfigError("headsel.selection treebank not configured")
    config_hash = config.semantic_hash()
    out_tsv = _out(config, "headsel.tsv")
    out_json = _out(config, "headsel.json")
    if not force and report.outputs_current([out_tsv, out_json], config_hash):
        print("headsel report up to date")
        return EXIT_OK

    eval_sentences = pipeline.load_eval_corpus(config)
    selection_sentences = load_conllu_file(config.headsel.selection,
                                           scheme=config.evaluation.scheme)
    selection_sentences = [s for s in selection_sentences if s.usable]
    selection_sentences = selection_sentences[:config.headsel.selection_size]
    overlap = {s.words for s in selection_sentences} & {s.words for s in eval_sentences}
    if overlap:
        raise ConfigError(
            f"selection corpus overlaps evaluation corpus ({len(overlap)} sentences)")

    cfg = _eval_config(config)
    label_rows = []
    tree_rows = []
    inventories = {}
    with pipeline.open_provider(config) as provider:
        hello = provider.hello()
        provider_meta = pipeline.provider_metadata(hello, config)
        all_layers = pipeline.all_model_layers(hello)
        meta = {"provider": provider_meta, "config_hash": config_hash}
        subst_sel = pipeline.ensure_substitutions(
            config, selection_sentences, provider, meta,
            corpus_path=config.headsel.selection)
        subst_eval = pipeline.ensure_substitutions(config, eval_sentences,
                                                   provider, meta)
        seq_sel = pipeline.collect_sequences(selection_sentences, subst_sel)
        seq_eval = pipeline.collect_sequences(eval_sentences, subst_eval)
        src_sel = pipeline.open_archive_source(pipeline.ensure_archive(
            config, provider, hello, seq_sel, all_layers))
        src_eval = pipeline.open_archive_source(pipeline.ensure_archive(
            config, provider, hello, seq_eval, all_layers))

    def dsm_tensor(source, sentence, subst_set, k):
        target = source.tensor(sentence.words)
        variants = []
        if k > 0:
            variants = [source.tensor(words)
                        for words in subst_set.restrict(k).all_variant_words()]
        return pipeline.tensor_mean(target, variants,
                                    include_target=config.aggregation.include_target)

    for k in _grid_k(config):
        sel_items = [(s, dsm_tensor(src_sel, s, subst, k))
                     for s, subst in zip(selection_sentences, subst_sel)
                     if s.gold is not None]
        inventory = select_heads(
            sel_items,
            labels=list(config.headsel.labels) if config.headsel.labels else None,
            use_base_labels=config.evaluation.base_labels)
        inventories[k] = inventory
        inventory.save(_out(config, f"headsel-inventory-k{k}.json"))
        for label in config.headsel.report_labels:
            choice = inventory.entries.get((label, "dep_to_parent"))
            label_rows.append({
                "label": label, "k": k,
                "accuracy": None if choice is None else choice.accuracy,
                "layer": None if choice is None else choice.layer,
                "head": None if choice is None else choice.head,
            })
        pairs = []
        for sentence, subst_set in zip(eval_sentences, subst_eval):
            if not sentence.usable or sentence.gold is None:
                continue
            tensor = dsm_tensor(src_eval, sentence, subst_set, k)
            root = sentence.gold.root if config.headsel.use_gold_root else None
            tree = induce_directed(sentence.words, tensor, inventory, root=root)
            pairs.append((tree, sentence))
        scores = uas_las(pairs, cfg)
        tree_rows.append({"k": k, "uas": scores["uas"], "las": scores["las"],
                          "total": scores["total"]})

    comments = report.provenance_comments(config_hash, provider_meta, "headsel")
    table = [[row["label"], str(row["k"]), report.pct(row["accuracy"]),
              str(row["layer"]), str(row["head"])] for row in label_rows]
    table += [["UAS", str(row["k"]), report.pct(row["uas"]), "-", "-"]
              for row in tree_rows]
    table += [["LAS", str(row["k"]), report.pct(row["las"]), "-", "-"]
              for row in tree_rows]
    report.write_tsv(out_tsv, comments,
                     ["label_or_metric", "k", "score", "layer", "head"], table)
    report.write_json(out_json, {
        "metadata": _metadata(config, provider_meta, "headsel"),
        "head_selection": label_rows,
        "tree_induction": tree_rows,
        "inventories": {str(k): inv.to_dict() for k, inv in inventories.items()},
    })
    report.headsel_figure(label_rows, tree_rows, _out(config, "headsel.png"))
    print(f"headsel report: {out_tsv}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


_COMMANDS = {
    "substitute": cmd_substitute,
    "extract": cmd_extract,
    "induce": cmd_induce,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "agreement": cmd_agreement,
    "headsel": cmd_headsel,
}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("-c", "--config", required=True, help="experiment YAML file")
    parser.add_argument("--force", action="store_true",
                        help="rewrite outputs even when up to date")
    parser.add_argument("--output-dir", help="overrides paths.output_dir")
    parser.add_argument("--cache-dir", help="overrides paths.cache_dir")
    parser.add_argument("--scheme", choices=["UD", "SUD"],
                        help="overrides evaluation.scheme")
    parser.add_argument("--layers", help="overrides layers (comma-separated)")
    parser.add_argument("--k-values", help="overrides k_values (comma-separated)")
    parser.add_argument("--workers", type=int, help="overrides workers")


def _overrides(args) -> dict:
    overrides: dict = {
        "paths.output_dir": args.output_dir,
        "paths.cache_dir": args.cache_dir,
        "evaluation.scheme": args.scheme,
        "workers": args.workers,
    }
    if args.layers:
        overrides["layers"] = [int(x) for x in args.layers.split(",")]
    if args.k_values:
        overrides["k_values"] = [int(x) for x in args.k_values.split(",")]
    return overrides


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="subparse", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        _add_common(subparsers.add_parser(name))
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, _overrides(args))
        return _COMMANDS[args.command](config, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (CorpusError, ArchiveError, EvalError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
