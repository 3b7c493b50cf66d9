"""Command-line pipeline: preprocess -> train -> select -> evaluate.

Each stage reads the same JSON config, writes its outputs under the
workdir, and stamps them with a hash of the config sections it depends
on; a later stage refuses artifacts whose stamp disagrees with the
current config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .archive import load_tensors
from .config import ConfigError, PipelineConfig
from .corpus import (
    Corpus,
    CorpusError,
    EmptyPoolError,
    build_corpus,
    ingest_reviews,
    load_attribute_lexicon,
    load_corpus,
    load_meta,
    save_corpus,
)
from .features import NodeFeatureProvider, graph_inputs, load_vector_file
from .graphs import build_pair_graph
from .model import Model
from .selector import SelectConfig, TfidfVectorizer, objective, select_for_pair
from .training import Trainer, TrainingError

log = logging.getLogger(__name__)


class StalenessError(Exception):
    pass


def _corpus_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.paths.workdir) / "corpus"


def _check_hash(found: str | None, expected: str, producer: str) -> None:
    if found != expected:
        raise StalenessError(
            f"config hash mismatch: {producer} outputs were built with {found}, "
            f"current config gives {expected}; re-run {producer}"
        )


def cmd_preprocess(cfg: PipelineConfig) -> dict:
    cfg.validate_stage("preprocess")
    records, errors = ingest_reviews(cfg.paths.reviews, cfg.corpus.rating_threshold)
    lexicon = load_attribute_lexicon(cfg.paths.lexicon)
    corpus = build_corpus(
        records,
        lexicon,
        min_activity=cfg.corpus.min_activity,
        vocab_size=cfg.corpus.vocab_size,
        ratios=cfg.corpus.ratios,
        seed=cfg.seed,
    )
    out = _corpus_dir(cfg)
    save_corpus(
        corpus,
        out,
        extra_meta={"config_hash": cfg.preprocess_hash(), "ingest_errors": len(errors)},
    )
    stats = corpus.stats()
    stats["ingest_errors"] = len(errors)
    return stats


def _load_processed(cfg: PipelineConfig) -> Corpus:
    out = _corpus_dir(cfg)
    if not out.exists():
        raise StalenessError(f"no processed corpus at {out}; run preprocess first")
    _check_hash(load_meta(out).get("config_hash"), cfg.preprocess_hash(), "preprocess")
    return load_corpus(out)


def _build_provider(cfg: PipelineConfig) -> NodeFeatureProvider:
    word_table = None
    if cfg.paths.attribute_vectors:
        word_table = load_vector_file(cfg.paths.attribute_vectors)
    sentence_table = None
    if cfg.paths.sentence_vectors:
        sentence_table = load_vector_file(cfg.paths.sentence_vectors)
    return NodeFeatureProvider(
        hidden=cfg.model.hidden,
        word_table=word_table,
        sentence_table=sentence_table,
        use_avg_word_embeddings=cfg.ablations.use_avg_word_embeddings,
    )


def _apply_ablations(cfg: PipelineConfig) -> PipelineConfig:
    cfg.model.disable_gat = cfg.model.disable_gat or cfg.ablations.disable_gat
    cfg.model.disable_dcn = cfg.model.disable_dcn or cfg.ablations.disable_dcn
    cfg.selection.disable_ilp = cfg.selection.disable_ilp or cfg.ablations.disable_ilp
    return cfg


def cmd_train(cfg: PipelineConfig, resume: str | None = None):
    cfg = _apply_ablations(cfg)
    cfg.validate_stage("train")
    corpus = _load_processed(cfg)
    provider = _build_provider(cfg)
    trainer = Trainer(
        corpus,
        provider,
        cfg.model,
        cfg.training,
        workdir=cfg.paths.workdir,
        seed=cfg.seed,
        self_loops=cfg.graph.self_loops,
        restrict_to_item_attributes=cfg.graph.restrict_to_item_attributes,
        config_hash=cfg.train_hash(),
    )
    if resume:
        trainer.load_checkpoint(resume, resume=True)
    best = trainer.run()
    provider.report_misses()
    return best


def _best_checkpoint(cfg: PipelineConfig) -> Path:
    ckpt_dir = Path(cfg.paths.workdir) / "checkpoints"
    manifest = ckpt_dir / "best.json"
    if not manifest.exists():
        raise StalenessError(f"no best-checkpoint manifest at {manifest}; run train first")
    doc = json.loads(manifest.read_text(encoding="utf-8"))
    _check_hash(doc.get("config_hash"), cfg.train_hash(), "train")
    return ckpt_dir / doc["checkpoint"]


def cmd_select(cfg: PipelineConfig, checkpoint: str | None = None) -> dict:
    cfg = _apply_ablations(cfg)
    cfg.validate_stage("select")
    corpus = _load_processed(cfg)
    provider = _build_provider(cfg)
    model = Model(cfg.model, len(corpus.users), len(corpus.items), provider.sentence_dim)
    ckpt_path = Path(checkpoint) if checkpoint else _best_checkpoint(cfg)
    tensors, meta = load_tensors(ckpt_path)
    if not checkpoint:
        _check_hash(meta.get("config_hash"), cfg.train_hash(), "train")
    params = {}
    for name, init in model.init_params(cfg.seed).items():
        key = f"param.{name}"
        if key not in tensors or tensors[key].shape != init.shape:
            raise StalenessError(f"checkpoint tensor {key!r} missing or misshapen")
        params[name] = tensors[key]
    user_rows = {u: i for i, u in enumerate(corpus.users)}
    item_rows = {c: i for i, c in enumerate(corpus.items)}
    train_words = [
        list(corpus.sentences[sid].words)
        for rid in sorted(corpus.split.train)
        for sid in corpus.reviews[rid].sentence_ids
    ]
    vectorizer = TfidfVectorizer(train_words)

    def one_pair(pair):
        user_id, item_id = pair
        try:
            graph = build_pair_graph(
                corpus, user_id, item_id, "eval",
                self_loops=cfg.graph.self_loops,
                restrict_to_item_attributes=cfg.graph.restrict_to_item_attributes,
            )
        except EmptyPoolError:
            log.warning("select: skipping (%s, %s): empty pool", user_id, item_id)
            return None
        inputs = graph_inputs(graph, corpus, provider, user_rows[user_id], item_rows[item_id])
        trace = model.forward(graph, inputs, params)
        words = [list(corpus.sentences[s].words) for s in graph.sentence_ids]
        sel, order = select_for_pair(trace.scores, words, vectorizer, cfg.selection)
        chosen_global = [order[i] for i in sel.indices]
        # record ids in descending-score order for readable explanations
        chosen_global.sort(key=lambda i: (-trace.scores[i], i))
        return {
            "user_id": user_id,
            "item_id": item_id,
            "sentence_ids": [graph.sentence_ids[i] for i in chosen_global],
            "objective": sel.objective,
            "solver": sel.solver,
        }

    pairs = corpus.pairs("test")
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one_pair, pairs))
    else:
        results = [one_pair(p) for p in pairs]
    out = Path(cfg.paths.workdir) / "selections.jsonl"
    skipped = 0
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config_hash": cfg.select_hash()}, sort_keys=True) + "\n")
        for rec in results:
            if rec is None:
                skipped += 1
                continue
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return {"pairs": len(pairs) - skipped, "skipped": skipped, "path": str(out)}


def cmd_evaluate(cfg: PipelineConfig, selections: str | None = None) -> metrics.EvalReport:
    cfg = _apply_ablations(cfg)
    cfg.validate_stage("evaluate")
    corpus = _load_processed(cfg)
    path = Path(selections) if selections else Path(cfg.paths.workdir) / "selections.jsonl"
    if not path.exists():
        raise StalenessError(f"no selections at {path}; run select first")
    records = []
    missing = 0
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() and not selections:
            doc = json.loads(header)
            _check_hash(doc.get("config_hash"), cfg.select_hash(), "select")
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            truth_ids = corpus.ground_truth_sentences(rec["user_id"], rec["item_id"], "test")
            if not truth_ids:
                missing += 1
                continue
            pred_sents = [list(corpus.sentences[s].words) for s in rec["sentence_ids"]]
            truth_sents = [list(corpus.sentences[s].words) for s in truth_ids]
            pred_attrs: set[int] = set()
            for sid in rec["sentence_ids"]:
                pred_attrs |= corpus.sentences[sid].attributes
            truth_attrs: set[int] = set()
            for sid in truth_ids:
                truth_attrs |= corpus.sentences[sid].attributes
            records.append(
                {
                    "pred_sentences": pred_sents,
                    "truth_sentences": truth_sents,
                    "pred_attrs": pred_attrs,
                    "truth_attrs": truth_attrs,
                }
            )
    report = metrics.evaluate_pairs(records)
    report.excluded = missing
    out = Path(cfg.paths.workdir) / "evaluation.json"
    out.write_text(json.dumps(report.to_dict(), sort_keys=True), encoding="utf-8")
    return report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recexplain",
        description="Extractive review-sentence explanations for recommended items.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in [
        ("preprocess", "ingest and preprocess the review corpus"),
        ("train", "train the sentence scoring model"),
        ("select", "pick top-K explanation sentences per test pair"),
        ("evaluate", "score selections against held-out reviews"),
    ]:
        sp = sub.add_parser(name, help=desc)
        sp.add_argument("--config", required=True, help="path to the JSON pipeline config")
        sp.add_argument("--workdir", help="override paths.workdir")
        sp.add_argument("--seed", type=int, help="override the pipeline seed")
        sp.add_argument("--workers", type=int, help="parallel workers (must not change results)")
        sp.add_argument("--no-gat", action="store_true", help="drop the graph attention stack")
        sp.add_argument("--no-dcn", action="store_true", help="replace feature crossing with one linear layer")
        sp.add_argument("--no-ilp", action="store_true", help="select by descending score only")
        sp.add_argument("--avg-word-embeddings", action="store_true", help="average word vectors instead of sentence vectors")
        if name == "train":
            sp.add_argument("--resume", help="checkpoint to resume from")
        if name == "select":
            sp.add_argument("--checkpoint", help="explicit checkpoint (default: best)")
        if name == "evaluate":
            sp.add_argument("--selections", help="explicit selections file")
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    if args.workdir:
        cfg.paths.workdir = args.workdir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.no_gat:
        cfg.ablations.disable_gat = True
    if args.no_dcn:
        cfg.ablations.disable_dcn = True
    if args.no_ilp:
        cfg.ablations.disable_ilp = True
    if args.avg_word_embeddings:
        cfg.ablations.use_avg_word_embeddings = True
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "preprocess":
            stats = cmd_preprocess(cfg)
            print(json.dumps(stats, sort_keys=True))
        elif args.command == "train":
            best = cmd_train(cfg, resume=getattr(args, "resume", None))
            print(
                f"best epoch {best.epoch}: val BLEU-4 {best.val_bleu4:.4f} "
                f"(BLEU-1 {best.val_bleu1:.4f}, BLEU-2 {best.val_bleu2:.4f})"
            )
        elif args.command == "select":
            info = cmd_select(cfg, checkpoint=getattr(args, "checkpoint", None))
            print(json.dumps(info, sort_keys=True))
        elif args.command == "evaluate":
            report = cmd_evaluate(cfg, selections=getattr(args, "selections", None))
            print(report.format_table())
    except (ConfigError, CorpusError, StalenessError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
