"""Relevance targets, the multi-task loss, Adam, and the training loop.

Supervision: each candidate sentence's relevance target is its best
smoothed sentence-BLEU against the target review's sentences, so target
sentences themselves sit at exactly 1.  Ranking uses a pairwise logistic
loss over sampled candidate pairs with distinct targets; attribute nodes
get a binary cross-entropy term.  The combined objective is
lambda * rank_loss + (1 - lambda) * attribute_loss.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .archive import load_tensors, save_tensors
from .corpus import Corpus, EmptyPoolError
from .features import GraphInputs, NodeFeatureProvider, graph_inputs
from .graphs import PairGraph, build_pair_graph
from .model import Model, ModelConfig

log = logging.getLogger(__name__)

TIE_TOL = 1e-6


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.5
    batch_size: int = 16
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    pair_budget: int = 200
    all_pairs: bool = False
    balanced_bce: bool = True
    patience: int = 10

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise TrainingError(f"lambda must be in [0, 1], got {self.lam}")


def relevance_targets(candidates, ground_truth) -> np.ndarray:
    """Max smoothed sentence-BLEU of each candidate against the target
    review's sentences.  `candidates`/`ground_truth` are lists of word
    tuples; targets are cacheable and deterministic.
    """
    if not ground_truth:
        raise TrainingError("relevance targets need a non-empty ground truth")
    refs = [list(g) for g in ground_truth]
    return np.array(
        [max(metrics.sentence_bleu(list(c), [r]) for r in refs) for c in candidates]
    )


def sample_rank_pairs(
    targets: np.ndarray, budget: int, rng: np.random.Generator, all_pairs: bool = False, tol: float = TIE_TOL
) -> np.ndarray:
    """Unordered candidate pairs with |r_i - r_j| > tol, uniformly sampled
    down to `budget` unless `all_pairs` keeps the full set.  Shape (P, 2).
    """
    n = targets.shape[0]
    diff = np.abs(targets[:, None] - targets[None, :])
    ii, jj = np.where(np.triu(diff > tol, k=1))
    pairs = np.stack([ii, jj], axis=1) if ii.size else np.zeros((0, 2), dtype=np.int64)
    if all_pairs or pairs.shape[0] <= budget:
        return pairs
    pick = rng.choice(pairs.shape[0], size=budget, replace=False)
    return pairs[np.sort(pick)]


def pairwise_rank_loss(
    scores: np.ndarray, targets: np.ndarray, pairs: np.ndarray, tol: float = TIE_TOL
) -> tuple[float, np.ndarray]:
    """Mean logistic ranking loss over the given pairs and its gradient on
    the scores.  A pair oriented so the higher-target side leads
    contributes -log sigmoid(g_hi - g_lo); ties (within tol) contribute 0,
    and swapping a pair's order changes nothing.
    """
    grad = np.zeros_like(scores)
    if pairs.shape[0] == 0:
        return 0.0, grad
    i = pairs[:, 0]
    j = pairs[:, 1]
    sign = np.where(targets[i] - targets[j] > tol, 1.0, np.where(targets[j] - targets[i] > tol, -1.0, 0.0))
    d = sign * (scores[i] - scores[j])
    live = sign != 0.0
    # -log sigmoid(d) = softplus(-d)
    loss_terms = np.where(live, np.logaddexp(0.0, -d), 0.0)
    count = int(live.sum())
    if count == 0:
        return 0.0, grad
    # d/d(g_i) of softplus(-sign*(g_i - g_j)) = -sign * sigmoid(-sign*(g_i-g_j))
    coeff = np.where(live, -sign / (1.0 + np.exp(d)), 0.0) / count
    np.add.at(grad, i, coeff)
    np.add.at(grad, j, -coeff)
    return float(loss_terms.sum() / count), grad


def attribute_loss(
    probs: np.ndarray, labels: np.ndarray, balanced: bool = True
) -> tuple[float, np.ndarray]:
    """Mean attribute cross-entropy and its gradient on the probabilities.

    The base form sums -y*log(p) only; `balanced` (default) adds the
    negative-class term -(1-y)*log(1-p), without which the loss is
    minimized by pushing every probability to 1.
    """
    m = probs.shape[0]
    if m == 0:
        return 0.0, np.zeros(0)
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    y = labels
    loss = -(y * np.log(p))
    grad = -(y / p)
    if balanced:
        loss -= (1.0 - y) * np.log(1.0 - p)
        grad += (1.0 - y) / (1.0 - p)
    return float(loss.sum() / m), grad / m


def combined_loss(rank: float, attr: float, lam: float) -> float:
    return lam * rank + (1.0 - lam) * attr


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name!r} at step {t}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainPair:
    user_id: str
    item_id: str
    graph: PairGraph
    inputs: GraphInputs
    targets: np.ndarray | None  # None for validation pairs
    truth_words: list[tuple[str, ...]]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rank_loss: float
    attr_loss: float
    val_bleu1: float
    val_bleu2: float
    val_bleu4: float


class Trainer:
    """Drives optimization with validation-based model selection.

    Deterministic for a fixed seed: epoch shuffles and per-graph pair
    samples draw from generators keyed by (seed, epoch[, position]), so a
    resumed run retraces the original trajectory bit for bit.
    """

    def __init__(
        self,
        corpus: Corpus,
        provider: NodeFeatureProvider,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        workdir,
        seed: int = 0,
        self_loops: bool = True,
        restrict_to_item_attributes: bool = True,
        config_hash: str = "",
    ):
        train_cfg.validate()
        self.corpus = corpus
        self.provider = provider
        self.train_cfg = train_cfg
        self.seed = seed
        self.workdir = Path(workdir)
        self.config_hash = config_hash
        self.user_rows = {u: i for i, u in enumerate(corpus.users)}
        self.item_rows = {c: i for i, c in enumerate(corpus.items)}
        self.model = Model(
            model_cfg, len(corpus.users), len(corpus.items), provider.sentence_dim
        )
        self.params = self.model.init_params(seed)
        self.adam = AdamState.init(self.params)
        self.start_epoch = 0
        self.best_epoch = -1
        self.best_metric = -np.inf
        self.log_lines: list[str] = []

        self.train_pairs = self._assemble("train", self_loops, restrict_to_item_attributes)
        self.valid_pairs = self._assemble("valid", self_loops, restrict_to_item_attributes)
        if not self.train_pairs:
            raise TrainingError("no usable training pairs")

    def _assemble(self, part: str, self_loops: bool, restrict: bool) -> list[TrainPair]:
        mode = "train" if part == "train" else "eval"
        out: list[TrainPair] = []
        skipped = 0
        for user_id, item_id in self.corpus.pairs(part):
            truth_ids = self.corpus.ground_truth_sentences(user_id, item_id, part)
            truth_words = [self.corpus.sentences[s].words for s in truth_ids]
            if not truth_words:
                skipped += 1
                continue
            try:
                graph = build_pair_graph(
                    self.corpus, user_id, item_id, mode,
                    self_loops=self_loops, restrict_to_item_attributes=restrict,
                )
            except EmptyPoolError:
                skipped += 1
                continue
            inputs = graph_inputs(
                graph, self.corpus, self.provider,
                self.user_rows[user_id], self.item_rows[item_id],
            )
            targets = None
            if part == "train":
                cand_words = [self.corpus.sentences[s].words for s in graph.sentence_ids]
                targets = relevance_targets(cand_words, truth_words)
            out.append(TrainPair(user_id, item_id, graph, inputs, targets, truth_words))
        if skipped:
            log.warning("%s: skipped %d pairs with empty pools or ground truth", part, skipped)
        return out

    # -- one graph ----------------------------------------------------------

    def _graph_loss(self, pair: TrainPair, rng: np.random.Generator):
        cfg = self.train_cfg
        trace = self.model.forward(pair.graph, pair.inputs, self.params)
        pairs = sample_rank_pairs(pair.targets, cfg.pair_budget, rng, all_pairs=cfg.all_pairs)
        l_rank, d_scores = pairwise_rank_loss(trace.scores, pair.targets, pairs)
        l_attr, d_probs = attribute_loss(
            trace.attr_probs, pair.graph.attr_labels, balanced=cfg.balanced_bce
        )
        loss = combined_loss(l_rank, l_attr, cfg.lam)
        grads = self.model.backward(
            trace, self.params, cfg.lam * d_scores, (1.0 - cfg.lam) * d_probs
        )
        return loss, l_rank, l_attr, grads

    # -- validation ---------------------------------------------------------

    def validate(self) -> tuple[float, float, float]:
        """Macro smoothed BLEU-{1,2,4} of the top-5 scored sentences (by
        descending score) against the held-out review, over valid pairs.
        """
        if not self.valid_pairs:
            return 0.0, 0.0, 0.0
        sums = [0.0, 0.0, 0.0]
        for pair in self.valid_pairs:
            trace = self.model.forward(pair.graph, pair.inputs, self.params)
            top = np.argsort(-trace.scores, kind="stable")[:5]
            cand = [w for idx in top for w in self.corpus.sentences[pair.graph.sentence_ids[idx]].words]
            ref = [w for words in pair.truth_words for w in words]
            for slot, max_n in enumerate((1, 2, 4)):
                sums[slot] += metrics.sentence_bleu(cand, [ref], max_n=max_n)
        n = len(self.valid_pairs)
        return sums[0] / n, sums[1] / n, sums[2] / n

    # -- training loop ------------------------------------------------------

    def run(self) -> EpochRecord:
        cfg = self.train_cfg
        ckpt_dir = self.workdir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        log_path = self.workdir / "train_log.txt"
        mode = "a" if self.start_epoch > 0 else "w"
        best_record: EpochRecord | None = None
        with open(log_path, mode, encoding="utf-8") as fh:
            if self.start_epoch == 0:
                fh.write("# epoch train_loss rank_loss attr_loss val_bleu1 val_bleu2 val_bleu4\n")
                fh.write("# validation: smoothed sentence BLEU of descending-score top-5 vs ground truth; model selected on BLEU-4\n")
            stale = 0
            for epoch in range(self.start_epoch, cfg.epochs):
                order = np.random.default_rng([self.seed, 1, epoch]).permutation(len(self.train_pairs))
                losses, rank_losses, attr_losses = [], [], []
                for start in range(0, len(order), cfg.batch_size):
                    batch = order[start : start + cfg.batch_size]
                    acc = self.model.zero_grads(self.params)
                    for pos in batch:
                        rng = np.random.default_rng([self.seed, 2, epoch, int(pos)])
                        loss, l_rank, l_attr, grads = self._graph_loss(self.train_pairs[pos], rng)
                        for name in acc:
                            acc[name] += grads[name]
                        losses.append(loss)
                        rank_losses.append(l_rank)
                        attr_losses.append(l_attr)
                    for name in acc:
                        acc[name] /= len(batch)
                    adam_step(
                        self.params, acc, self.adam, cfg.learning_rate,
                        beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
                    )
                b1, b2, b4 = self.validate()
                if not all(math.isfinite(v) for v in (b1, b2, b4)):
                    raise TrainingError(f"validation BLEU is not finite at epoch {epoch}")
                record = EpochRecord(
                    epoch=epoch,
                    loss=float(np.mean(losses)),
                    rank_loss=float(np.mean(rank_losses)),
                    attr_loss=float(np.mean(attr_losses)),
                    val_bleu1=b1,
                    val_bleu2=b2,
                    val_bleu4=b4,
                )
                line = (
                    f"{record.epoch} {record.loss:.10g} {record.rank_loss:.10g} "
                    f"{record.attr_loss:.10g} {record.val_bleu1:.10g} "
                    f"{record.val_bleu2:.10g} {record.val_bleu4:.10g}"
                )
                fh.write(line + "\n")
                fh.flush()
                self._save_checkpoint(ckpt_dir / f"epoch_{epoch}.ntar", record)
                if record.val_bleu4 > self.best_metric:
                    self.best_metric = record.val_bleu4
                    self.best_epoch = epoch
                    best_record = record
                    stale = 0
                else:
                    stale += 1
                if stale > cfg.patience:
                    log.info("early stop at epoch %d (patience %d)", epoch, cfg.patience)
                    break
        best_doc = {
            "epoch": self.best_epoch,
            "metric": self.best_metric,
            "checkpoint": f"epoch_{self.best_epoch}.ntar",
            "config_hash": self.config_hash,
        }
        (ckpt_dir / "best.json").write_text(json.dumps(best_doc, sort_keys=True), encoding="utf-8")
        return best_record if best_record is not None else record

    # -- checkpointing ------------------------------------------------------

    def _save_checkpoint(self, path, record: EpochRecord) -> None:
        tensors: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            tensors[f"param.{name}"] = p
        for name, m in self.adam.m.items():
            tensors[f"adam.m.{name}"] = m
        for name, v in self.adam.v.items():
            tensors[f"adam.v.{name}"] = v
        meta = {
            "epoch": record.epoch,
            "adam_t": self.adam.t,
            "best_epoch": self.best_epoch,
            "best_metric": self.best_metric if math.isfinite(self.best_metric) else None,
            "val_bleu4": record.val_bleu4,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "n_users": len(self.corpus.users),
            "n_items": len(self.corpus.items),
        }
        save_tensors(path, tensors, meta)

    def load_checkpoint(self, path, resume: bool = False) -> dict:
        tensors, meta = load_tensors(path)
        if self.config_hash and meta.get("config_hash") and meta["config_hash"] != self.config_hash:
            raise TrainingError(
                f"checkpoint config hash {meta['config_hash']} does not match current config"
            )
        for name, p in self.params.items():
            key = f"param.{name}"
            if key not in tensors or tensors[key].shape != p.shape:
                raise TrainingError(f"checkpoint tensor {key!r} missing or misshapen")
            self.params[name] = tensors[key]
        if resume:
            for name in self.adam.m:
                self.adam.m[name] = tensors[f"adam.m.{name}"]
                self.adam.v[name] = tensors[f"adam.v.{name}"]
            self.adam.t = meta["adam_t"]
            self.start_epoch = meta["epoch"] + 1
            self.best_epoch = meta["best_epoch"]
            self.best_metric = meta["best_metric"] if meta["best_metric"] is not None else -np.inf
        return meta
