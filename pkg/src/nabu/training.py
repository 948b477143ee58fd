"""Corpus assembly, teacher-forced training and generation."""

import csv
import logging
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .config import TASK_SIZES
from .decoding import apply_copy, beam_search
from .errors import ConfigError, GenerationRefused, MissingLanguageData
from .graph import parse_triple_file, reify, relabel_language
from .metrics import bleu

log = logging.getLogger(__name__)


@dataclass
class Example:
    graph: object
    target: np.ndarray        # BOS ... EOS
    lang: str
    references: list
    graph_id: str = None


def read_records(path, languages):
    with open(path, encoding="utf-8") as f:
        return parse_triple_file(f.read(), path=path, languages=languages)


def make_example(record, vocab, max_len=128, shared_predicates=False):
    graph = reify(record.triples, record.lang, shared_predicates)
    text = record.texts[0] if record.texts else ""
    ids = vocab.encode(text)[: max_len - 2]
    target = np.array([vocab.bos_id, *ids, vocab.eos_id])
    return Example(graph, target, record.lang, list(record.texts), record.graph_id)


def build_corpus(records_by_lang, languages, vocab, seed=0, max_len=128, shared_predicates=False):
    """Concatenate every configured language's records and shuffle with ``seed``.

    ``records_by_lang`` maps a language code to a list of GraphRecords (or
    file paths holding them).  Records whose ``lang`` disagrees with their
    key are rejected.
    """
    examples = []
    for lang in languages:
        items = records_by_lang.get(lang)
        if not items:
            raise MissingLanguageData(f"no data for language {lang}")
        if isinstance(items, (str, os.PathLike)):
            items = read_records(items, languages)
        for rec in items:
            if rec.lang != lang:
                raise ConfigError(f"record tagged {rec.lang} listed under {lang}")
            examples.append(make_example(rec, vocab, max_len, shared_predicates))
    order = np.random.default_rng(seed).permutation(len(examples))
    return [examples[i] for i in order]


def kfold_split(items, k=10, fold=0, seed=0):
    """Seeded k-fold carve-out: returns ``(rest, held_out)`` where the held-out
    part is fold ``fold`` of ``k`` near-equal folds."""
    if not 0 <= fold < k:
        raise ValueError("fold out of range")
    order = np.random.default_rng(seed).permutation(len(items))
    folds = np.array_split(order, k)
    held = set(folds[fold].tolist())
    return ([items[i] for i in range(len(items)) if i not in held],
            [items[i] for i in sorted(held)])


def source_size(example):
    return len(example.graph.nodes)


def make_batches(examples, batch_size, rng):
    """Bucket by graph size: shuffle, stable-sort by node count, cut into
    batches, then shuffle the batch order."""
    order = rng.permutation(len(examples))
    order = sorted(order, key=lambda i: source_size(examples[i]))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    token_acc: float
    wall_seconds: float


class Trainer:
    """Owns the optimiser state and per-example feature cache for one model."""

    def __init__(self, model, vocab, train_cfg):
        self.model = model
        self.vocab = vocab
        self.cfg = train_cfg
        self.adam = ad.AdamState()
        self.rng = np.random.default_rng(train_cfg.seed)
        self.epoch = 0
        self._features = {}

    def features(self, ex):
        key = id(ex)
        if key not in self._features:
            self._features[key] = (ex, self.model.featurize(ex.graph, self.vocab))
        return self._features[key][1]

    def tensors(self, examples):
        src = self.model.collate([self.features(ex) for ex in examples], self.vocab.pad_id)
        T = max(len(ex.target) for ex in examples) - 1
        tgt_in = np.full((len(examples), T), self.vocab.pad_id, dtype=np.int64)
        tgt_out = np.full((len(examples), T), self.vocab.pad_id, dtype=np.int64)
        for b, ex in enumerate(examples):
            n = len(ex.target) - 1
            tgt_in[b, :n] = ex.target[:-1]
            tgt_out[b, :n] = ex.target[1:]
        return src, tgt_in, tgt_out, tgt_out != self.vocab.pad_id

    def learning_rate(self):
        w = self.cfg.warmup_steps
        if not w:
            return self.cfg.lr
        step = self.adam.step + 1
        return self.cfg.lr * min(step / w, math.sqrt(w / step))

    def train_step(self, examples, training=True):
        src, tgt_in, tgt_out, mask = self.tensors(examples)
        self.model.store.zero_grad()
        with ad.Tape() as tape:
            loss, logits = self.model.loss(src, tgt_in, tgt_out, mask, training=training)
            tape.backward(loss)
        grads = self.model.store.grads()
        ad.clip_by_global_norm(grads, self.cfg.grad_clip)
        ad.adam_step(self.model.store, grads, self.adam, self.learning_rate(),
                     self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps)
        correct = int(((logits.data.argmax(-1) == tgt_out) & mask).sum())
        return loss.item(), int(mask.sum()), correct

    def train_epoch(self, corpus):
        if not corpus:
            raise ValueError("empty corpus")
        start = time.perf_counter()
        total_loss, tokens, correct = 0.0, 0, 0
        for idx in make_batches(corpus, self.cfg.batch_size, self.rng):
            loss, n, c = self.train_step([corpus[i] for i in idx])
            total_loss += loss * n
            tokens += n
            correct += c
        self.epoch += 1
        return EpochMetrics(self.epoch, total_loss / tokens, correct / tokens,
                            time.perf_counter() - start)

    def fit(self, corpus, epochs=None, log_path=None, checkpoint_path=None, on_epoch=None):
        """Train for ``epochs`` epochs (default from the config).

        Stops early when ``target_bleu`` is set and greedy training-set BLEU
        reaches it (checked every ``eval_every`` epochs once token accuracy
        is perfect).  A checkpoint is written after every completed epoch, so
        a diverging step leaves the last good one on disk.
        """
        epochs = self.cfg.epochs if epochs is None else epochs
        history = []
        writer = None
        if log_path:
            fh = open(log_path, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss", "token_acc", "wall_seconds"])
        try:
            for _ in range(epochs):
                m = self.train_epoch(corpus)
                history.append(m)
                log.info("epoch %d loss %.4f acc %.4f (%.1fs)", m.epoch, m.mean_loss, m.token_acc,
                         m.wall_seconds)
                if writer:
                    writer.writerow([m.epoch, f"{m.mean_loss:.6f}", f"{m.token_acc:.6f}",
                                     f"{m.wall_seconds:.3f}"])
                    fh.flush()
                if checkpoint_path:
                    save_checkpoint(self.model.store, self.model.cfg, checkpoint_path)
                if on_epoch:
                    on_epoch(m)
                if self._reached_target(corpus, m):
                    break
        finally:
            if writer:
                fh.close()
        return history

    def _reached_target(self, corpus, m):
        target = self.cfg.target_bleu
        if target is None or m.token_acc < 1.0 or m.epoch % self.cfg.eval_every:
            return False
        hyps = [generate(self.model, self.vocab, ex.graph, beam_size=1)[0] for ex in corpus]
        score = bleu(hyps, [ex.references for ex in corpus])["bleu"]
        log.info("epoch %d training BLEU %.2f", m.epoch, score)
        return score >= target


def teacher_forced_accuracy(model, vocab, examples, batch_size=32):
    trainer = Trainer(model, vocab, _EvalCfg(batch_size))
    correct = total = 0
    for i in range(0, len(examples), batch_size):
        src, tgt_in, tgt_out, mask = trainer.tensors(examples[i:i + batch_size])
        logits, _ = model.forward(src, tgt_in)
        correct += int(((logits.data.argmax(-1) == tgt_out) & mask).sum())
        total += int(mask.sum())
    return correct / total


@dataclass
class _EvalCfg:
    batch_size: int = 32
    seed: int = 0


def check_language(model, lang):
    if lang not in model.cfg.languages:
        raise GenerationRefused(f"model trained for {list(model.cfg.languages)}, not {lang}")


def generate(model, vocab, graph, lang=None, beam_size=5, max_len=None, alpha=0.6, copy=True):
    """Verbalise one graph.  ``lang`` overrides the graph's language node.
    Returns ``(text, score, copies)``."""
    if lang is not None and lang != graph.lang:
        check_language(model, lang)
        graph = relabel_language(graph, lang)
    check_language(model, graph.lang)
    max_len = max_len or model.cfg.max_decode_len
    feats = model.featurize(graph, vocab)
    src = model.collate([feats], vocab.pad_id)
    state = model.start(src)
    hyps = beam_search(model.step, state, vocab.bos_id, vocab.eos_id, beam_size, max_len, alpha)
    best = hyps[0]
    labels = src.source_labels[0]
    if copy:
        text, copies = apply_copy(best, labels, vocab)
    else:
        text, copies = vocab.decode([t for t in best.tokens if t != vocab.eos_id]), []
    return text, best.score, copies


def task_languages(task, languages):
    if len(languages) != TASK_SIZES[task]:
        raise ConfigError(f"task {task} expects {TASK_SIZES[task]} languages")
    return tuple(languages)
