"""Beam search and the two-stage copy post-process for unknown tokens."""

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import ReifiedGraph, surface_form
from .tokenizer import WORD_MARK


@dataclass
class Hypothesis:
    tokens: list
    logprob: float = 0.0
    attention: list = field(default_factory=list)
    finished: bool = False
    score: float = None

    def extend(self, token, logp, attn):
        if self.finished:
            raise ValueError("cannot extend a finished hypothesis")
        return Hypothesis(self.tokens + [token], self.logprob + logp, self.attention + [attn])


@dataclass
class CopyRecord:
    position: int
    source_index: int
    text: str
    stage: str    # "vocab" or "source"


def length_penalty(length, alpha):
    return ((5.0 + length) / 6.0) ** alpha


def beam_search(step, state, bos_id, eos_id, beam_size=5, max_len=128, alpha=0.6):
    """Breadth-limited search over ``step(state, last_ids) -> (logp, attn)``.

    ``state`` must support ``reorder(index)``.  At each step the best
    ``beam_size`` expansions by cumulative log-probability are kept; those
    ending in EOS leave the beam.  Everything still alive at ``max_len`` is
    finished as is.  Returns finished hypotheses sorted by
    ``logprob / ((5 + len) / 6) ** alpha`` (EOS excluded from the length),
    best first.
    """
    alive = [Hypothesis([])]
    finished = []
    last = np.array([bos_id])
    for t in range(max_len):
        logp, attn = step(state, last)
        scores = np.array([h.logprob for h in alive])[:, None] + logp
        flat = np.argsort(-scores, axis=None, kind="stable")[:beam_size]
        K = logp.shape[1]
        keep, new_alive = [], []
        for f in flat:
            b, tok = divmod(int(f), K)
            hyp = alive[b].extend(tok, float(logp[b, tok]), attn[b])
            if tok == eos_id or t == max_len - 1:
                hyp.finished = True
                n = len(hyp.tokens) - (tok == eos_id)
                hyp.score = hyp.logprob / length_penalty(n, alpha)
                finished.append(hyp)
            else:
                keep.append(b)
                new_alive.append(hyp)
        if len(finished) >= beam_size and new_alive:
            kth = sorted(h.score for h in finished)[-beam_size]
            bound = length_penalty(max_len, alpha)
            pruned = [(b, h) for b, h in zip(keep, new_alive) if h.logprob / bound > kth]
            keep, new_alive = [b for b, _ in pruned], [h for _, h in pruned]
        if not new_alive:
            break
        state.reorder(keep)
        alive = new_alive
        last = np.array([h.tokens[-1] for h in alive])
    finished.sort(key=lambda h: -h.score)
    return finished[:beam_size]


def greedy_search(step, state, bos_id, eos_id, max_len=128):
    hyp = Hypothesis([])
    last = np.array([bos_id])
    for t in range(max_len):
        logp, attn = step(state, last)
        tok = int(np.argmax(logp[0]))
        hyp = hyp.extend(tok, float(logp[0, tok]), attn[0])
        if tok == eos_id:
            break
        last = np.array([tok])
    hyp.finished = True
    return hyp


def _copy_candidates(labels):
    return np.array([not (lab.startswith("<") and lab.endswith(">")) for lab in labels])


def apply_copy(hyp, source, vocab):
    """Detokenise ``hyp`` replacing unknown-token runs with source material.

    A run of consecutive UNK tokens is one out-of-vocabulary word.  Its source
    is the memory row with the largest summed cross-attention over the run
    (control tokens such as the language node excluded, ties to the lowest
    index).  If every word of that row's surface form is a whole vocabulary
    word it is substituted from the vocabulary, otherwise the surface form is
    copied verbatim.  Returns ``(text, copies)``.
    """
    labels = list(source.nodes) if isinstance(source, ReifiedGraph) else list(source)
    allowed = _copy_candidates(labels)
    tokens = [t for t in hyp.tokens if t != vocab.eos_id]
    pieces, copies = [], []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok != vocab.unk_id:
            if not vocab.is_special(tok):
                pieces.append(vocab.id_to_token[tok])
            i += 1
            continue
        j = i
        while j < len(tokens) and tokens[j] == vocab.unk_id:
            j += 1
        weight = np.sum([np.asarray(hyp.attention[k])[: len(labels)] for k in range(i, j)], axis=0)
        weight = np.where(allowed[: len(weight)], weight, -np.inf)
        src = int(np.argmax(weight))
        surface = surface_form(labels[src])
        words = surface.split()
        stage = "vocab" if words and all(vocab.word_in_vocab(w) for w in words) else "source"
        if stage == "vocab":
            text = "".join(vocab.id_to_token[vocab.token_to_id[WORD_MARK + w]] for w in words)
        else:
            text = WORD_MARK + surface.replace(" ", WORD_MARK)
        if pieces and pieces[-1].endswith(WORD_MARK):
            text = text[len(WORD_MARK):]
        pieces.append(text)
        copies.append(CopyRecord(i, src, surface, stage))
        i = j
    text = "".join(pieces).replace(WORD_MARK, " ").strip()
    return text, copies


def format_jsonl(text, score, copies):
    return json.dumps({"text": text, "score": score,
                       "copies": [c.__dict__ for c in copies]}, ensure_ascii=False)
