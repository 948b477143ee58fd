"""Corpus BLEU and chrF++.

BLEU tokenises by detaching punctuation and splitting on whitespace, pools
clipped n-gram counts over the corpus (n = 1..4) and smooths a zero
precision to ``1e-9``.  chrF++ averages precision and recall over
character 1..6-grams (whitespace removed) and word 1..2-grams, then takes
the beta=2 F-score of the two averages, as the reference chrF++ script does.
"""

import json
import math
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field

from .errors import LengthMismatch

BLEU_ORDER = 4
CHAR_ORDER = 6
WORD_ORDER = 2
BETA = 2.0
EPSILON = 1e-9

_PUNCT = re.compile(r"([^\w\s])", re.UNICODE)


def tokenize(text):
    return _PUNCT.sub(r" \1 ", text).split()


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _refs(references, count):
    """Accept either one reference per segment or a list of references per segment."""
    refs = [[r] if isinstance(r, str) else list(r) for r in references]
    if len(refs) != count:
        raise LengthMismatch(f"{count} hypotheses but {len(refs)} reference sets")
    if any(not r for r in refs):
        raise LengthMismatch("every segment needs at least one reference")
    return refs


@dataclass
class BleuStats:
    matches: list
    totals: list
    hyp_len: int = 0
    ref_len: int = 0

    def __add__(self, other):
        return BleuStats([a + b for a, b in zip(self.matches, other.matches)],
                         [a + b for a, b in zip(self.totals, other.totals)],
                         self.hyp_len + other.hyp_len, self.ref_len + other.ref_len)


def bleu_stats(hypothesis, references):
    hyp = tokenize(hypothesis)
    refs = [tokenize(r) for r in references]
    matches, totals = [], []
    for n in range(1, BLEU_ORDER + 1):
        counts = ngrams(hyp, n)
        max_ref = Counter()
        for r in refs:
            max_ref |= ngrams(r, n)
        matches.append(sum(min(c, max_ref[g]) for g, c in counts.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    closest = min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
    return BleuStats(matches, totals, len(hyp), closest)


def bleu_from_stats(stats):
    """Returns (score, precisions, brevity_penalty)."""
    precisions = []
    for m, t in zip(stats.matches, stats.totals):
        precisions.append(m / t if m > 0 else EPSILON / max(t, 1))
    c, r = stats.hyp_len, stats.ref_len
    if c == 0:
        return 0.0, precisions, 0.0
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    score = bp * math.exp(sum(math.log(p) for p in precisions) / BLEU_ORDER)
    return 100.0 * score, precisions, bp


def bleu(hypotheses, references):
    refs = _refs(references, len(hypotheses))
    total = BleuStats([0] * BLEU_ORDER, [0] * BLEU_ORDER)
    segments = []
    for h, r in zip(hypotheses, refs):
        s = bleu_stats(h, r)
        total = total + s
        segments.append(bleu_from_stats(s)[0])
    score, precisions, bp = bleu_from_stats(total)
    return {"bleu": score, "precisions": precisions, "brevity_penalty": bp,
            "hyp_len": total.hyp_len, "ref_len": total.ref_len, "segments": segments}


def chrf_words(text):
    """Word split used by chrF++: one leading or trailing punctuation
    character is detached from each multi-character word."""
    words = []
    for w in text.split():
        if len(w) > 1 and w[-1] in string.punctuation:
            words += [w[:-1], w[-1]]
        elif len(w) > 1 and w[0] in string.punctuation:
            words += [w[0], w[1:]]
        else:
            words.append(w)
    return words


def _chrf_orders(hypothesis, reference):
    """Per-order (hyp_count, ref_count, matches) for chars then words.

    Hypothesis n-grams of an order the reference is too short to have are
    not counted, so they do not dilute corpus-pooled precision.
    """
    hc, rc = "".join(hypothesis.split()), "".join(reference.split())
    hw, rw = chrf_words(hypothesis), chrf_words(reference)
    pairs = [(hc, rc, n) for n in range(1, CHAR_ORDER + 1)]
    pairs += [(hw, rw, n) for n in range(1, WORD_ORDER + 1)]
    stats = []
    for hyp, ref, n in pairs:
        h, r = ngrams(hyp, n), ngrams(ref, n)
        n_ref = sum(r.values())
        stats.append((sum(h.values()) if n_ref else 0, n_ref, sum((h & r).values())))
    return stats


def chrf_from_stats(stats, beta=BETA):
    precision = recall = 0.0
    effective = 0
    for n_hyp, n_ref, n_match in stats:
        if n_hyp and n_ref:
            precision += n_match / n_hyp
            recall += n_match / n_ref
            effective += 1
    if not effective:
        return 0.0
    precision /= effective
    recall /= effective
    if precision + recall == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * precision * recall / (b2 * precision + recall)


def chrfpp(hypotheses, references):
    refs = _refs(references, len(hypotheses))
    pooled = None
    segments = []
    for h, rs in zip(hypotheses, refs):
        # with several references keep the best-scoring one per segment
        best = max((_chrf_orders(h, r) for r in rs), key=chrf_from_stats)
        segments.append(chrf_from_stats(best))
        pooled = best if pooled is None else [tuple(a + b for a, b in zip(x, y)) for x, y in zip(pooled, best)]
    return {"chrfpp": chrf_from_stats(pooled) if pooled else 0.0, "segments": segments}


@dataclass
class ScoreReport:
    bleu: float
    chrfpp: float
    precisions: list
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    segment_bleu: list = field(default_factory=list)
    segment_chrfpp: list = field(default_factory=list)
    smoothing: str = f"add-epsilon {EPSILON:g} on zero n-gram precision"
    meteor: float = None      # not computed; stays null

    def to_json(self, per_segment=False):
        d = asdict(self)
        if not per_segment:
            d.pop("segment_bleu")
            d.pop("segment_chrfpp")
        return json.dumps(d, indent=2, ensure_ascii=False)

    def segment_csv(self):
        rows = ["segment,bleu,chrfpp"]
        rows += [f"{i},{b:.6f},{c:.6f}" for i, (b, c) in enumerate(zip(self.segment_bleu, self.segment_chrfpp))]
        return "\n".join(rows) + "\n"


def score(hypotheses, references):
    b = bleu(hypotheses, references)
    c = chrfpp(hypotheses, references)
    return ScoreReport(b["bleu"], c["chrfpp"], b["precisions"], b["brevity_penalty"],
                       b["hyp_len"], b["ref_len"], b["segments"], c["segments"])
