"""Byte-pair-encoding subword vocabulary shared across target languages.

Words are whitespace-delimited; each word is prefixed with the boundary
marker ``▁`` before merging, so decoding is just concatenation followed by
turning markers back into spaces.
"""

import hashlib
from collections import Counter
from dataclasses import dataclass, field

from .errors import CorpusTooSmall
from .graph import DEFAULT_LANGUAGES

WORD_MARK = "▁"
PAD, BOS, EOS, UNK, SEP = "<pad>", "<s>", "</s>", "<unk>", "<sep>"
CONTROL = (PAD, BOS, EOS, UNK, SEP)


def default_specials(languages=DEFAULT_LANGUAGES):
    return list(CONTROL) + [f"<{code}>" for code in languages]


@dataclass
class Vocabulary:
    specials: list
    alphabet: list
    merges: list
    id_to_token: list = field(init=False)
    token_to_id: dict = field(init=False)
    ranks: dict = field(init=False)

    def __post_init__(self):
        self.id_to_token = []
        self.token_to_id = {}
        for tok in [*self.specials, *self.alphabet, *(a + b for a, b in self.merges)]:
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.id_to_token)
                self.id_to_token.append(tok)
        self.ranks = {tuple(m): r for r, m in enumerate(self.merges)}
        self._cache = {}

    def __len__(self):
        return len(self.id_to_token)

    pad_id = property(lambda self: self.token_to_id[PAD])
    bos_id = property(lambda self: self.token_to_id[BOS])
    eos_id = property(lambda self: self.token_to_id[EOS])
    unk_id = property(lambda self: self.token_to_id[UNK])
    sep_id = property(lambda self: self.token_to_id[SEP])

    def lang_id(self, code):
        return self.token_to_id[f"<{code}>"]

    @property
    def languages(self):
        return [t[1:-1] for t in self.specials if t not in CONTROL]

    def is_special(self, idx):
        return idx < len(self.specials)

    def segment(self, word):
        """Subword pieces of one whitespace-free word (marker included)."""
        pieces = self._cache.get(word)
        if pieces is None:
            pieces = _apply_merges(word, self.ranks, set(self.alphabet))
            if len(self._cache) < 100_000:
                self._cache[word] = pieces
        return pieces

    def encode(self, text):
        ids = []
        for word in text.split():
            for piece in self.segment(WORD_MARK + word):
                ids.append(self.token_to_id.get(piece, self.unk_id))
        return ids

    def pieces(self, ids):
        return [self.id_to_token[i] for i in ids]

    def decode(self, ids, skip_specials=True):
        out = []
        for i in ids:
            if skip_specials and self.is_special(i) and i != self.unk_id:
                continue
            out.append(self.id_to_token[i])
        return "".join(out).replace(WORD_MARK, " ").strip()

    def word_in_vocab(self, word):
        return (WORD_MARK + word) in self.token_to_id

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def to_text(self):
        lines = ["[specials]", *self.specials, "[alphabet]", *self.alphabet, "[merges]"]
        lines += [f"{a} {b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        sections = {"specials": [], "alphabet": [], "merges": []}
        current = None
        for line in text.split("\n"):
            if line in ("[specials]", "[alphabet]", "[merges]"):
                current = sections[line[1:-1]]
            elif line and current is not None:
                current.append(line)
            elif line:
                raise ValueError(f"vocabulary entry outside a section: {line!r}")
        merges = [tuple(m.split(" ")) for m in sections["merges"]]
        if any(len(m) != 2 for m in merges):
            raise ValueError("malformed merge line")
        return cls(sections["specials"], sections["alphabet"], merges)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8", newline="") as f:
            return cls.from_text(f.read())


def _apply_merges(word, ranks, alphabet):
    # characters outside the alphabet become UNK pieces that never merge
    symbols = [c if c in alphabet else UNK for c in word]
    while len(symbols) > 1:
        best, best_rank = None, None
        for i in range(len(symbols) - 1):
            r = ranks.get((symbols[i], symbols[i + 1]))
            if r is not None and (best_rank is None or r < best_rank):
                best, best_rank = i, r
        if best is None:
            break
        pair = (symbols[best], symbols[best + 1])
        merged, i = [], 0
        while i < len(symbols):
            if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                merged.append(pair[0] + pair[1])
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


def _merge_word(symbols, pair, joined):
    out, i = [], 0
    while i < len(symbols):
        if i < len(symbols) - 1 and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def train_bpe(corpus, target_size, languages=DEFAULT_LANGUAGES, min_frequency=2):
    """Learn merges from ``corpus`` (an iterable of sentences).

    Merging stops when the vocabulary reaches ``target_size`` or no pair
    occurs ``min_frequency`` times.  Among equally frequent pairs the one
    whose merged string sorts first wins, then the pair itself.
    """
    specials = default_specials(languages)
    words = Counter()
    for sentence in corpus:
        for w in sentence.split():
            words[WORD_MARK + w] += 1
    if not words:
        raise CorpusTooSmall("empty corpus")
    alphabet = sorted({c for w in words for c in w})
    if len(specials) + len(alphabet) > target_size:
        raise CorpusTooSmall(
            f"{len(specials)} specials + {len(alphabet)} characters exceed target size {target_size}")

    vocab = {tuple(w): n for w, n in words.items()}
    pair_counts = Counter()
    where = {}
    for sym, n in vocab.items():
        for pair in zip(sym, sym[1:]):
            pair_counts[pair] += n
            where.setdefault(pair, set()).add(sym)

    merges = []
    known = set(specials) | set(alphabet)
    size = len(specials) + len(alphabet)
    while size < target_size and pair_counts:
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0][0] + kv[0][1], kv[0]))
        pair, count = best
        if count < min_frequency:
            break
        joined = pair[0] + pair[1]
        merges.append(pair)
        if joined not in known:
            known.add(joined)
            size += 1
        for sym in list(where.pop(pair, ())):
            n = vocab.pop(sym, None)
            if n is None:
                continue
            for p in zip(sym, sym[1:]):
                pair_counts[p] -= n
                if pair_counts[p] <= 0:
                    del pair_counts[p]
                s = where.get(p)
                if s is not None:
                    s.discard(sym)
            new = _merge_word(sym, pair, joined)
            vocab[new] = vocab.get(new, 0) + n
            for p in zip(new, new[1:]):
                pair_counts[p] += n
                where.setdefault(p, set()).add(new)
        pair_counts.pop(pair, None)
    return Vocabulary(specials, alphabet, merges)
