"""RDF triples, reification into A0/A1 graphs, and the triple record format.

A triple file holds one graph per blank-line-delimited block::

    lang=ENG
    Albert_Einstein | birthPlace | Germany
    text=Albert Einstein was born in Germany.

The ``lang=`` header is required; ``text=`` lines carry reference
verbalisations and ``id=`` an optional graph identifier shared across
languages.
"""

import re
from dataclasses import dataclass, field

from .errors import EmptyGraph, MalformedTriple, UnknownLanguage

DEFAULT_LANGUAGES = ("ENG", "GER", "RUS")

A0, A1, LANG = "A0", "A1", "LANG"
RELATIONS = (A0, A1, LANG)

SEPARATOR = " | "


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str

    def __post_init__(self):
        for name in ("subject", "predicate", "object"):
            value = getattr(self, name)
            if not value or not value.strip():
                raise ValueError(f"empty {name}")
            if "\t" in value or "\n" in value:
                raise ValueError(f"{name} contains tab or newline")


@dataclass(frozen=True)
class LanguageTag:
    code: str
    languages: tuple = DEFAULT_LANGUAGES

    def __post_init__(self):
        if self.code not in self.languages:
            raise UnknownLanguage(f"language {self.code!r} not in {list(self.languages)}")

    @property
    def token(self):
        return f"<{self.code}>"


@dataclass(frozen=True)
class ReifiedGraph:
    """Nodes are labels; edges are ``(src, relation, dst)`` index triples.

    ``triples`` keeps the original facts so the graph can be linearised;
    ``kinds`` tags each node as ``lang``, ``entity`` or ``predicate``.
    """

    nodes: tuple
    edges: tuple
    kinds: tuple
    triples: tuple
    lang: str

    @property
    def language_node(self):
        return self.kinds.index("lang")

    def dump(self):
        """Sorted ``src --REL--> dst`` lines."""
        rows = sorted((self.nodes[s], r, self.nodes[d]) for s, r, d in self.edges)
        return "\n".join(f"{s} --{r}--> {d}" for s, r, d in rows)


@dataclass
class GraphRecord:
    """One block of a triple file."""

    lang: str
    triples: list
    texts: list = field(default_factory=list)
    graph_id: str = None
    line: int = 0


def _parse_line(line, lineno, path=None):
    parts = line.split(SEPARATOR)
    if len(parts) != 3:
        raise MalformedTriple(lineno, f"expected 3 fields, got {len(parts)}", path)
    parts = [p.strip() for p in parts]
    if not all(parts):
        raise MalformedTriple(lineno, "empty field", path)
    if "\t" in parts[1]:
        raise MalformedTriple(lineno, "tab in predicate", path)
    return Triple(*parts)


def parse_triples(text):
    """Parse bare triple lines; blank lines are skipped."""
    triples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            triples.append(_parse_line(line, lineno))
    return triples


def parse_triple_file(text, path=None, languages=DEFAULT_LANGUAGES):
    """Parse a triple file into :class:`GraphRecord` blocks."""
    records = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            current = None
            continue
        if current is None:
            if not line.startswith("lang="):
                raise MalformedTriple(lineno, "block must start with lang=<CODE>", path)
            code = line[len("lang="):].strip()
            LanguageTag(code, tuple(languages))
            current = GraphRecord(lang=code, triples=[], line=lineno)
            records.append(current)
        elif line.startswith("text="):
            current.texts.append(line[len("text="):].strip())
        elif line.startswith("id="):
            current.graph_id = line[len("id="):].strip()
        else:
            current.triples.append(_parse_line(raw, lineno, path))
    for rec in records:
        if not rec.triples:
            raise MalformedTriple(rec.line, "block has no triples", path)
    return records


def format_triple_file(records):
    blocks = []
    for rec in records:
        lines = [f"lang={rec.lang}"]
        if rec.graph_id is not None:
            lines.append(f"id={rec.graph_id}")
        lines += [SEPARATOR.join((t.subject, t.predicate, t.object)) for t in rec.triples]
        lines += [f"text={t}" for t in rec.texts]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def reify(triples, lang, shared_predicates=False):
    """Rewrite each triple (s, p, o) as s -A0-> p_node -A1-> o.

    Every triple gets its own predicate node labelled ``p#k`` (k counts prior
    occurrences of p).  ``shared_predicates=True`` instead maps every use of a
    predicate onto one ``p#0`` node, which makes distinct subjects of the same
    predicate indistinguishable to the encoder.
    """
    triples = list(triples)
    if not triples:
        raise EmptyGraph("cannot reify an empty triple set")
    if isinstance(lang, LanguageTag):
        lang = lang.code
    lang_label = f"<{lang}>"
    nodes, kinds, index = [lang_label], ["lang"], {("lang", lang_label): 0}

    def node(kind, label):
        key = (kind, label)
        if key not in index:
            if label in nodes:
                raise ValueError(f"node label collision on {label!r}")
            index[key] = len(nodes)
            nodes.append(label)
            kinds.append(kind)
        return index[key]

    edges, subjects, seen = [], [], {}
    for t in triples:
        s = node("entity", t.subject)
        if shared_predicates:
            label = f"{t.predicate}#0"
        else:
            k = seen.get(t.predicate, 0)
            seen[t.predicate] = k + 1
            label = f"{t.predicate}#{k}"
        p = node("predicate", label)
        o = node("entity", t.object)
        edges.append((s, A0, p))
        edges.append((p, A1, o))
        if s not in subjects:
            subjects.append(s)
    edges.extend((0, LANG, s) for s in subjects)
    return ReifiedGraph(tuple(nodes), tuple(edges), tuple(kinds), tuple(triples), lang)


def relabel_language(graph, lang):
    """Same topology, different language node."""
    label = f"<{lang}>"
    nodes = tuple(label if k == "lang" else n for n, k in zip(graph.nodes, graph.kinds))
    return ReifiedGraph(nodes, graph.edges, graph.kinds, graph.triples, lang)


def linearize(graph, separator="<sep>"):
    """Language token, then "subject predicate object" per triple, triples
    joined by ``separator``."""
    out = [graph.nodes[graph.language_node]]
    for i, t in enumerate(graph.triples):
        if i:
            out.append(separator)
        out += [t.subject, t.predicate, t.object]
    return out


_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+|[^A-Za-z0-9]+")


def strip_occurrence(label):
    base, sep, k = label.rpartition("#")
    return base if sep and k.isdigit() else label


def split_label(label, kind="entity"):
    """Turn a node label into lowercase word tokens."""
    if kind == "lang":
        return [label]
    label = strip_occurrence(label)
    if kind == "predicate":
        words = []
        for chunk in re.split(r"[\s_]+", label):
            words += [w for w in _CAMEL.findall(chunk) if w.strip()]
    else:
        words = [w for w in re.split(r"[\s_]+", label) if w]
    return [w.lower() for w in words]


def node_feature_labels(graph):
    """Per node word tokens: underscores split entities, camelCase splits
    predicates, everything lowercased; the language node keeps its token."""
    return [split_label(n, k) for n, k in zip(graph.nodes, graph.kinds)]


def surface_form(label):
    """Human-readable form of a node label (underscores to spaces, ``#k`` dropped)."""
    return strip_occurrence(label).replace("_", " ")
