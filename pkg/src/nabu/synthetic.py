"""Templated multilingual graph/text pairs about invented entities.

Each graph describes one main subject with 1..7 facts (some facts hang off
an object of an earlier fact) and is verbalised with one sentence per
triple, in triple order, in English, German and Russian.
"""

import numpy as np

from .graph import GraphRecord, Triple, surface_form

TEMPLATES = {
    "birthPlace": ("{s} was born in {o}.", "{s} wurde in {o} geboren.", "{s} родился в {o}."),
    "birthYear": ("{s} was born in the year {o}.", "{s} wurde im Jahr {o} geboren.", "{s} родился в {o} году."),
    "almaMater": ("{s} studied at {o}.", "{s} studierte an der {o}.", "{s} учился в {o}."),
    "spouse": ("{s} is married to {o}.", "{s} ist mit {o} verheiratet.", "{s} состоит в браке с {o}."),
    "occupation": ("{s} works as {o}.", "{s} arbeitet als {o}.", "{s} работает как {o}."),
    "country": ("{s} is located in {o}.", "{s} liegt in {o}.", "{s} находится в {o}."),
    "capital": ("The capital of {s} is {o}.", "Die Hauptstadt von {s} ist {o}.", "Столица {s} это {o}."),
    "leader": ("The leader of {s} is {o}.", "Der Anführer von {s} ist {o}.", "Лидер {s} это {o}."),
    "population": ("{s} has a population of {o}.", "{s} hat {o} Einwohner.", "Население {s} составляет {o}."),
    "foundingYear": ("{s} was founded in {o}.", "{s} wurde {o} gegründet.", "{s} был основан в {o} году."),
    "founder": ("{s} was founded by {o}.", "{s} wurde von {o} gegründet.", "{s} был основан {o}."),
    "city": ("{s} is in the city of {o}.", "{s} befindet sich in der Stadt {o}.", "{s} находится в городе {o}."),
}
LANG_INDEX = {"ENG": 0, "GER": 1, "RUS": 2}

# predicate -> (subject type, object type)
SCHEMA = {
    "birthPlace": ("person", "city"), "birthYear": ("person", "year"),
    "almaMater": ("person", "university"), "spouse": ("person", "person"),
    "occupation": ("person", "job"), "country": ("city", "country"),
    "capital": ("country", "city"), "leader": ("country", "person"),
    "population": ("city", "number"), "foundingYear": ("university", "year"),
    "founder": ("university", "person"), "city": ("university", "city"),
}

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ei", "ou"]
_CODAS = ["", "", "n", "r", "l", "s", "th", "k"]
_JOBS = ["Engineer", "Painter", "Pilot", "Chemist", "Architect", "Composer", "Surgeon", "Poet"]


def _name(rng, syllables):
    parts = [rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS) for _ in range(syllables)]
    return "".join(parts).capitalize()


class _Pool:
    def __init__(self, rng, n_people=24, n_cities=16, n_countries=8, n_universities=8):
        seen = set()

        def unique(make):
            while True:
                v = make()
                if v not in seen:
                    seen.add(v)
                    return v

        self.by_type = {
            "person": [unique(lambda: f"{_name(rng, 2)}_{_name(rng, 2)}") for _ in range(n_people)],
            "city": [unique(lambda: _name(rng, 2)) for _ in range(n_cities)],
            "country": [unique(lambda: _name(rng, 3)) for _ in range(n_countries)],
            "university": [unique(lambda: f"{_name(rng, 2)}_University") for _ in range(n_universities)],
            "job": list(_JOBS),
        }

    def sample(self, rng, kind, avoid=()):
        if kind == "year":
            return str(int(rng.integers(1850, 2020)))
        if kind == "number":
            return str(int(rng.integers(10, 999)) * 1000)
        choices = [c for c in self.by_type[kind] if c not in avoid]
        return str(rng.choice(choices))


def _graph(rng, pool, size):
    kind = str(rng.choice(["person", "city", "country", "university"]))
    subject = pool.sample(rng, kind)
    triples = []
    frontier = [(subject, kind)]
    used = set()
    while len(triples) < size:
        s, s_kind = frontier[int(rng.integers(len(frontier)))]
        options = [p for p, (st, _) in SCHEMA.items() if st == s_kind and (s, p) not in used]
        if not options:
            if len(frontier) == 1:
                break
            frontier = [f for f in frontier if f[0] != s]
            continue
        p = str(rng.choice(options))
        used.add((s, p))
        o_kind = SCHEMA[p][1]
        o = pool.sample(rng, o_kind, avoid={s})
        triples.append(Triple(s, p, o))
        if o_kind in ("person", "city", "country", "university"):
            frontier.append((o, o_kind))
    return triples


def verbalize(triples, lang):
    k = LANG_INDEX[lang]
    return " ".join(TEMPLATES[t.predicate][k].format(s=surface_form(t.subject), o=surface_form(t.object))
                    for t in triples)


def synthetic_records(n_graphs=50, languages=("ENG", "GER", "RUS"), seed=0, max_triples=7):
    """``n_graphs`` graphs, each verbalised once per language.  Records with
    the same ``graph_id`` share their triples exactly."""
    rng = np.random.default_rng(seed)
    pool = _Pool(rng)
    records = []
    for g in range(n_graphs):
        triples = _graph(rng, pool, int(rng.integers(1, max_triples + 1)))
        for lang in languages:
            records.append(GraphRecord(lang, list(triples), [verbalize(triples, lang)], f"g{g:04d}"))
    return records
