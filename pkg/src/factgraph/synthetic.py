"""Synthetic factuality corpus: a small template grammar plus corruption rules.

Sentences are rendered from templates and then *read back*: :func:`read_sentence`
recovers the AMR graph and word alignments of any sentence the grammar can
produce, including corrupted ones. Corruptions therefore edit plain text and
the graph always agrees with the words on the page.

    >>> g, align = read_sentence("John Smith has not visited Paris .")
    >>> print(serialize_penman(g, indent=None))
    (v / visit-01 :ARG0 (p / person :name (n / name :op1 "John" :op2 "Smith")) :ARG1 (c / city :name (n2 / name :op1 "Paris")) :polarity -)
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .amr import AmrGraph, Constant, parse_penman, serialize_penman
from .canon import split_words

__all__ = [
    "RULES",
    "RuleNotApplicable",
    "Unreadable",
    "Corruption",
    "read_sentence",
    "synth_corrupt",
    "applicable_rules",
    "capitalized_spans",
    "generate_document",
    "generate_example",
    "generate_corpus",
]

RULES = ("entity_swap", "number_swap", "negation_toggle", "pronoun_swap")

MALE = ["John", "David", "Michael", "James", "Robert", "Peter", "Thomas", "Daniel", "Mark", "Paul"]
FEMALE = ["Mary", "Sarah", "Anna", "Laura", "Emma", "Julia", "Linda", "Susan", "Helen", "Karen"]
SURNAMES = ["Smith", "Jones", "Brown", "Miller", "Davis", "Wilson", "Taylor", "Clark", "Lewis", "Walker", "Hall", "Young"]
CITIES = ["Paris", "London", "Berlin", "Madrid", "Rome", "Vienna", "Boston", "Chicago", "Dublin", "Oslo", "Lisbon", "Prague"]
ORGS = ["Google", "Reuters", "Oxford", "Siemens", "Nokia", "Boeing", "Samsung", "Unilever"]
GOODS = {"cars": "car", "books": "book", "houses": "house", "tickets": "ticket", "shares": "share", "horses": "horse", "paintings": "painting"}
MOODS = {"happy": "happy-01", "tired": "tire-01", "angry": "anger-01", "afraid": "fear-01"}
NUMBER_WORDS = {
    "two": 2, "three": 3, "four": 4, "five": 5, "six": 6, "seven": 7,
    "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
}
PRONOUNS = {"he": "she", "she": "he", "his": "her", "her": "his"}
AUXILIARIES = ("has", "was", "is", "had", "will", "did")
# capitalized words that never start an entity
_NOT_ENTITY = {"He", "She", "His", "Her", "The", "A", "An", "It", "They"}


class RuleNotApplicable(ValueError):
    pass


class Unreadable(ValueError):
    pass


# -- reading -----------------------------------------------------------------

_CAP = re.compile(r"^[A-Z][a-z]+$")
_DIGITS = re.compile(r"^[0-9]+$")
_YEAR = re.compile(r"^(1[89][0-9][0-9]|20[0-9][0-9])$")


def _is_number(word: str) -> bool:
    return bool(_DIGITS.match(word)) or word.lower() in NUMBER_WORDS


def _number_value(word: str) -> int:
    return int(word) if _DIGITS.match(word) else NUMBER_WORDS[word.lower()]


class _Builder:
    """Accumulates a Penman string and node alignments for one reading."""

    def __init__(self):
        self.used: set[str] = set()
        self.align: dict[object, list[int]] = {}

    def var(self, concept: str) -> str:
        base = concept[0]
        name, i = base, 2
        while name in self.used:
            name, i = f"{base}{i}", i + 1
        self.used.add(name)
        return name

    def named(self, concept: str, idx: Sequence[int], words: Sequence[str]) -> str:
        v, n = self.var(concept), self.var("name")
        ops = " ".join(f':op{i + 1} "{words[j]}"' for i, j in enumerate(idx))
        self.align[v] = list(idx)
        self.align[n] = list(idx)
        for i, j in enumerate(idx):
            self.align[(n, f"op{i + 1}")] = [j]
        return f"({v} / {concept} :name ({n} / name {ops}))"

    def subject(self, slot, words) -> str:
        kind, idx = slot
        if kind == "person":
            return self.named("person", idx, words)
        pron = words[idx[0]].lower()
        v = self.var(pron)
        self.align[v] = list(idx)
        return f"({v} / {pron})"


def _match(pattern: Sequence[str], words: Sequence[str]):
    """Match a slot pattern; returns ``{slot: (kind, indices)}`` or None.

    Slots: SUBJ (two capitalized words or he/she), POSS (his/her), CAP (one
    capitalized word), NUM, YEAR, NEG (optional "not"), GOODS, MOOD; anything
    else is a literal.
    """
    out: dict[str, tuple[str, list[int]]] = {}

    def go(p: int, w: int) -> bool:
        if p == len(pattern):
            return w == len(words)
        slot = pattern[p]
        word = words[w] if w < len(words) else None
        if slot == "NEG":
            if word == "not" and go(p + 1, w + 1):
                out[slot] = ("neg", [w])
                return True
            out.pop(slot, None)
            return go(p + 1, w)
        if word is None:
            return False
        if slot == "SUBJ":
            nxt = words[w + 1] if w + 1 < len(words) else ""
            if word.lower() in ("he", "she"):
                out[slot] = ("pronoun", [w])
                return go(p + 1, w + 1)
            if _CAP.match(word) and _CAP.match(nxt) and word not in _NOT_ENTITY:
                out[slot] = ("person", [w, w + 1])
                return go(p + 1, w + 2)
            return False
        if slot == "POSS":
            ok = word.lower() in ("his", "her")
        elif slot == "CAP":
            ok = bool(_CAP.match(word)) and word not in _NOT_ENTITY
        elif slot == "NUM":
            ok = _is_number(word) and not _YEAR.match(word)
        elif slot == "YEAR":
            ok = bool(_YEAR.match(word))
        elif slot == "GOODS":
            ok = word in GOODS
        elif slot == "MOOD":
            ok = word in MOODS
        else:
            return word == slot and go(p + 1, w + 1)
        if not ok:
            return False
        out[slot] = (slot.lower(), [w])
        return go(p + 1, w + 1)

    return out if go(0, 0) else None


def _polarity(b: _Builder, m, root: str) -> str:
    if "NEG" not in m:
        return ""
    b.align[(root, "polarity")] = m["NEG"][1]
    return " :polarity -"


def _verb(b: _Builder, m, concept: str, *verb_words: int) -> str:
    root = b.var(concept)
    b.align[root] = [m["AUX"][1][0], *verb_words]
    return root


# Each template: (pattern, builder(match, words) -> penman). AUX is recorded as
# a pseudo slot so the predicate aligns to its auxiliary too.
def _t_visit(m, words, b):
    v = _verb(b, m, "visit-01", m["_verb"])
    return f"({v} / visit-01 :ARG0 {b.subject(m['SUBJ'], words)} :ARG1 {b.named('city', m['CAP'][1], words)}{_polarity(b, m, v)})"


def _t_join(m, words, b):
    v = _verb(b, m, "join-01", m["_verb"])
    return f"({v} / join-01 :ARG0 {b.subject(m['SUBJ'], words)} :ARG1 {b.named('organization', m['CAP'][1], words)}{_polarity(b, m, v)})"


def _t_born(m, words, b):
    v = _verb(b, m, "bear-02", m["_verb"])
    subj = b.subject(m["SUBJ"], words)
    d = b.var("date-entity")
    b.align[d] = m["YEAR"][1]
    b.align[(d, "year")] = m["YEAR"][1]
    year = words[m["YEAR"][1][0]]
    return f"({v} / bear-02 :ARG1 {subj} :time ({d} / date-entity :year {year}){_polarity(b, m, v)})"


def _t_arrest(m, words, b):
    v = _verb(b, m, "arrest-01", m["_verb"])
    return f"({v} / arrest-01 :ARG1 {b.subject(m['SUBJ'], words)} :location {b.named('city', m['CAP'][1], words)}{_polarity(b, m, v)})"


def _t_buy(m, words, b):
    v = _verb(b, m, "buy-01", m["_verb"])
    subj = b.subject(m["SUBJ"], words)
    noun = GOODS[words[m["GOODS"][1][0]]]
    x = b.var(noun)
    b.align[x] = m["GOODS"][1]
    b.align[(x, "quant")] = m["NUM"][1]
    q = _number_value(words[m["NUM"][1][0]])
    return f"({v} / buy-01 :ARG0 {subj} :ARG1 ({x} / {noun} :quant {q}){_polarity(b, m, v)})"


def _t_hire(m, words, b):
    v = _verb(b, m, "hire-01", m["_verb"])
    c = b.var("company")
    b.align[c] = [m["POSS"][1][0] + 1]
    pron = "he" if words[m["POSS"][1][0]].lower() == "his" else "she"
    p = b.var(pron)
    b.align[p] = m["POSS"][1]
    w = b.var("worker")
    b.align[w] = [m["NUM"][1][0] + 1]
    b.align[(w, "quant")] = m["NUM"][1]
    q = _number_value(words[m["NUM"][1][0]])
    return (
        f"({v} / hire-01 :ARG0 ({c} / company :poss ({p} / {pron})) "
        f":ARG1 ({w} / worker :quant {q}){_polarity(b, m, v)})"
    )


def _t_missing(m, words, b):
    v = _verb(b, m, "miss-01", m["_verb"] - 1, m["_verb"])
    subj = b.subject(m["SUBJ"], words)
    t = b.var("temporal-quantity")
    y = b.var("year")
    n = m["NUM"][1][0]
    b.align[t] = [n, n + 1]
    b.align[(t, "quant")] = [n]
    b.align[y] = [n + 1]
    q = _number_value(words[n])
    return (
        f"({v} / miss-01 :ARG1 {subj} :duration ({t} / temporal-quantity :quant {q} "
        f":unit ({y} / year)){_polarity(b, m, v)})"
    )


def _t_mood(m, words, b):
    concept = MOODS[words[m["MOOD"][1][0]]]
    v = _verb(b, m, concept, m["MOOD"][1][0])
    return f"({v} / {concept} :ARG1 {b.subject(m['SUBJ'], words)}{_polarity(b, m, v)})"


_TEMPLATES: list[tuple[str, tuple[str, ...], str, Callable]] = [
    ("visit", ("SUBJ", "has", "NEG", "visited", "CAP", "."), "visited", _t_visit),
    ("join", ("SUBJ", "has", "NEG", "joined", "CAP", "."), "joined", _t_join),
    ("born", ("SUBJ", "was", "NEG", "born", "in", "YEAR", "."), "born", _t_born),
    ("arrest", ("SUBJ", "was", "NEG", "arrested", "in", "CAP", "."), "arrested", _t_arrest),
    ("buy", ("SUBJ", "has", "NEG", "bought", "NUM", "GOODS", "."), "bought", _t_buy),
    ("hire", ("POSS", "company", "has", "NEG", "hired", "NUM", "workers", "."), "hired", _t_hire),
    ("missing", ("SUBJ", "has", "NEG", "been", "missing", "for", "NUM", "years", "."), "missing", _t_missing),
    ("mood", ("SUBJ", "was", "NEG", "MOOD", "."), None, _t_mood),
]


def read_sentence(sentence: str) -> tuple[AmrGraph, dict[str, list[int]]]:
    """AMR graph and node alignments (node id -> word indices) of a grammar sentence.

    Word indices refer to :func:`split_words` of the sentence. Constant nodes
    are keyed by their ``@<edge index>`` id.
    """
    words = [w for w, _, _ in split_words(sentence)]
    for _, pattern, verb, build in _TEMPLATES:
        m = _match(pattern, words)
        if m is None:
            continue
        aux = next(i for i, w in enumerate(words) if w in AUXILIARIES)
        m["AUX"] = ("aux", [aux])
        if verb is not None:
            m["_verb"] = words.index(verb)
        b = _Builder()
        graph = parse_penman(build(m, words, b))
        return graph, _resolve_alignments(graph, b.align)
    raise Unreadable(f"sentence outside the grammar: {sentence!r}")


def _resolve_alignments(graph: AmrGraph, align: dict) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for key, idx in align.items():
        if isinstance(key, tuple):
            source, role = key
            for i, (s, r, t) in enumerate(graph.edges):
                if s == source and r == role and isinstance(t, Constant):
                    out[graph.constant_node_id(i)] = sorted(idx)
                    break
        else:
            out[key] = sorted(idx)
    return out


# -- corruption --------------------------------------------------------------


@dataclass(frozen=True)
class Corruption:
    sentence: str
    label: str
    span: tuple[int, int]
    rule: str


def capitalized_spans(sentence: str) -> list[tuple[int, int]]:
    """Word-index ranges ``[i, j)`` of maximal capitalized word runs (pronouns excluded)."""
    words = [w for w, _, _ in split_words(sentence)]
    spans, i = [], 0
    while i < len(words):
        if _CAP.match(words[i]) and words[i] not in _NOT_ENTITY:
            j = i
            while j < len(words) and _CAP.match(words[j]) and words[j] not in _NOT_ENTITY:
                j += 1
            spans.append((i, j))
            i = j
        else:
            i += 1
    return spans


def _entity_strings(sentence: str) -> list[tuple[str, ...]]:
    words = [w for w, _, _ in split_words(sentence)]
    return [tuple(words[i:j]) for i, j in capitalized_spans(sentence)]


def _rebuild(words: list[str], replace: dict[int, list[str]]) -> tuple[str, list[tuple[int, int]]]:
    """Join words with spaces after substituting ``replace``; returns text and char spans of the new words."""
    pieces, spans, pos = [], [], 0
    for i, w in enumerate(words):
        new = replace.get(i, [w])
        for piece in new:
            if pieces:
                pos += 1
            start = pos
            pieces.append(piece)
            pos += len(piece)
            if i in replace:
                spans.append((start, pos))
    return " ".join(pieces), spans


def _sites(rule: str, doc: Sequence[str], words: list[str], sentence: str):
    if rule == "entity_swap":
        pool = {e for s in doc for e in _entity_strings(s)}
        sites = []
        for i, j in capitalized_spans(sentence):
            current = tuple(words[i:j])
            options = sorted(e for e in pool if len(e) == len(current) and e != current)
            if options:
                sites.append((i, j, options))
        return sites
    if rule == "number_swap":
        return [i for i, w in enumerate(words) if _is_number(w)]
    if rule == "negation_toggle":
        return [i for i, w in enumerate(words) if w in AUXILIARIES]
    if rule == "pronoun_swap":
        return [i for i, w in enumerate(words) if w.lower() in PRONOUNS]
    raise ValueError(f"unknown rule {rule!r}")


def applicable_rules(document: Sequence[str], sentence: str) -> list[str]:
    words = [w for w, _, _ in split_words(sentence)]
    return [r for r in RULES if _sites(r, document, words, sentence)]


def _match_case(template: str, word: str) -> str:
    return word.capitalize() if template[:1].isupper() else word


def _new_number(word: str, document: Sequence[str], rng: np.random.Generator) -> str:
    present = {w.lower() for s in document for w, _, _ in split_words(s)}
    if _YEAR.match(word):
        choices = [str(y) for y in range(1950, 2021) if str(y) not in present]
    elif _DIGITS.match(word):
        lo = 13 if int(word) >= 13 else 2
        hi = 99 if int(word) >= 13 else 12
        choices = [str(n) for n in range(lo, hi + 1) if str(n) not in present]
    else:
        choices = [w for w in NUMBER_WORDS if w not in present]
    if not choices:
        raise RuleNotApplicable("no unused number left in the document")
    return _match_case(word, choices[int(rng.integers(len(choices)))])


def synth_corrupt(document_sentences: Sequence[str], source_sentence: str, rule: str, seed: int) -> Corruption:
    """Apply one corruption rule to ``source_sentence``.

    Returns the corrupted sentence, the NonFactual label and the ``[start,
    end)`` character span of the altered words in the new sentence. When
    negation is removed the span covers the auxiliary that lost it.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    rng = np.random.default_rng(seed)
    words = [w for w, _, _ in split_words(source_sentence)]
    sites = _sites(rule, document_sentences, words, source_sentence)
    if not sites:
        raise RuleNotApplicable(f"{rule} has no site in {source_sentence!r}")
    site = sites[int(rng.integers(len(sites)))]

    if rule == "entity_swap":
        i, j, options = site
        new = list(options[int(rng.integers(len(options)))])
        replace = {i: new}
        for t in range(i + 1, j):
            replace[t] = []
        text, spans = _rebuild(words, replace)
    elif rule == "number_swap":
        text, spans = _rebuild(words, {site: [_new_number(words[site], document_sentences, rng)]})
    elif rule == "pronoun_swap":
        w = words[site]
        text, spans = _rebuild(words, {site: [_match_case(w, PRONOUNS[w.lower()])]})
    else:
        has_not = site + 1 < len(words) and words[site + 1] == "not"
        if has_not:
            replace = {site: [words[site]], site + 1: []}
        else:
            replace = {site: [words[site], "not"]}
        text, spans = _rebuild(words, replace)
        if not has_not:
            spans = spans[1:]
    start, end = min(s for s, _ in spans), max(e for _, e in spans)
    return Corruption(text, "NonFactual", (start, end), rule)


# -- generation --------------------------------------------------------------


@dataclass
class _Person:
    first: str
    last: str
    male: bool

    @property
    def name(self) -> str:
        return f"{self.first} {self.last}"


def _render(kind: str, person: _Person, mentioned: bool, rng: np.random.Generator) -> str:
    subj = person.name
    if mentioned and rng.random() < 0.5:
        subj = "He" if person.male else "She"
    neg = " not" if rng.random() < 0.15 else ""
    pick = lambda xs: xs[int(rng.integers(len(xs)))]  # noqa: E731
    num = str(int(rng.integers(2, 60))) if rng.random() < 0.6 else pick(list(NUMBER_WORDS))
    if kind == "visit":
        return f"{subj} has{neg} visited {pick(CITIES)} ."
    if kind == "join":
        return f"{subj} has{neg} joined {pick(ORGS)} ."
    if kind == "born":
        return f"{subj} was{neg} born in {int(rng.integers(1950, 2010))} ."
    if kind == "arrest":
        return f"{subj} was{neg} arrested in {pick(CITIES)} ."
    if kind == "buy":
        return f"{subj} has{neg} bought {num} {pick(list(GOODS))} ."
    if kind == "hire":
        poss = "His" if person.male else "Her"
        return f"{poss} company has{neg} hired {num} workers ."
    if kind == "missing":
        return f"{subj} has{neg} been missing for {num} years ."
    return f"{subj} was{neg} {pick(list(MOODS))} ."


def generate_document(rng: np.random.Generator, n_sentences: tuple[int, int] = (3, 5)) -> list[str]:
    """A short document about two people of different gender."""
    n = int(rng.integers(n_sentences[0], n_sentences[1] + 1))
    lasts = rng.choice(SURNAMES, size=2, replace=False)
    people = [
        _Person(str(rng.choice(MALE)), str(lasts[0]), True),
        _Person(str(rng.choice(FEMALE)), str(lasts[1]), False),
    ]
    kinds = [t[0] for t in _TEMPLATES]
    mentioned = [False, False]
    out, seen = [], set()
    while len(out) < n:
        who = int(rng.integers(2))
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "hire" and not mentioned[who]:
            continue
        s = _render(kind, people[who], mentioned[who], rng)
        if s in seen:
            continue
        seen.add(s)
        mentioned[who] = True
        out.append(s)
    return out


def _char_to_word_span(sentence: str, span: tuple[int, int]) -> list[int]:
    return [i for i, (_, s, e) in enumerate(split_words(sentence)) if s < span[1] and e > span[0]]


def generate_example(rng: np.random.Generator, index: int, corrupt: bool) -> dict:
    """One dataset record; ``corrupt`` decides the label."""
    while True:
        doc = generate_document(rng)
        source = doc[int(rng.integers(len(doc)))]
        rules = applicable_rules(doc, source)
        if not corrupt:
            summary, label, spans, rule = source, "factual", [], None
            break
        if not rules:
            continue
        rule = rules[int(rng.integers(len(rules)))]
        try:
            c = synth_corrupt(doc, source, rule, seed=int(rng.integers(2**31)))
        except RuleNotApplicable:
            continue
        if c.sentence in doc:
            # the edit reproduced another document sentence, so it is not an error
            continue
        summary, label, spans = c.sentence, "non_factual", [list(c.span)]
        break
    graph, align = read_sentence(summary)
    return {
        "id": f"synth-{index:05d}",
        "origin": "synthetic",
        "document": doc,
        "doc_amrs": [serialize_penman(read_sentence(s)[0], indent=None) for s in doc],
        "summary_sentence": summary,
        "summary_amr": serialize_penman(graph, indent=None),
        "label": label,
        "nonfactual_spans": spans,
        "alignments": align,
        "rule": rule,
    }


def generate_corpus(n: int, seed: int = 0) -> list[dict]:
    """``n`` records with exactly ``n // 2`` corrupted ones, in shuffled order."""
    rng = np.random.default_rng(seed)
    flags = np.array([True] * (n // 2) + [False] * (n - n // 2))
    rng.shuffle(flags)
    return [generate_example(rng, i, bool(c)) for i, c in enumerate(flags)]
