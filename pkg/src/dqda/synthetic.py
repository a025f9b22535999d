"""Synthetic forum generator for desk-scale experiments and fixtures.

Each domain owns concepts arranged in topic groups, and every concept has
several synonymous surface words drawn from a domain-specific alphabet. A
question is about a topic (two concepts of one group); its title and body
mention those concepts with independently chosen synonyms. Two questions on
the same topic are duplicates, so a duplicate pair only ever uses words of
one group while a random negative usually mixes groups. Which words belong
together is visible only through co-occurrence in domain text, which is the
knowledge unsupervised adaptation can supply.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from xml.sax.saxutils import quoteattr

from .corpus import DuplicateLink, Question, QuestionPair, DUPLICATE, NON_DUPLICATE

_TITLE_TEMPLATES = (
    "How do I fix {a} with {b}?",
    "Why does {a} break {b}?",
    "{a} fails after {b} update",
    "Can {a} work together with {b}?",
    "Problem using {a} and {b}",
    "What is wrong with {a} when {b} runs?",
)
_BODY_TEMPLATES = (
    "I installed {a} yesterday.",
    "Since then {b} is not working.",
    "My {a} shows an error about {b}.",
    "I tried to reinstall {b} but nothing changed.",
    "Any idea how {a} and {b} interact?",
    "The {a} log mentions {b} again.",
    "Restarting {a} did not help.",
    "It happens every time {b} starts.",
)
_FILLER = (
    "Thanks in advance.",
    "I am new here.",
    "Please help.",
    "This used to work.",
    "I searched but found nothing.",
)


@dataclass
class SyntheticDomain:
    name: str
    synonyms: list[list[str]]  # concept -> surface words
    groups: list[list[int]]  # topic group -> concepts
    questions: dict = field(default_factory=dict)
    links: list[DuplicateLink] = field(default_factory=list)
    topic_of: dict = field(default_factory=dict)

    @property
    def n_concepts(self) -> int:
        return len(self.synonyms)


def _pseudo_words(rng: random.Random, n: int, letters: str, length: int = 3) -> list[str]:
    out: set[str] = set()
    while len(out) < n:
        out.add("".join(rng.choice(letters) for _ in range(length)))
    return sorted(out)


def make_domain(
    name: str,
    seed: int,
    n_groups: int = 16,
    concepts_per_group: int = 6,
    n_synonyms: int = 2,
    letters: str = "bcdfghjklm",
) -> SyntheticDomain:
    rng = random.Random(f"{name}:{seed}")
    n_concepts = n_groups * concepts_per_group
    words = _pseudo_words(rng, n_concepts * n_synonyms, letters)
    rng.shuffle(words)
    syn = [words[i * n_synonyms : (i + 1) * n_synonyms] for i in range(n_concepts)]
    groups = [list(range(g * concepts_per_group, (g + 1) * concepts_per_group)) for g in range(n_groups)]
    return SyntheticDomain(name, syn, groups)


def _question_text(domain: SyntheticDomain, topic: tuple[int, int], rng: random.Random, body_sentences: int):
    a_c, b_c = topic
    pick = lambda c: rng.choice(domain.synonyms[c])
    title = rng.choice(_TITLE_TEMPLATES).format(a=pick(a_c), b=pick(b_c))
    sents = [t.format(a=pick(a_c), b=pick(b_c)) for t in rng.sample(_BODY_TEMPLATES, body_sentences)]
    if rng.random() < 0.5:
        sents.append(rng.choice(_FILLER))
    return title, " ".join(sents)


def populate(
    domain: SyntheticDomain,
    n_duplicate_topics: int,
    n_single_questions: int,
    seed: int,
    body_sentences: int = 3,
    title_only: bool = False,
) -> SyntheticDomain:
    """Fill ``domain`` with duplicate topic pairs followed by unpaired questions."""
    rng = random.Random(f"populate:{domain.name}:{seed}")
    all_topics = [(a, b) for g in domain.groups for a in g for b in g if a < b]
    rng.shuffle(all_topics)
    if n_duplicate_topics > len(all_topics):
        raise ValueError("not enough distinct topics")
    next_id = 1

    def add(topic):
        nonlocal next_id
        qid = (domain.name, next_id)
        next_id += 1
        title, body = _question_text(domain, topic, rng, body_sentences)
        domain.questions[qid] = Question(qid, title, "" if title_only else body)
        domain.topic_of[qid] = topic
        return qid

    for topic in all_topics[:n_duplicate_topics]:
        q1, q2 = add(topic), add(topic)
        domain.links.append(DuplicateLink(q2, q1, "duplicate"))
    for _ in range(n_single_questions):
        add(rng.choice(all_topics[n_duplicate_topics:] or all_topics))
    return domain


def hard_negative_pairs(domain: SyntheticDomain, seed: int) -> list[QuestionPair]:
    """Duplicate pairs plus negatives that share their first concept word-for-word.

    Mirrors a labeling function whose negatives are chosen for lexical
    overlap rather than at random.
    """
    rng = random.Random(f"hard:{domain.name}:{seed}")
    pairs = []
    next_id = max(pid for _, pid in domain.questions) + 1
    for link in domain.links:
        q1 = domain.questions[link.dst_id]
        pairs.append(QuestionPair(link.dst_id, link.src_id, DUPLICATE))
        a_c, b_c = domain.topic_of[link.dst_id]
        group = next(g for g in domain.groups if a_c in g)
        other = rng.choice([c for c in group if c not in (a_c, b_c)])
        b_word = rng.choice(domain.synonyms[other])
        # reuse q1's title with the second concept swapped out
        words = q1.title.split()
        for w in domain.synonyms[b_c]:
            words = [b_word if x.rstrip("?") == w else x for x in words]
        qid = (domain.name, next_id)
        next_id += 1
        domain.questions[qid] = Question(qid, " ".join(words), "")
        domain.topic_of[qid] = (a_c, other)
        pairs.append(QuestionPair(link.dst_id, qid, NON_DUPLICATE))
    return pairs


def posts_xml(domain: SyntheticDomain) -> bytes:
    """Render questions as a StackExchange ``Posts.xml`` document."""
    from html import escape

    rows = []
    for (_, pid), q in sorted(domain.questions.items(), key=lambda kv: kv[0][1]):
        body = "".join(f"<p>{escape(s)}</p>" for s in [q.body] if s)
        rows.append(
            f'  <row Id="{pid}" PostTypeId="1" Title={quoteattr(q.title)} Body={quoteattr(body)} />'
        )
    return ("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n" + "\n".join(rows) + "\n</posts>\n").encode()


def postlinks_xml(domain: SyntheticDomain) -> bytes:
    rows = [
        f'  <row Id="{i}" PostId="{l.src_id[1]}" RelatedPostId="{l.dst_id[1]}" LinkTypeId="3" />'
        for i, l in enumerate(domain.links, 1)
    ]
    return ("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<postlinks>\n" + "\n".join(rows) + "\n</postlinks>\n").encode()
