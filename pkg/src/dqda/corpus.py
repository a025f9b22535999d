"""StackExchange dump ingestion: posts, duplicate links, labeled pairs and
unlabeled adaptation corpora.

Question ids are ``(domain, post_id)`` tuples so that corpora from several
forums can share one question store.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, replace
from html.parser import HTMLParser
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence, Union

from .errors import ConfigurationError, CorpusQualityError, IngestError

log = logging.getLogger(__name__)

QuestionId = tuple  # (domain, post_id)

DUPLICATE = "duplicate"
NON_DUPLICATE = "non_duplicate"

POST_TYPES = {"1": "question", "2": "answer"}
LINK_KINDS = {"3": "duplicate", "1": "related"}

DEFAULT_MAX_MALFORMED = 0.01


@dataclass(frozen=True)
class RawPost:
    post_id: int
    post_type: str
    title: str
    body_html: str
    domain: str


@dataclass(frozen=True)
class Question:
    id: QuestionId
    title: str
    body: str
    token_count: int = 0

    @property
    def domain(self) -> str:
        return self.id[0]


@dataclass(frozen=True)
class DuplicateLink:
    src_id: QuestionId
    dst_id: QuestionId
    link_kind: str


@dataclass(frozen=True)
class QuestionPair:
    q1: QuestionId
    q2: QuestionId
    label: str

    @property
    def is_duplicate(self) -> bool:
        return self.label == DUPLICATE

    @property
    def key(self) -> frozenset:
        return frozenset((self.q1, self.q2))


@dataclass
class DatasetSplit:
    train: list[QuestionPair]
    dev: list[QuestionPair]
    test: list[QuestionPair]
    negatives_per_positive_eval: int


@dataclass(frozen=True)
class UnsupervisedDoc:
    question_id: QuestionId
    text: str
    sentences: tuple[str, ...]
    domain: str = ""


@dataclass
class ParseResult:
    """Parsed items plus per-reason counts of skipped rows."""

    items: list
    skipped: Counter = field(default_factory=Counter)
    total_rows: int = 0

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    @property
    def n_skipped(self) -> int:
        return sum(self.skipped.values())


def _check_quality(n_malformed: int, total: int, max_malformed: float, what: str) -> None:
    # A lone bad row is always tolerated so tiny fixtures do not trip the gate.
    allowed = max(1.0, max_malformed * total)
    if n_malformed > allowed:
        raise CorpusQualityError(
            f"{what}: {n_malformed} of {total} rows malformed "
            f"(limit {max_malformed:.2%})"
        )


def _iter_rows(stream: IO[bytes], what: str) -> Iterator[dict]:
    try:
        for _, elem in ET.iterparse(stream, events=("end",)):
            if elem.tag == "row":
                yield dict(elem.attrib)
                elem.clear()
    except ET.ParseError as exc:
        raise IngestError(f"{what}: unreadable XML ({exc})") from exc
    except OSError as exc:
        raise IngestError(f"{what}: {exc}") from exc


def _open_bytes(source) -> IO[bytes]:
    if isinstance(source, (str, Path)):
        try:
            return open(source, "rb")
        except OSError as exc:
            raise IngestError(f"cannot open {source}: {exc}") from exc
    if isinstance(source, bytes):
        return io.BytesIO(source)
    return source


def parse_posts_xml(stream, domain: str, max_malformed: float = DEFAULT_MAX_MALFORMED) -> ParseResult:
    """Parse a ``Posts.xml`` dump into :class:`RawPost` records.

    Rows with a missing or non-integer ``Id``/``PostTypeId``, or questions
    without a title, are skipped and counted under ``"malformed"``.
    """
    fh = _open_bytes(stream)
    result = ParseResult(items=[])
    seen: set[int] = set()
    try:
        for row in _iter_rows(fh, f"Posts.xml[{domain}]"):
            result.total_rows += 1
            try:
                post_id = int(row["Id"])
                type_id = row["PostTypeId"]
                int(type_id)
            except (KeyError, ValueError):
                result.skipped["malformed"] += 1
                continue
            post_type = POST_TYPES.get(type_id, "other")
            title = " ".join(row.get("Title", "").split())
            if post_id <= 0 or (post_type == "question" and not title):
                result.skipped["malformed"] += 1
                continue
            if post_id in seen:
                result.skipped["duplicate_id"] += 1
                continue
            seen.add(post_id)
            result.items.append(RawPost(post_id, post_type, title, row.get("Body", ""), domain))
    finally:
        if fh is not stream:
            fh.close()
    _check_quality(result.skipped["malformed"], result.total_rows, max_malformed, f"Posts.xml[{domain}]")
    return result


def parse_postlinks_xml(stream, domain: str = "", max_malformed: float = DEFAULT_MAX_MALFORMED) -> ParseResult:
    """Parse a ``PostLinks.xml`` dump into :class:`DuplicateLink` records."""
    fh = _open_bytes(stream)
    result = ParseResult(items=[])
    try:
        for row in _iter_rows(fh, f"PostLinks.xml[{domain}]"):
            result.total_rows += 1
            try:
                src = int(row["PostId"])
                dst = int(row["RelatedPostId"])
                kind = LINK_KINDS.get(str(int(row["LinkTypeId"])), "other")
            except (KeyError, ValueError):
                result.skipped["malformed"] += 1
                continue
            if src == dst:
                result.skipped["self_link"] += 1
                continue
            result.items.append(DuplicateLink((domain, src), (domain, dst), kind))
    finally:
        if fh is not stream:
            fh.close()
    _check_quality(result.skipped["malformed"], result.total_rows, max_malformed, f"PostLinks.xml[{domain}]")
    return result


_BLOCK_TAGS = frozenset(
    "p div br li ul ol pre blockquote h1 h2 h3 h4 h5 h6 tr td th table hr dl dt dd".split()
)


class _TextExtractor(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in _BLOCK_TAGS:
            self.parts.append(" ")

    def handle_endtag(self, tag):
        if tag in _BLOCK_TAGS:
            self.parts.append(" ")

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)

    def handle_data(self, data):
        self.parts.append(data)


def strip_html(html: str) -> str:
    """Convert post HTML to a single line of plain text.

    Code blocks are kept as literal text; block-level tags act as word
    boundaries.
    """
    parser = _TextExtractor()
    try:
        parser.feed(html)
        parser.close()
    except Exception:  # pragma: no cover - HTMLParser is very lenient
        log.warning("HTML parse failure, falling back to regex strip")
        return " ".join(re.sub(r"<[^>]*>", " ", html).split())
    return " ".join("".join(parser.parts).split())


def questions_from_posts(posts: Iterable[RawPost]) -> dict[QuestionId, Question]:
    return {
        (p.domain, p.post_id): Question((p.domain, p.post_id), p.title, strip_html(p.body_html))
        for p in posts
        if p.post_type == "question"
    }


def _as_store(questions) -> Mapping[QuestionId, Question]:
    if isinstance(questions, Mapping):
        return questions
    return {q.id: q for q in questions}


def build_pairs(
    questions,
    links: Iterable[DuplicateLink],
    negatives_per_positive: int,
    rng_seed: int,
) -> list[QuestionPair]:
    """Turn duplicate links into labeled pairs with random negatives.

    Each positive is emitted immediately followed by its own negatives; the
    grouping is relied on by :func:`split_dataset`. Links are treated as
    undirected and deduplicated.
    """
    if negatives_per_positive < 0:
        raise ConfigurationError("negatives_per_positive must be >= 0")
    store = _as_store(questions)
    rng = random.Random(rng_seed)

    positives: list[tuple[QuestionId, QuestionId]] = []
    dup_of: dict[QuestionId, set[QuestionId]] = {}
    seen: set[frozenset] = set()
    for link in links:
        if link.link_kind != "duplicate" or link.src_id == link.dst_id:
            continue
        if link.src_id not in store or link.dst_id not in store:
            continue
        key = frozenset((link.src_id, link.dst_id))
        if key in seen:
            continue
        seen.add(key)
        positives.append((link.src_id, link.dst_id))
        dup_of.setdefault(link.src_id, set()).add(link.dst_id)
        dup_of.setdefault(link.dst_id, set()).add(link.src_id)

    pool = sorted(store)
    emitted = set(seen)
    pairs: list[QuestionPair] = []
    for q1, q2 in positives:
        pairs.append(QuestionPair(q1, q2, DUPLICATE))
        if not negatives_per_positive:
            continue
        banned = dup_of[q1] | {q1}
        available = len(pool) - len(banned)
        if available < negatives_per_positive:
            raise ConfigurationError(
                f"question pool too small: {available} candidates for "
                f"{negatives_per_positive} negatives of {q1}"
            )
        chosen = 0
        attempts = 0
        # Rejection sampling keeps the draw uniform over the eligible pool.
        while chosen < negatives_per_positive:
            attempts += 1
            if attempts > 50 * (negatives_per_positive + len(pool)):
                raise ConfigurationError(f"could not find enough unused negatives for {q1}")
            cand = pool[rng.randrange(len(pool))]
            key = frozenset((q1, cand))
            if cand in banned or key in emitted:
                continue
            emitted.add(key)
            pairs.append(QuestionPair(q1, cand, NON_DUPLICATE))
            chosen += 1
    return pairs


def group_pairs(pairs: Sequence[QuestionPair]) -> list[list[QuestionPair]]:
    """Split a :func:`build_pairs` list into [positive, *negatives] groups."""
    groups: list[list[QuestionPair]] = []
    for pair in pairs:
        if pair.is_duplicate:
            groups.append([pair])
        elif not groups:
            raise ConfigurationError("negative pair precedes any positive; expected build_pairs ordering")
        else:
            groups[-1].append(pair)
    return groups


def split_dataset(
    pairs: Sequence[QuestionPair],
    dev_positives: int,
    test_positives: int,
    rng_seed: int,
    train_negatives_per_positive: int | None = 1,
) -> DatasetSplit:
    """Partition grouped pairs into train/dev/test.

    Dev and test keep every negative of their groups; train keeps at most
    ``train_negatives_per_positive`` negatives per positive (``None`` keeps
    all). Train pairs touching any question of a dev/test positive are
    dropped.
    """
    groups = group_pairs(pairs)
    need = dev_positives + test_positives
    if dev_positives < 0 or test_positives < 0 or need > len(groups):
        raise ConfigurationError(
            f"{len(groups)} positives cannot supply dev={dev_positives} test={test_positives}"
        )
    order = list(range(len(groups)))
    random.Random(rng_seed).shuffle(order)
    dev_groups = [groups[i] for i in order[:dev_positives]]
    test_groups = [groups[i] for i in order[dev_positives:need]]
    train_groups = [groups[i] for i in sorted(order[need:])]

    eval_sizes = {len(g) - 1 for g in dev_groups + test_groups}
    if len(eval_sizes) > 1:
        raise ConfigurationError(f"uneven negatives per positive in eval groups: {sorted(eval_sizes)}")
    eval_ratio = eval_sizes.pop() if eval_sizes else 0

    held_out = {q for g in dev_groups + test_groups for q in (g[0].q1, g[0].q2)}
    train: list[QuestionPair] = []
    for g in train_groups:
        if g[0].q1 in held_out or g[0].q2 in held_out:
            continue
        negs = [p for p in g[1:] if p.q1 not in held_out and p.q2 not in held_out]
        if train_negatives_per_positive is not None:
            negs = negs[:train_negatives_per_positive]
        train.append(g[0])
        train.extend(negs)

    flat = lambda gs: [p for g in gs for p in g]
    return DatasetSplit(train, flat(dev_groups), flat(test_groups), eval_ratio)


def subsample_positive_groups(pairs: Sequence[QuestionPair], fraction: float, rng_seed: int) -> list[QuestionPair]:
    """Keep a seeded fraction of positives, each with its own negatives."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"label fraction must be in (0, 1], got {fraction}")
    groups = group_pairs(pairs)
    if fraction == 1.0:
        return [p for g in groups for p in g]
    k = max(1, round(fraction * len(groups)))
    keep = sorted(random.Random(rng_seed).sample(range(len(groups)), k))
    return [p for i in keep for p in groups[i]]


@dataclass(frozen=True)
class SentenceSplitterConfig:
    abbreviations: frozenset = frozenset(
        "e.g. i.e. etc. vs. mr. mrs. ms. dr. prof. inc. ltd. no. fig. approx. cf. al.".split()
    )


_TERMINAL = re.compile(r"[.!?]+[\"')\]]*$")
_OPENER = re.compile(r"^[\"'(\[]*[A-Z0-9]")


def split_sentences(text: str, config: SentenceSplitterConfig = SentenceSplitterConfig()) -> list[str]:
    words = text.split()
    sentences: list[str] = []
    current: list[str] = []
    for i, word in enumerate(words):
        current.append(word)
        nxt = words[i + 1] if i + 1 < len(words) else None
        if (
            nxt is not None
            and _TERMINAL.search(word)
            and word.lower() not in config.abbreviations
            and _OPENER.match(nxt)
        ):
            sentences.append(" ".join(current))
            current = []
    if current:
        sentences.append(" ".join(current))
    return sentences


def question_paragraph(question: Question) -> str:
    title = " ".join(question.title.split())
    body = " ".join(question.body.split())
    if not body:
        return title
    if not re.search(r"[.!?]$", title):
        title += "."
    return f"{title} {body}"


def build_unsupervised_corpus(
    questions,
    sentence_splitter_config: SentenceSplitterConfig = SentenceSplitterConfig(),
) -> list[UnsupervisedDoc]:
    docs = []
    for q in _as_store(questions).values():
        text = question_paragraph(q)
        docs.append(UnsupervisedDoc(q.id, text, tuple(split_sentences(text, sentence_splitter_config)), q.domain))
    return docs


def merge_domains(
    corpora: Sequence[tuple[str, Sequence[UnsupervisedDoc]]],
    weights: Sequence[float] | None = None,
    exclude: Iterable[str] = (),
) -> list[UnsupervisedDoc]:
    """Interleave per-domain corpora into one, tagging each doc with its domain.

    Docs are emitted by weighted stride scheduling: a domain with weight
    ``w`` contributes its ``i``-th doc at virtual time ``(i + 1) / w``. Every
    doc of a positively weighted, non-excluded domain appears exactly once.
    """
    if weights is None:
        weights = [1.0] * len(corpora)
    if len(weights) != len(corpora):
        raise ConfigurationError("one weight per corpus required")
    if any(w < 0 for w in weights):
        raise ConfigurationError("weights must be non-negative")
    excluded = set(exclude)
    schedule = []
    for rank, ((domain, docs), w) in enumerate(zip(corpora, weights)):
        if domain in excluded or w == 0:
            continue
        for i, doc in enumerate(docs):
            tagged = doc if doc.domain == domain else replace(doc, domain=domain)
            schedule.append(((i + 1) / w, rank, i, tagged))
    if not schedule:
        raise ConfigurationError("merged corpus is empty")
    schedule.sort(key=lambda t: t[:3])
    return [t[3] for t in schedule]


def sample_unsupervised(corpus: Sequence[UnsupervisedDoc], n_questions: int, rng_seed: int) -> list[UnsupervisedDoc]:
    """Uniform sample without replacement; original corpus order is kept."""
    if not 0 < n_questions <= len(corpus):
        raise ConfigurationError(f"cannot sample {n_questions} of {len(corpus)} documents")
    keep = sorted(random.Random(rng_seed).sample(range(len(corpus)), n_questions))
    return [corpus[i] for i in keep]


@dataclass(frozen=True)
class ExternalPairSchema:
    """Column layout of a delimited pair file (0-based indices)."""

    id1: int = 0
    text1: int = 1
    id2: int = 2
    text2: int = 3
    label: int = 4
    domain: str = "external"
    delimiter: str = "\t"
    has_header: bool = False
    positive_labels: frozenset = frozenset({"1", "true", "duplicate"})
    negative_labels: frozenset = frozenset({"0", "false", "non_duplicate"})

    @classmethod
    def quora(cls) -> "ExternalPairSchema":
        # id, qid1, qid2, question1, question2, is_duplicate
        return cls(id1=1, text1=3, id2=2, text2=4, label=5, domain="quora", has_header=True)


def _coerce_id(raw: str) -> Union[int, str]:
    raw = raw.strip()
    return int(raw) if raw.isdigit() else raw


def ingest_external_pairs(
    stream,
    schema: ExternalPairSchema = ExternalPairSchema(),
    max_malformed: float = DEFAULT_MAX_MALFORMED,
) -> tuple[list[QuestionPair], dict[QuestionId, Question], ParseResult]:
    """Read a title-only pair dataset such as Quora question pairs."""
    if isinstance(stream, (str, Path)):
        try:
            stream = open(stream, encoding="utf-8", newline="")
        except OSError as exc:
            raise IngestError(f"cannot open {stream}: {exc}") from exc
    elif isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    reader = csv.reader(stream, delimiter=schema.delimiter, quoting=csv.QUOTE_MINIMAL)
    width = max(schema.id1, schema.text1, schema.id2, schema.text2, schema.label) + 1
    pairs: list[QuestionPair] = []
    store: dict[QuestionId, Question] = {}
    report = ParseResult(items=pairs)
    try:
        for lineno, row in enumerate(reader):
            if lineno == 0 and schema.has_header:
                continue
            report.total_rows += 1
            if len(row) < width:
                report.skipped["malformed"] += 1
                continue
            id1, id2 = _coerce_id(row[schema.id1]), _coerce_id(row[schema.id2])
            t1, t2 = " ".join(row[schema.text1].split()), " ".join(row[schema.text2].split())
            label = row[schema.label].strip().lower()
            if label in schema.positive_labels:
                label = DUPLICATE
            elif label in schema.negative_labels:
                label = NON_DUPLICATE
            else:
                report.skipped["malformed"] += 1
                continue
            if id1 == "" or id2 == "" or id1 == id2 or not t1 or not t2:
                report.skipped["malformed"] += 1
                continue
            q1, q2 = (schema.domain, id1), (schema.domain, id2)
            store.setdefault(q1, Question(q1, t1, ""))
            store.setdefault(q2, Question(q2, t2, ""))
            pairs.append(QuestionPair(q1, q2, label))
    except csv.Error as exc:
        raise IngestError(f"unreadable pair file: {exc}") from exc
    _check_quality(report.skipped["malformed"], report.total_rows, max_malformed, "external pairs")
    return pairs, store, report


# --- line-delimited JSON storage -------------------------------------------


def _id_json(qid: QuestionId) -> list:
    return [qid[0], qid[1]]


def _id_from_json(value) -> QuestionId:
    return (value[0], value[1])


def question_to_json(q: Question) -> dict:
    return {"id": _id_json(q.id), "title": q.title, "body": q.body, "token_count": q.token_count}


def pair_to_json(p: QuestionPair) -> dict:
    return {"q1": _id_json(p.q1), "q2": _id_json(p.q2), "label": p.label}


def doc_to_json(d: UnsupervisedDoc) -> dict:
    return {
        "question_id": _id_json(d.question_id),
        "text": d.text,
        "sentences": list(d.sentences),
        "domain": d.domain,
    }


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_jsonl(path) -> Iterator[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc


def save_questions(path, questions) -> None:
    write_jsonl(path, (question_to_json(q) for q in _as_store(questions).values()))


def load_questions(path) -> dict[QuestionId, Question]:
    out = {}
    for rec in read_jsonl(path):
        qid = _id_from_json(rec["id"])
        out[qid] = Question(qid, rec["title"], rec["body"], rec.get("token_count", 0))
    return out


def save_pairs(path, pairs: Iterable[QuestionPair]) -> None:
    write_jsonl(path, (pair_to_json(p) for p in pairs))


def load_pairs(path) -> list[QuestionPair]:
    return [
        QuestionPair(_id_from_json(r["q1"]), _id_from_json(r["q2"]), r["label"])
        for r in read_jsonl(path)
    ]


def save_docs(path, docs: Iterable[UnsupervisedDoc]) -> None:
    write_jsonl(path, (doc_to_json(d) for d in docs))


def load_docs(path) -> list[UnsupervisedDoc]:
    return [
        UnsupervisedDoc(_id_from_json(r["question_id"]), r["text"], tuple(r["sentences"]), r.get("domain", ""))
        for r in read_jsonl(path)
    ]
