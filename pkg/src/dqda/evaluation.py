"""Pair scoring, ROC / normalized partial AUC, query ranking and vocabulary
Jaccard analyses."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch

from . import encoder as enc
from .corpus import Question, QuestionId, QuestionPair, DUPLICATE, NON_DUPLICATE
from .encoder import ModelConfig, Params
from .errors import ConfigurationError
from .tokenizer import Tokenizer
from .training import PairEncoder


@dataclass(frozen=True)
class ScoredPair:
    pair: QuestionPair
    score: float


@dataclass
class ScoringModel:
    params: Params
    config: ModelConfig
    tokenizer: Tokenizer
    max_seq_len: int | None = None

    def __post_init__(self):
        if len(self.tokenizer) != self.config.vocab_size:
            raise ConfigurationError(
                f"checkpoint vocab_size {self.config.vocab_size} does not match tokenizer ({len(self.tokenizer)})"
            )

    @classmethod
    def from_files(cls, checkpoint, vocab_path) -> "ScoringModel":
        params, config = enc.load_checkpoint(checkpoint)
        return cls(params, config, Tokenizer.load(vocab_path))

    @property
    def seq_len(self) -> int:
        return min(self.max_seq_len or self.config.max_seq_len, self.config.max_seq_len)


def score_pairs(
    model: ScoringModel,
    pairs: Sequence[QuestionPair],
    questions: Mapping[QuestionId, Question],
    batch_size: int = 32,
    pair_encoder: PairEncoder | None = None,
) -> list[ScoredPair]:
    """Probability of "duplicate" for every pair, in input order."""
    pe = pair_encoder or PairEncoder(model.tokenizer, questions, model.seq_len)
    out: list[ScoredPair] = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            packed = [pe.pack(p) for p in chunk]
            titles = enc.collate([t for t, _ in packed])
            bodies = enc.collate([b for _, b in packed])
            rep = enc.pair_representation(model.params, model.config, titles, bodies, train_mode=False)
            logits = enc.pair_logits(model.params, rep).double()
            # sigmoid of the logit gap == softmax probability of class 1, without float32 saturation
            probs = torch.sigmoid(logits[:, 1] - logits[:, 0])
            out.extend(ScoredPair(p, float(s)) for p, s in zip(chunk, probs.tolist()))
    return out


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    n_pos: int
    n_neg: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _scores_labels(scored, labels=None) -> tuple[np.ndarray, np.ndarray]:
    if labels is None:
        scored = list(scored)
        scores = np.array([s.score for s in scored], dtype=np.float64)
        labels = np.array([s.pair.is_duplicate for s in scored], dtype=bool)
    else:
        scores = np.asarray(scored, dtype=np.float64)
        labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    return scores, labels


def roc_curve(scored, labels=None) -> RocCurve:
    """ROC staircase over descending score thresholds.

    Accepts a sequence of :class:`ScoredPair` or ``(scores, labels)`` arrays.
    Tied scores share a single vertex, so a tie group between positives and
    negatives becomes one diagonal segment.
    """
    scores, labels = _scores_labels(scored, labels)
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = (last_of_group + 1) - tp
    return RocCurve(
        fpr=np.r_[0.0, fp / n_neg],
        tpr=np.r_[0.0, tp / n_pos],
        thresholds=np.r_[np.inf, s[last_of_group]],
        n_pos=n_pos,
        n_neg=n_neg,
    )


def auc_at(curve: RocCurve, fpr_cap: float = 0.05) -> float:
    """Trapezoidal ROC area on ``fpr in [0, fpr_cap]`` divided by ``fpr_cap``."""
    if not 0.0 < fpr_cap <= 1.0:
        raise ValueError("fpr_cap must be in (0, 1]")
    fpr, tpr = curve.fpr, curve.tpr
    stop = int(np.searchsorted(fpr, fpr_cap, side="right"))
    xs, ys = fpr[:stop], tpr[:stop]
    if stop < len(fpr):
        x0, x1, y0, y1 = fpr[stop - 1], fpr[stop], tpr[stop - 1], tpr[stop]
        xs = np.r_[xs, fpr_cap]
        ys = np.r_[ys, y0 + (y1 - y0) * (fpr_cap - x0) / (x1 - x0)]
    area = float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))
    return min(1.0, max(0.0, area / fpr_cap))


@dataclass
class EvalReport:
    auc005: float
    n_pos: int
    n_neg: int
    fpr_cap: float = 0.05
    config: dict = field(default_factory=dict)
    curve: RocCurve | None = field(default=None, repr=False)

    def to_json(self) -> str:
        body = {
            "auc005": self.auc005,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "fpr_cap": self.fpr_cap,
            "config": self.config,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def evaluate_scores(scored: Sequence[ScoredPair], fpr_cap: float = 0.05, config: Mapping | None = None) -> EvalReport:
    curve = roc_curve(scored)
    return EvalReport(auc_at(curve, fpr_cap), curve.n_pos, curve.n_neg, fpr_cap, dict(config or {}), curve)


def write_curve_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def make_auc_metric(
    pairs: Sequence[QuestionPair],
    questions: Mapping[QuestionId, Question],
    tokenizer: Tokenizer,
    config: ModelConfig,
    fpr_cap: float = 0.05,
    batch_size: int = 64,
    max_seq_len: int | None = None,
) -> Callable[[Params], float]:
    """Dev-set AUC@cap as a function of parameters, for early stopping."""
    pe = PairEncoder(tokenizer, questions, min(max_seq_len or config.max_seq_len, config.max_seq_len))

    def metric(params: Params) -> float:
        model = ScoringModel(params, config, tokenizer, max_seq_len)
        return auc_at(roc_curve(score_pairs(model, pairs, questions, batch_size, pe)), fpr_cap)

    return metric


def rank_candidates(
    model: ScoringModel,
    query: QuestionId,
    questions: Mapping[QuestionId, Question],
    top_k: int = 10,
    candidates: Iterable[QuestionId] | None = None,
    batch_size: int = 64,
) -> list[tuple[QuestionId, float]]:
    """Candidates by descending duplicate probability against ``query``; ties by id."""
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    pool = [c for c in (candidates if candidates is not None else questions) if c != query]
    if not pool:
        raise ValueError("candidate store is empty")
    pairs = [QuestionPair(query, c, NON_DUPLICATE) for c in pool]
    scored = score_pairs(model, pairs, questions, batch_size)
    ranked = sorted(((s.pair.q2, s.score) for s in scored), key=lambda t: (-t[1], t[0]))
    return ranked[:top_k]


# --- vocabulary Jaccard -------------------------------------------------------

_WORD = re.compile(r"\w+")


def title_ngrams(title: str, ngram: int = 1) -> set:
    """Case-preserved word n-gram types of a title; punctuation separates words."""
    if ngram not in (1, 2):
        raise ValueError("ngram must be 1 or 2")
    words = _WORD.findall(title)
    if ngram == 1:
        return set(words)
    return set(zip(words, words[1:]))


def jaccard(a: set, b: set) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


@dataclass
class JaccardReport:
    mode: str
    ngram: int
    values: object  # matrix (datasets) or {"positive": m, "negative": m}
    names: list[str] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.mode == "dataset_vs_dataset":
                w.writerow(["", *self.names])
                for name, row in zip(self.names, self.values):
                    w.writerow([name, *(f"{v:.6f}" for v in row)])
            else:
                w.writerow(["ngram", "positive", "negative"])
                w.writerow([self.ngram, f"{self.values['positive']:.6f}", f"{self.values['negative']:.6f}"])


def vocab_jaccard_datasets(corpora, ngram: int = 1) -> JaccardReport:
    """Jaccard index between the title n-gram vocabularies of each pair of corpora.

    ``corpora`` is a mapping name -> titles or a list of title collections.
    """
    if isinstance(corpora, Mapping):
        names, collections = list(corpora), list(corpora.values())
    else:
        collections = list(corpora)
        names = [f"corpus{i}" for i in range(len(collections))]
    if len(collections) < 2:
        raise ValueError("need at least two corpora")
    vocabs = []
    for name, titles in zip(names, collections):
        v: set = set()
        for t in titles:
            v |= title_ngrams(t, ngram)
        if not v:
            raise ValueError(f"corpus {name} has an empty vocabulary")
        vocabs.append(v)
    n = len(vocabs)
    m = np.eye(n)
    for i, j in combinations(range(n), 2):
        m[i, j] = m[j, i] = jaccard(vocabs[i], vocabs[j])
    return JaccardReport("dataset_vs_dataset", ngram, m, names)


def vocab_jaccard_pairs(
    pairs: Sequence[QuestionPair],
    questions: Mapping[QuestionId, Question],
    ngram: int = 1,
) -> JaccardReport:
    """Mean title-pair Jaccard index separately for duplicate and non-duplicate pairs."""
    by_label: dict[str, list[float]] = {DUPLICATE: [], NON_DUPLICATE: []}
    for p in pairs:
        a = title_ngrams(questions[p.q1].title, ngram)
        b = title_ngrams(questions[p.q2].title, ngram)
        by_label[p.label].append(jaccard(a, b))
    if not by_label[DUPLICATE] or not by_label[NON_DUPLICATE]:
        raise ValueError("pairs must contain both duplicate and non-duplicate examples")
    return JaccardReport(
        "pairwise_within_dataset",
        ngram,
        {"positive": float(np.mean(by_label[DUPLICATE])), "negative": float(np.mean(by_label[NON_DUPLICATE]))},
    )
