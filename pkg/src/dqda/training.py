"""Stage 1 (MLM + NSP adaptation) and Stage 2 (pair-classification fine-tuning)."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from . import encoder as enc
from .corpus import Question, QuestionId, QuestionPair, UnsupervisedDoc, subsample_positive_groups
from .encoder import ModelConfig, Params, TokenBatch
from .errors import ConfigurationError, TrainingDivergedError
from .tokenizer import TokenSequence, Tokenizer, Vocab, pack_pair, pack_single

log = logging.getLogger(__name__)

IGNORE_INDEX = -100
IS_NEXT, NOT_NEXT = 0, 1

# per-position outcome codes returned by apply_masking
KEPT_UNSELECTED, MASKED, RANDOMIZED, KEPT_SELECTED = 0, 1, 2, 3


@dataclass(frozen=True)
class MaskingConfig:
    mask_prob: float = 0.15
    replace_mask_frac: float = 0.8
    replace_random_frac: float = 0.1
    keep_frac: float = 0.1
    exclude_special_tokens: bool = True

    def __post_init__(self):
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigurationError("mask_prob must be in [0, 1]")
        fracs = (self.replace_mask_frac, self.replace_random_frac, self.keep_frac)
        if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigurationError("mask/random/keep fractions must be non-negative and sum to 1")
        if not self.exclude_special_tokens:
            raise ConfigurationError("special tokens are always excluded from masking")


@dataclass(frozen=True)
class AdaptationConfig:
    masking: MaskingConfig = MaskingConfig()
    nsp_enabled: bool = True
    steps: int = 1000
    batch_size: int = 32
    learning_rate: float = 1e-4
    warmup_steps: int | None = None
    weight_decay: float = 0.01
    seed: int = 0
    max_seq_len: int | None = None
    log_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.steps <= 0:
            raise ConfigurationError("adaptation steps must be positive")
        if self.batch_size <= 0:
            raise ConfigurationError("batch_size must be positive")


@dataclass(frozen=True)
class FinetuneConfig:
    mode: str = "full_finetune"
    label_fraction: float = 1.0
    epochs: int | None = None
    max_steps: int | None = 1000
    batch_size: int = 16
    learning_rate: float = 2e-5
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    eval_every: int | None = None
    patience: int = 3
    seed: int = 0
    max_seq_len: int | None = None

    def __post_init__(self):
        if self.mode not in ("full_finetune", "frozen_encoder"):
            raise ConfigurationError(f"unknown fine-tune mode {self.mode!r}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigurationError("label_fraction must be in (0, 1]")
        if self.epochs is None and self.max_steps is None:
            raise ConfigurationError("set epochs or max_steps")
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")

    @property
    def frozen(self) -> bool:
        return self.mode == "frozen_encoder"


# --- optimizer --------------------------------------------------------------


def _no_decay(name: str) -> bool:
    return name.endswith((".bias", ".scale", ".shift"))


def make_optimizer(params: Params, names: Sequence[str], lr: float, weight_decay: float, total_steps: int, warmup_steps: int):
    """AdamW (decoupled decay, biases and norms exempt) with linear warmup then linear decay."""
    decay = [params[n] for n in names if not _no_decay(n)]
    no_decay = [params[n] for n in names if _no_decay(n)]
    groups = [g for g in ({"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}) if g["params"]]
    opt = torch.optim.AdamW(groups, lr=lr, betas=(0.9, 0.999), eps=1e-8, foreach=False)
    warmup = max(0, warmup_steps)

    def schedule(step: int) -> float:
        if warmup and step < warmup:
            return (step + 1) / warmup
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup))

    return opt, torch.optim.lr_scheduler.LambdaLR(opt, schedule)


@dataclass
class TrainState:
    step: int = 0
    best_metric: float = -math.inf
    best_step: int = -1
    best_eval: int = -1
    best_checkpoint_path: str | None = None
    stopped: bool = False
    optimizer: torch.optim.Optimizer | None = field(default=None, repr=False)

    @property
    def moments(self) -> dict:
        if self.optimizer is None:
            return {}
        return {id(p): (s.get("exp_avg"), s.get("exp_avg_sq")) for p, s in self.optimizer.state.items()}


class EarlyStopping:
    """Track the best dev metric; ties keep the earliest evaluation."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_index = -1
        self.evals = 0
        self.bad_evals = 0

    def update(self, metric: float) -> bool:
        """Record one evaluation; return True if it is the new best."""
        index = self.evals
        self.evals += 1
        if metric > self.best:
            self.best, self.best_index, self.bad_evals = metric, index, 0
            return True
        self.bad_evals += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_evals >= self.patience


# --- Stage 1: masked LM + next sentence --------------------------------------


def tokenize_corpus(docs: Sequence[UnsupervisedDoc], tokenizer: Tokenizer) -> list[list[list[int]]]:
    """Per doc, the token ids of each sentence (empty sentences dropped)."""
    out = []
    for doc in docs:
        sents = [tokenizer.encode(s) for s in (doc.sentences or (doc.text,))]
        out.append([s for s in sents if s])
    return out


@dataclass
class MlmBatch:
    inputs: TokenBatch
    mlm_labels: torch.Tensor
    nsp_labels: torch.Tensor | None
    original_ids: torch.Tensor
    outcome: torch.Tensor  # per-position masking outcome codes

    @property
    def masked_positions(self) -> torch.Tensor:
        return (self.mlm_labels != IGNORE_INDEX).nonzero()


def apply_masking(
    ids: np.ndarray,
    candidates: np.ndarray,
    masking: MaskingConfig,
    vocab: Vocab,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Select candidate positions with ``mask_prob`` and rewrite them 80/10/10.

    Returns ``(new_ids, labels, outcome)``; labels hold the original id at
    selected positions and ``IGNORE_INDEX`` elsewhere.
    """
    selected = candidates & (rng.random(ids.shape) < masking.mask_prob)
    u = rng.random(ids.shape)
    to_mask = selected & (u < masking.replace_mask_frac)
    to_rand = selected & ~to_mask & (u < masking.replace_mask_frac + masking.replace_random_frac)
    ordinary = np.array(sorted(set(range(len(vocab))) - set(vocab.special_ids.values())))
    random_ids = ordinary[rng.integers(0, len(ordinary), ids.shape)] if len(ordinary) else ids

    new_ids = ids.copy()
    new_ids[to_mask] = vocab.mask_id
    new_ids[to_rand] = random_ids[to_rand]
    labels = np.where(selected, ids, IGNORE_INDEX)
    outcome = np.full(ids.shape, KEPT_UNSELECTED, dtype=np.int8)
    outcome[selected] = KEPT_SELECTED
    outcome[to_mask] = MASKED
    outcome[to_rand] = RANDOMIZED
    return new_ids, labels, outcome


def _concat(sents: Sequence[list[int]]) -> list[int]:
    return [t for s in sents for t in s]


def _nsp_example(corpus, rng: np.random.Generator, budget: int, successors: np.ndarray):
    """One (a, b, label) sentence pair; label decided first by a fair coin."""
    is_next = rng.random() < 0.5
    if is_next:
        d, i = successors[rng.integers(len(successors))]
    else:
        d = int(rng.integers(len(corpus)))
        i = int(rng.integers(len(corpus[d])))
    sents = corpus[d]
    half = max(1, budget // 2)
    start = i
    while start > 0 and len(_concat(sents[start - 1 : i + 1])) <= half:
        start -= 1
    a = _concat(sents[start : i + 1])
    if is_next:
        rest, j = sents, i + 1
    else:
        other = int(rng.integers(len(corpus) - 1))
        other += other >= d
        rest = corpus[other]
        j = int(rng.integers(len(rest)))
    b: list[int] = []
    for s in rest[j:]:
        if b and len(a) + len(b) + len(s) > budget:
            break
        b.extend(s)
    return a, b, IS_NEXT if is_next else NOT_NEXT


def make_mlm_nsp_batch(
    corpus: Sequence[Sequence[list[int]]],
    batch_size: int,
    masking: MaskingConfig,
    nsp_enabled: bool,
    max_seq_len: int,
    vocab: Vocab,
    rng: np.random.Generator | int,
) -> MlmBatch:
    """Sample a masked-LM batch from a tokenized corpus (see :func:`tokenize_corpus`).

    With NSP, half the examples pair a span with its true continuation and
    half with a span from another document. Without NSP each example is a
    contiguous window of one document, all in segment 0.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    corpus = [d for d in corpus if d]
    if not corpus:
        raise ConfigurationError("corpus is empty")
    budget = max_seq_len - 3
    seqs: list[TokenSequence] = []
    nsp: list[int] = []
    if nsp_enabled:
        if len(corpus) < 2:
            raise ConfigurationError("next sentence prediction needs at least two documents")
        successors = np.array([(d, i) for d, doc in enumerate(corpus) for i in range(len(doc) - 1)])
        if not len(successors):
            raise ConfigurationError("next sentence prediction needs a document with two sentences")
        for _ in range(batch_size):
            a, b, label = _nsp_example(corpus, rng, budget, successors)
            seqs.append(pack_pair(a, b, max_seq_len, vocab))
            nsp.append(label)
    else:
        for _ in range(batch_size):
            toks = _concat(corpus[int(rng.integers(len(corpus)))])
            room = max_seq_len - 2
            off = int(rng.integers(len(toks) - room + 1)) if len(toks) > room else 0
            seqs.append(pack_single(toks[off : off + room], max_seq_len, vocab))

    batch = enc.collate(seqs)
    ids = batch.ids.numpy()
    special = np.isin(ids, list(vocab.special_ids.values()))
    candidates = (batch.attention_mask.numpy() == 1) & ~special
    new_ids, labels, outcome = apply_masking(ids, candidates, masking, vocab, rng)
    inputs = TokenBatch(torch.from_numpy(new_ids), batch.segment_ids, batch.attention_mask)
    return MlmBatch(
        inputs=inputs,
        mlm_labels=torch.from_numpy(labels),
        nsp_labels=torch.tensor(nsp, dtype=torch.long) if nsp_enabled else None,
        original_ids=batch.ids,
        outcome=torch.from_numpy(outcome),
    )


def mlm_nsp_loss(params: Params, config: ModelConfig, batch: MlmBatch, generator=None, train_mode=True):
    out = enc.forward_encoder(params, config, batch.inputs, train_mode=train_mode, generator=generator)
    pos = batch.masked_positions
    loss_mlm = enc.cross_entropy(enc.mlm_logits(params, config, out, pos), batch.mlm_labels[pos[:, 0], pos[:, 1]])
    loss_nsp = None
    if batch.nsp_labels is not None:
        loss_nsp = enc.cross_entropy(enc.nsp_logits(params, out), batch.nsp_labels)
    total = loss_mlm if loss_nsp is None else loss_mlm + loss_nsp
    return total, loss_mlm, loss_nsp


@dataclass
class AdaptationResult:
    params: Params
    trace: list[dict]
    losses: list[float]
    checkpoint_path: str | None = None


def adaptation_trainable(params: Params, nsp_enabled: bool) -> list[str]:
    skip = set(enc.PAIR_HEAD) | (set() if nsp_enabled else set(enc.NSP_HEAD))
    return [n for n in params if n not in skip]


def run_adaptation(
    params: Params,
    config: ModelConfig,
    corpus: Sequence[Sequence[list[int]]],
    vocab: Vocab,
    cfg: AdaptationConfig,
    out_dir=None,
) -> AdaptationResult:
    """Continue self-supervised training on an unlabeled corpus.

    The pair-classifier head, and the NSP head when NSP is off, are left out
    of the optimizer entirely and come back bit-identical.
    """
    if len(vocab) != config.vocab_size:
        raise ConfigurationError(f"tokenizer has {len(vocab)} ids, model expects {config.vocab_size}")
    max_len = min(cfg.max_seq_len or config.max_seq_len, config.max_seq_len)
    names = adaptation_trainable(params, cfg.nsp_enabled)
    work = enc.require_grad(params, names)
    warmup = cfg.warmup_steps if cfg.warmup_steps is not None else cfg.steps // 10
    opt, sched = make_optimizer(work, names, cfg.learning_rate, cfg.weight_decay, cfg.steps, warmup)
    rng = np.random.default_rng(cfg.seed)
    gen = enc.make_generator(cfg.seed + 1)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    trace: list[dict] = []
    losses: list[float] = []
    ckpt_path = None
    for step in range(1, cfg.steps + 1):
        batch = make_mlm_nsp_batch(corpus, cfg.batch_size, cfg.masking, cfg.nsp_enabled, max_len, vocab, rng)
        total, l_mlm, l_nsp = mlm_nsp_loss(work, config, batch, gen)
        if not torch.isfinite(total):
            _dump_batch(out_dir, batch, step)
            raise TrainingDivergedError(f"non-finite adaptation loss at step {step}: {float(total)}")
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        sched.step()
        losses.append(float(l_mlm.detach()))
        if step % cfg.log_every == 0 or step == cfg.steps:
            row = {"step": step, "loss_mlm": float(l_mlm.detach())}
            if cfg.nsp_enabled:
                row["loss_nsp"] = float(l_nsp.detach())
            row["loss_total"] = float(total.detach())
            trace.append(row)
            log.info("adapt step %d %s", step, row)
        if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            ckpt_path = str(out_dir / "adapt_last.ckpt")
            enc.save_checkpoint(work, config, ckpt_path)

    final = enc.clone_params(work)
    if out_dir:
        ckpt_path = str(out_dir / "adapt_last.ckpt")
        enc.save_checkpoint(final, config, ckpt_path)
        write_trace_csv(out_dir / "adapt_trace.csv", trace, nsp=cfg.nsp_enabled)
    return AdaptationResult(final, trace, losses, ckpt_path)


def _dump_batch(out_dir: Path | None, batch, step: int) -> None:
    if out_dir is None:
        return
    torch.save({"step": step, "batch": batch.__dict__}, out_dir / "diverged_batch.pt")


def write_trace_csv(path, trace: Sequence[Mapping], nsp: bool) -> None:
    cols = ["step", "loss_mlm", "loss_nsp", "loss_total"] if nsp else ["step", "loss_mlm", "loss_total"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in trace:
            w.writerow({k: (f"{row[k]:.6f}" if k != "step" else row[k]) for k in cols})


# --- Stage 2: duplicate question classification ------------------------------


@dataclass
class DqdBatch:
    titles: TokenBatch
    bodies: TokenBatch
    labels: torch.Tensor


class PairEncoder:
    """Caches question token ids and packs title and body pairs."""

    def __init__(self, tokenizer: Tokenizer, questions: Mapping[QuestionId, Question], max_seq_len: int):
        self.tokenizer = tokenizer
        self.questions = questions
        self.max_seq_len = max_seq_len
        self._cache: dict[QuestionId, tuple[list[int], list[int]]] = {}

    def _ids(self, qid: QuestionId):
        hit = self._cache.get(qid)
        if hit is None:
            try:
                q = self.questions[qid]
            except KeyError:
                raise KeyError(f"question {qid} not in the question store") from None
            hit = (self.tokenizer.encode(q.title), self.tokenizer.encode(q.body))
            self._cache[qid] = hit
        return hit

    def pack(self, pair: QuestionPair) -> tuple[TokenSequence, TokenSequence]:
        t1, b1 = self._ids(pair.q1)
        t2, b2 = self._ids(pair.q2)
        vocab = self.tokenizer.vocab
        return pack_pair(t1, t2, self.max_seq_len, vocab), pack_pair(b1, b2, self.max_seq_len, vocab)


def make_dqd_batch(
    pairs: Sequence[QuestionPair],
    questions: Mapping[QuestionId, Question],
    tokenizer: Tokenizer,
    max_seq_len: int,
    encoder: PairEncoder | None = None,
) -> DqdBatch:
    """Title packings, body packings and 0/1 labels, in input order."""
    pe = encoder or PairEncoder(tokenizer, questions, max_seq_len)
    packed = [pe.pack(p) for p in pairs]
    return DqdBatch(
        titles=enc.collate([t for t, _ in packed]),
        bodies=enc.collate([b for _, b in packed]),
        labels=torch.tensor([int(p.is_duplicate) for p in pairs], dtype=torch.long),
    )


def dqd_loss(params: Params, config: ModelConfig, batch: DqdBatch, train_mode=False, generator=None):
    rep = enc.pair_representation(params, config, batch.titles, batch.bodies, train_mode, generator)
    return enc.cross_entropy(enc.pair_logits(params, rep), batch.labels)


@dataclass
class FinetuneResult:
    best_params: Params
    last_params: Params
    history: list[tuple[int, float]]
    trace: list[dict]
    state: TrainState
    train_pairs: list[QuestionPair]


def run_finetune(
    params: Params,
    config: ModelConfig,
    train_pairs: Sequence[QuestionPair],
    questions: Mapping[QuestionId, Question],
    tokenizer: Tokenizer,
    cfg: FinetuneConfig,
    metric_fn: Callable[[Params], float],
    out_dir=None,
) -> FinetuneResult:
    """Supervised pair training with early stopping on ``metric_fn``.

    ``metric_fn`` receives eval-mode parameters and returns the dev metric
    (AUC@0.05 in the standard setup). In frozen mode only the pair-classifier
    head is optimized.
    """
    if len(tokenizer) != config.vocab_size:
        raise ConfigurationError(f"tokenizer has {len(tokenizer)} ids, model expects {config.vocab_size}")
    pairs = subsample_positive_groups(train_pairs, cfg.label_fraction, cfg.seed)
    if not pairs:
        raise ConfigurationError("no training pairs")
    max_len = min(cfg.max_seq_len or config.max_seq_len, config.max_seq_len)
    pe = PairEncoder(tokenizer, questions, max_len)
    packed = [pe.pack(p) for p in pairs]
    labels = torch.tensor([int(p.is_duplicate) for p in pairs], dtype=torch.long)

    steps_per_epoch = math.ceil(len(pairs) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch if cfg.epochs else cfg.max_steps
    if cfg.epochs and cfg.max_steps:
        total = min(total, cfg.max_steps)
    eval_every = cfg.eval_every or (steps_per_epoch if cfg.epochs else 200)

    names = enc.trainable_names(params, cfg.frozen)
    work = enc.require_grad(params, names)
    opt, sched = make_optimizer(work, names, cfg.learning_rate, cfg.weight_decay, total, int(cfg.warmup_frac * total))
    rng = np.random.default_rng(cfg.seed)
    gen = enc.make_generator(cfg.seed + 1)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    state = TrainState(optimizer=opt)
    stopper = EarlyStopping(cfg.patience)
    best = enc.clone_params(work)
    history: list[tuple[int, float]] = []
    trace: list[dict] = []
    order = rng.permutation(len(pairs))
    cursor = 0
    for step in range(1, total + 1):
        if cursor >= len(order):
            order, cursor = rng.permutation(len(pairs)), 0
        idx = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size
        batch = DqdBatch(
            enc.collate([packed[i][0] for i in idx]),
            enc.collate([packed[i][1] for i in idx]),
            labels[idx],
        )
        loss = dqd_loss(work, config, batch, train_mode=True, generator=gen)
        if not torch.isfinite(loss):
            _dump_batch(out_dir, batch, step)
            raise TrainingDivergedError(f"non-finite fine-tune loss at step {step}: {float(loss)}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        state.step = step
        trace.append({"step": step, "loss": float(loss.detach())})

        if step % eval_every == 0 or step == total:
            snapshot = enc.clone_params(work)
            metric = float(metric_fn(snapshot))
            history.append((step, metric))
            log.info("finetune step %d dev metric %.4f", step, metric)
            if stopper.update(metric):
                best = snapshot
                state.best_metric, state.best_step, state.best_eval = metric, step, stopper.best_index
                if out_dir:
                    state.best_checkpoint_path = str(out_dir / "best.ckpt")
                    enc.save_checkpoint(best, config, state.best_checkpoint_path)
            if stopper.should_stop:
                state.stopped = True
                break

    last = enc.clone_params(work)
    if out_dir:
        enc.save_checkpoint(last, config, out_dir / "last.ckpt")
        with open(out_dir / "finetune_history.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eval_step", "dev_auc005"])
            for s, m in history:
                w.writerow([s, f"{m:.6f}"])
    return FinetuneResult(best, last, history, trace, state, list(pairs))
