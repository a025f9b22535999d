"""Label-size and unlabeled-size sweeps with resumable CSV output.

Each trial is independent, so trials may run in worker processes. Rows are
appended in submission order as trials finish, which keeps the CSV
byte-identical between serial and parallel runs and lets an interrupted
sweep resume by skipping keys already present.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import encoder as enc
from .corpus import Question, QuestionId, QuestionPair, UnsupervisedDoc, sample_unsupervised
from .encoder import ModelConfig, Params
from .errors import ConfigurationError
from .evaluation import ScoringModel, auc_at, make_auc_metric, roc_curve, score_pairs
from .seeding import derive_seed, set_deterministic
from .tokenizer import Tokenizer
from .training import AdaptationConfig, FinetuneConfig, run_adaptation, run_finetune, tokenize_corpus

log = logging.getLogger(__name__)

LABEL_FRACTION_COLUMNS = ("fraction", "model", "dev_auc005", "test_auc005")
UNSUP_SIZE_COLUMNS = ("source", "size", "auc005")
NO_ADAPTATION = 0


@dataclass
class DqdData:
    """Pairs and question store shared by every trial of a sweep."""

    train: list[QuestionPair]
    dev: list[QuestionPair]
    test: list[QuestionPair]
    questions: Mapping[QuestionId, Question]
    tokenizer: Tokenizer


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _completed(path: Path, columns: Sequence[str], n_key: int) -> set[tuple[str, ...]]:
    if not path.exists() or path.stat().st_size == 0:
        return set()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != tuple(columns):
        raise ConfigurationError(f"{path} has header {rows[0]}, expected {list(columns)}")
    return {tuple(r[:n_key]) for r in rows[1:] if len(r) == len(columns)}


def _open_table(path: Path, columns: Sequence[str]):
    fresh = not path.exists() or path.stat().st_size == 0
    fh = open(path, "a", newline="")
    w = csv.writer(fh, lineterminator="\n")
    if fresh:
        w.writerow(columns)
        fh.flush()
    return fh, w


def _log_trial(path: Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _test_auc(params: Params, config: ModelConfig, data: DqdData, fpr_cap: float) -> float:
    model = ScoringModel(params, config, data.tokenizer)
    return auc_at(roc_curve(score_pairs(model, data.test, data.questions)), fpr_cap)


def _finetune_trial(args) -> tuple[float, float, dict]:
    params, config, data, ft, fpr_cap, deterministic = args
    if deterministic:
        set_deterministic()
    metric = make_auc_metric(data.dev, data.questions, data.tokenizer, config, fpr_cap)
    res = run_finetune(params, config, data.train, data.questions, data.tokenizer, ft, metric)
    info = {"best_step": res.state.best_step, "n_train_pairs": len(res.train_pairs)}
    return res.state.best_metric, _test_auc(res.best_params, config, data, fpr_cap), info


def _run_all(fn, jobs_args: list, jobs: int):
    if jobs <= 1 or len(jobs_args) <= 1:
        yield from map(fn, jobs_args)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(fn, jobs_args)


def label_fraction_sweep(
    starts: Mapping[str, Params],
    config: ModelConfig,
    fractions: Sequence[float],
    template: FinetuneConfig,
    data: DqdData,
    out_csv,
    seed: int = 0,
    jobs: int = 1,
    fpr_cap: float = 0.05,
    deterministic: bool = True,
) -> list[dict]:
    """One fine-tune per (fraction, start checkpoint); both starts share a seed per fraction."""
    if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
        raise ConfigurationError("fractions must lie in (0, 1]")
    out_csv = Path(out_csv)
    done = _completed(out_csv, LABEL_FRACTION_COLUMNS, 2)
    todo, args = [], []
    for f in fractions:
        ft = replace(template, label_fraction=f, seed=derive_seed(seed, "label_fraction", repr(float(f))))
        for name, params in starts.items():
            key = (repr(float(f)), name)
            if key in done:
                continue
            todo.append((key, ft.seed))
            args.append((params, config, data, ft, fpr_cap, deterministic))
    fh, w = _open_table(out_csv, LABEL_FRACTION_COLUMNS)
    rows = []
    try:
        for ((frac, name), trial_seed), (dev, test, info) in zip(todo, _run_all(_finetune_trial, args, jobs)):
            w.writerow([frac, name, _fmt(dev), _fmt(test)])
            fh.flush()
            _log_trial(out_csv.with_suffix(".trials.jsonl"), {"fraction": frac, "model": name, "seed": trial_seed, **info})
            rows.append({"fraction": float(frac), "model": name, "dev_auc005": dev, "test_auc005": test})
    finally:
        fh.close()
    return rows


def _unsup_trial(args) -> tuple[float, float, dict]:
    base, config, docs, adapt_cfg, ft, data, fpr_cap, deterministic = args
    if deterministic:
        set_deterministic()
    params = base
    if docs is not None:
        corpus = tokenize_corpus(docs, data.tokenizer)
        params = run_adaptation(base, config, corpus, data.tokenizer.vocab, adapt_cfg).params
    return _finetune_trial((params, config, data, ft, fpr_cap, False))


def unsup_size_sweep(
    base: Params,
    config: ModelConfig,
    sources: Mapping[str, Sequence[UnsupervisedDoc]],
    sizes: Sequence[int],
    adapt_template: AdaptationConfig,
    finetune: FinetuneConfig,
    data: DqdData,
    out_csv,
    seed: int = 0,
    jobs: int = 1,
    fpr_cap: float = 0.05,
    report: str = "test",
    deterministic: bool = True,
) -> list[dict]:
    """Sample, adapt, fine-tune and evaluate for every (source, size).

    Size 0 means the base checkpoint is fine-tuned without adaptation.
    ``report`` picks whether the ``auc005`` column holds the test metric or
    the early-stopping dev metric.
    """
    if report not in ("test", "dev"):
        raise ConfigurationError("report must be 'test' or 'dev'")
    for name, docs in sources.items():
        for n in sizes:
            if n < 0 or n > len(docs):
                raise ConfigurationError(f"size {n} exceeds source {name!r} ({len(docs)} documents)")
    out_csv = Path(out_csv)
    done = _completed(out_csv, UNSUP_SIZE_COLUMNS, 2)
    ft = replace(finetune, seed=derive_seed(seed, "unsup_size", "finetune"))
    todo, args = [], []
    for name, docs in sources.items():
        for n in sizes:
            key = (name, str(int(n)))
            if key in done:
                continue
            sample_seed = derive_seed(seed, "unsup_size", name, int(n), "sample")
            adapt_cfg = replace(adapt_template, seed=derive_seed(seed, "unsup_size", name, int(n), "adapt"))
            sample = sample_unsupervised(docs, n, sample_seed) if n != NO_ADAPTATION else None
            todo.append((key, {"sample_seed": sample_seed, "adapt_seed": adapt_cfg.seed, "finetune_seed": ft.seed}))
            args.append((base, config, sample, adapt_cfg, ft, data, fpr_cap, deterministic))
    fh, w = _open_table(out_csv, UNSUP_SIZE_COLUMNS)
    rows = []
    try:
        for ((name, n), seeds), (dev, test, info) in zip(todo, _run_all(_unsup_trial, args, jobs)):
            value = test if report == "test" else dev
            w.writerow([name, n, _fmt(value)])
            fh.flush()
            _log_trial(
                out_csv.with_suffix(".trials.jsonl"),
                {"source": name, "size": int(n), "dev_auc005": dev, "test_auc005": test, **seeds, **info},
            )
            rows.append({"source": name, "size": int(n), "auc005": value})
    finally:
        fh.close()
    return rows


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def checkpoint_starts(paths: Mapping[str, str]) -> tuple[dict[str, Params], ModelConfig]:
    """Load named start checkpoints that must share one model config."""
    starts, config = {}, None
    for name, path in paths.items():
        params, cfg = enc.load_checkpoint(path)
        if config is not None and cfg != config:
            raise ConfigurationError(f"checkpoint {path} has a different model config")
        starts[name], config = params, cfg
    if config is None:
        raise ConfigurationError("no start checkpoints given")
    return starts, config
