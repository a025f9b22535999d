"""``dqda`` command-line entry point.

Every subcommand resolves its configuration as CLI flag > ``--config`` JSON
section > built-in default, records the effective values, seeds and
content hashes in the experiment manifest, and appends a run record to the
manifest's ``runs.jsonl`` whatever the outcome. Relative paths resolve
against ``--data-root`` (default ``$DQDA_DATA_ROOT`` or the working dir).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import corpus as C
from . import encoder as enc
from . import evaluation as ev
from . import sweeps
from . import training as tr
from .errors import CheckpointError, ConfigurationError, DQDAError
from .manifest import ExperimentManifest, RunRecord, append_run, hash_paths, now
from .seeding import derive_seed, set_deterministic
from .tokenizer import Tokenizer, train_vocab

log = logging.getLogger("dqda")

DATA_ROOT_ENV = "DQDA_DATA_ROOT"
POSTS_FILE = "Posts.xml"
LINKS_FILE = "PostLinks.xml"

INGEST_DEFAULTS = {
    "negatives_per_positive": 100,
    "train_negatives_per_positive": 1,
    "dev_positives": 1000,
    "test_positives": 1000,
    "max_malformed": C.DEFAULT_MAX_MALFORMED,
}
TOKENIZER_DEFAULTS = {"vocab_size": 8000, "min_frequency": 2}


class CommandError(DQDAError):
    """A precondition of a command was not met."""


# --- config plumbing ---------------------------------------------------------

def _resolve(defaults: dict, file_cfg: dict, flags: dict) -> dict:
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    out = dict(defaults)
    out.update(file_cfg)
    out.update({k: v for k, v in flags.items() if v is not None and k in defaults})
    return out


def _dataclass_defaults(cls) -> dict:
    inst = cls() if cls is not enc.ModelConfig else None
    if inst is None:
        return {f.name: f.default for f in fields(cls) if f.name != "vocab_size"}
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def _section(args, name: str) -> dict:
    if not args.config:
        return {}
    data = json.loads(_path(args, args.config).read_text())
    return dict(data.get(name, {}))


def _path(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(args.data_root) / p


def _require(path: Path) -> Path:
    if not path.is_file():
        raise CommandError(f"required file not found: {path}")
    return path


def _load_questions(args, paths) -> dict:
    store: dict = {}
    for p in paths:
        store.update(C.load_questions(_require(_path(args, p))))
    return store


def _parse_qid(text: str):
    domain, _, pid = text.rpartition(":")
    if not domain:
        raise CommandError(f"question id must look like DOMAIN:POST_ID, got {text!r}")
    return (domain, int(pid) if pid.isdigit() else pid)


def _named_paths(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise CommandError(f"expected NAME=PATH, got {item!r}")
        out[name] = path
    return out


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


# --- commands ----------------------------------------------------------------

def cmd_ingest(args, manifest: ExperimentManifest) -> list[Path]:
    cfg = _resolve(INGEST_DEFAULTS, _section(args, "ingest"), vars(args))
    out = _path(args, args.out)
    questions: dict = {}
    links = []
    inputs = []
    skipped: dict[str, dict] = {}
    for i, dump in enumerate(args.dump):
        d = _path(args, dump)
        domain = args.domain[i] if args.domain and i < len(args.domain) else d.name
        posts_path, links_path = d / POSTS_FILE, d / LINKS_FILE
        _require(posts_path)
        _require(links_path)
        posts = C.parse_posts_xml(posts_path, domain, cfg["max_malformed"])
        plinks = C.parse_postlinks_xml(links_path, domain, cfg["max_malformed"])
        questions.update(C.questions_from_posts(posts))
        links.extend(plinks)
        skipped[domain] = {"posts": dict(posts.skipped), "links": dict(plinks.skipped)}
        inputs += [posts_path, links_path]
    seed = derive_seed(args.seed, "ingest")
    pairs = C.build_pairs(questions, links, cfg["negatives_per_positive"], seed)
    split = C.split_dataset(
        pairs, cfg["dev_positives"], cfg["test_positives"], seed, cfg["train_negatives_per_positive"]
    )
    docs = C.build_unsupervised_corpus(questions)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "questions": out / "questions.jsonl",
        "train": out / "train.jsonl",
        "dev": out / "dev.jsonl",
        "test": out / "test.jsonl",
        "unsup": out / "unsup.jsonl",
        "report": out / "ingest_report.json",
    }
    C.save_questions(files["questions"], questions)
    for name in ("train", "dev", "test"):
        C.save_pairs(files[name], getattr(split, name))
    C.save_docs(files["unsup"], docs)
    counts = {
        "questions": len(questions),
        "duplicate_links": sum(l.link_kind == "duplicate" for l in links),
        "positives": {n: sum(p.is_duplicate for p in getattr(split, n)) for n in ("train", "dev", "test")},
        "pairs": {n: len(getattr(split, n)) for n in ("train", "dev", "test")},
        "skipped": skipped,
    }
    files["report"].write_text(json.dumps(counts, indent=2, sort_keys=True) + "\n")
    domains = sorted(skipped)
    manifest.seed = args.seed
    manifest.target_domain = manifest.target_domain or domains[0]
    manifest.record_stage("ingest", cfg, seed, inputs, files.values(), counts=counts)
    print(json.dumps(counts, sort_keys=True))
    return list(files.values())


def cmd_tokenizer_train(args, manifest) -> list[Path]:
    cfg = _resolve(TOKENIZER_DEFAULTS, _section(args, "tokenizer"), vars(args))
    paths = [_require(_path(args, p)) for p in args.corpus]
    texts = [d.text for p in paths for d in C.load_docs(p)]
    vocab = train_vocab(texts, cfg["vocab_size"], cfg["min_frequency"])
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    if vocab.undersized:
        log.warning("vocabulary stopped at %d entries (requested %d)", len(vocab), cfg["vocab_size"])
    manifest.record_stage("tokenizer", cfg, None, paths, [out], size=len(vocab), undersized=vocab.undersized)
    print(f"vocab size {len(vocab)}")
    return [out]


def _model_config(args, vocab_size: int) -> enc.ModelConfig:
    defaults = _dataclass_defaults(enc.ModelConfig)
    cfg = _resolve(defaults, _section(args, "model"), vars(args))
    return enc.ModelConfig(vocab_size=vocab_size, **cfg)


def _load_start(args, tokenizer: Tokenizer):
    ckpt = _require(_path(args, args.checkpoint))
    params, config = enc.load_checkpoint(ckpt)
    if config.vocab_size != len(tokenizer):
        raise ConfigurationError(
            f"checkpoint vocab_size {config.vocab_size} does not match tokenizer ({len(tokenizer)})"
        )
    return params, config, ckpt


def cmd_adapt(args, manifest) -> list[Path]:
    vocab_path = _require(_path(args, args.vocab))
    tokenizer = Tokenizer.load(vocab_path)
    inputs = [vocab_path]
    if args.init:
        config = _model_config(args, len(tokenizer))
        params = enc.init_parameters(config, derive_seed(args.seed, "init"))
    else:
        if not args.checkpoint:
            raise CommandError("give --checkpoint or --init")
        params, config, ckpt = _load_start(args, tokenizer)
        inputs.append(ckpt)

    by_domain: dict[str, list] = {}
    for p in args.corpus:
        path = _require(_path(args, p))
        inputs.append(path)
        for d in C.load_docs(path):
            by_domain.setdefault(d.domain, []).append(d)
    docs = C.merge_domains(list(by_domain.items()), exclude=args.exclude_domain or ())
    if args.sample:
        docs = C.sample_unsupervised(docs, args.sample, derive_seed(args.seed, "adapt", "sample"))
    present = sorted({d.domain for d in docs})

    defaults = _dataclass_defaults(tr.AdaptationConfig)
    defaults.pop("masking")
    flags = {**vars(args), "nsp_enabled": False if args.no_nsp else None}
    cfg = _resolve(defaults, _section(args, "adapt"), flags)
    cfg["seed"] = derive_seed(args.seed, "adapt")
    acfg = tr.AdaptationConfig(**cfg)
    corpus = tr.tokenize_corpus(docs, tokenizer)
    out = _path(args, args.out)
    res = tr.run_adaptation(params, config, corpus, tokenizer.vocab, acfg, out)
    outputs = [Path(res.checkpoint_path), out / "adapt_trace.csv"]
    manifest.source_domains = present
    manifest.record_stage(
        "adapt",
        {**cfg, "model": asdict(config), "init": bool(args.init), "exclude_domain": list(args.exclude_domain or [])},
        cfg["seed"],
        inputs,
        outputs,
        domains=present,
        n_docs=len(docs),
        nsp_enabled=acfg.nsp_enabled,
    )
    print(f"adapted checkpoint {res.checkpoint_path}")
    return outputs


def cmd_finetune(args, manifest) -> list[Path]:
    vocab_path = _require(_path(args, args.vocab))
    tokenizer = Tokenizer.load(vocab_path)
    params, config, ckpt = _load_start(args, tokenizer)
    questions = _load_questions(args, args.questions)
    train_path, dev_path = _require(_path(args, args.train)), _require(_path(args, args.dev))
    train, dev = C.load_pairs(train_path), C.load_pairs(dev_path)

    defaults = _dataclass_defaults(tr.FinetuneConfig)
    flags = {**vars(args), "mode": "frozen_encoder" if args.frozen else None}
    cfg = _resolve(defaults, _section(args, "finetune"), flags)
    cfg["seed"] = derive_seed(args.seed, "finetune")
    fcfg = tr.FinetuneConfig(**cfg)
    before = enc.checksum(params, enc.encoder_names(params))
    metric = ev.make_auc_metric(dev, questions, tokenizer, config, args.fpr_cap)
    out = _path(args, args.out)
    res = tr.run_finetune(params, config, train, questions, tokenizer, fcfg, metric, out)
    extra = {
        "n_train_pairs": len(res.train_pairs),
        "n_train_positives": sum(p.is_duplicate for p in res.train_pairs),
        "best_step": res.state.best_step,
        "best_dev_auc": res.state.best_metric,
    }
    if fcfg.frozen:
        after = enc.checksum(res.best_params, enc.encoder_names(res.best_params))
        print(f"encoder checksum before {before}")
        print(f"encoder checksum after  {after}")
        extra["encoder_checksum"] = after
        if after != before:
            raise CommandError("frozen fine-tuning changed encoder tensors")
    outputs = [out / "best.ckpt", out / "last.ckpt", out / "finetune_history.csv"]
    manifest.record_stage("finetune", cfg, cfg["seed"], [vocab_path, ckpt, train_path, dev_path], outputs, **extra)
    print(f"best dev AUC@{args.fpr_cap:g} {res.state.best_metric:.6f} at step {res.state.best_step}")
    return outputs


def cmd_evaluate(args, manifest) -> list[Path]:
    vocab_path = _require(_path(args, args.vocab))
    ckpt = _require(_path(args, args.checkpoint))
    model = ev.ScoringModel.from_files(ckpt, vocab_path)
    questions = _load_questions(args, args.questions)
    pairs_path = _require(_path(args, args.pairs))
    pairs = C.load_pairs(pairs_path)
    scored = ev.score_pairs(model, pairs, questions, args.batch_size)
    n_pos = sum(p.is_duplicate for p in pairs)
    echo = {
        "seed": args.seed,
        "negatives_per_positive": (len(pairs) - n_pos) / n_pos if n_pos else None,
    }
    report = ev.evaluate_scores(scored, args.fpr_cap, echo)
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    outputs = [out]
    if args.curve:
        curve_path = _path(args, args.curve)
        ev.write_curve_csv(curve_path, report.curve)
        outputs.append(curve_path)
    manifest.record_stage(
        "evaluate", {"fpr_cap": args.fpr_cap}, args.seed, [vocab_path, ckpt, pairs_path], outputs, auc=report.auc005
    )
    print(f"AUC@{args.fpr_cap:g} {report.auc005:.6f} ({report.n_pos} positives, {report.n_neg} negatives)")
    return outputs


def cmd_analyze(args, manifest) -> list[Path]:
    inputs = []
    if args.mode == "datasets":
        named = _named_paths(args.questions)
        if len(named) < 2:
            raise CommandError("datasets mode needs at least two NAME=questions.jsonl arguments")
        corpora = {}
        for name, p in named.items():
            path = _require(_path(args, p))
            inputs.append(path)
            corpora[name] = [q.title for q in C.load_questions(path).values()]
        report = ev.vocab_jaccard_datasets(corpora, args.ngram)
    else:
        if not args.pairs:
            raise CommandError("pairs mode needs --pairs")
        questions = _load_questions(args, args.questions)
        pairs_path = _require(_path(args, args.pairs))
        inputs.append(pairs_path)
        report = ev.vocab_jaccard_pairs(C.load_pairs(pairs_path), questions, args.ngram)
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    manifest.record_stage(f"analyze_{args.mode}", {"ngram": args.ngram}, None, inputs, [out])
    print(out.read_text(), end="")
    return [out]


def _finetune_template(args) -> tr.FinetuneConfig:
    defaults = _dataclass_defaults(tr.FinetuneConfig)
    cfg = _resolve(defaults, _section(args, "finetune"), vars(args))
    return tr.FinetuneConfig(**cfg)


def cmd_sweep(args, manifest) -> list[Path]:
    vocab_path = _require(_path(args, args.vocab))
    tokenizer = Tokenizer.load(vocab_path)
    questions = _load_questions(args, args.questions)
    split_paths = [_require(_path(args, p)) for p in (args.train, args.dev, args.test)]
    data = sweeps.DqdData(*(C.load_pairs(p) for p in split_paths), questions, tokenizer)
    template = _finetune_template(args)
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    inputs = [vocab_path, *split_paths]
    if args.kind == "label-fraction":
        named = _named_paths(args.start)
        if not named:
            raise CommandError("label-fraction sweep needs --start NAME=CHECKPOINT")
        starts, config = sweeps.checkpoint_starts({n: str(_require(_path(args, p))) for n, p in named.items()})
        if config.vocab_size != len(tokenizer):
            raise ConfigurationError("start checkpoints do not match the tokenizer")
        inputs += [_path(args, p) for p in named.values()]
        sweeps.label_fraction_sweep(
            starts, config, _floats(args.fractions), template, data, out, args.seed, args.jobs, args.fpr_cap
        )
        cfg = {"kind": args.kind, "fractions": _floats(args.fractions), "finetune": asdict(template)}
    else:
        if not args.base:
            raise CommandError("unsup-size sweep needs --base CHECKPOINT")
        base_path = _require(_path(args, args.base))
        base, config = enc.load_checkpoint(base_path)
        inputs.append(base_path)
        sources = {}
        for name, spec in _named_paths(args.source).items():
            docs_by_domain: dict[str, list] = {}
            for p in spec.split(","):
                path = _require(_path(args, p))
                inputs.append(path)
                for d in C.load_docs(path):
                    docs_by_domain.setdefault(d.domain, []).append(d)
            sources[name] = C.merge_domains(list(docs_by_domain.items()))
        if not sources:
            raise CommandError("unsup-size sweep needs --source NAME=DOCS[,DOCS...]")
        adefaults = _dataclass_defaults(tr.AdaptationConfig)
        adefaults.pop("masking")
        acfg = _resolve(adefaults, _section(args, "adapt"), {"steps": args.adapt_steps, "learning_rate": args.adapt_lr})
        sweeps.unsup_size_sweep(
            base, config, sources, _ints(args.sizes), tr.AdaptationConfig(**acfg), template, data, out,
            args.seed, args.jobs, args.fpr_cap, args.report,
        )
        cfg = {"kind": args.kind, "sizes": _ints(args.sizes), "adapt": acfg, "finetune": asdict(template)}
    outputs = [out, out.with_suffix(".trials.jsonl")]
    manifest.record_stage(f"sweep_{args.kind}", cfg, args.seed, inputs, outputs)
    print(out.read_text(), end="")
    return outputs


def cmd_rank(args, manifest) -> list[Path]:
    model = ev.ScoringModel.from_files(_require(_path(args, args.checkpoint)), _require(_path(args, args.vocab)))
    questions = _load_questions(args, args.questions)
    query = _parse_qid(args.query)
    if query not in questions:
        raise CommandError(f"unknown query id {args.query}")
    for qid, score in ev.rank_candidates(model, query, questions, args.top_k):
        print(f"{qid[0]}:{qid[1]}\t{score:.6f}\t{questions[qid].title}")
    return []


# --- parser -------------------------------------------------------------------

def _add_model_flags(p):
    g = p.add_argument_group("model (with --init)")
    g.add_argument("--max-seq-len", type=int)
    g.add_argument("--hidden-dim", type=int)
    g.add_argument("--num-layers", type=int)
    g.add_argument("--num-heads", type=int)
    g.add_argument("--ffn-dim", type=int)
    g.add_argument("--dropout-rate", type=float)


def _add_finetune_flags(p):
    g = p.add_argument_group("fine-tuning")
    g.add_argument("--label-fraction", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--max-steps", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--learning-rate", "--lr", type=float, dest="learning_rate")
    g.add_argument("--eval-every", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--fpr-cap", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dqda", description="Domain-adaptive duplicate question detection.")
    parser.add_argument("--data-root", default=os.environ.get(DATA_ROOT_ENV, "."), help=f"base for relative paths (${DATA_ROOT_ENV})")
    parser.add_argument("--manifest", default="manifest.json", help="experiment manifest path")
    parser.add_argument("--config", help="JSON file with per-stage sections")
    parser.add_argument("--seed", type=int, default=0, help="experiment seed")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse dumps into pairs, splits and an unlabeled corpus")
    p.add_argument("--dump", action="append", required=True, help=f"directory holding {POSTS_FILE} and {LINKS_FILE}")
    p.add_argument("--domain", action="append", help="domain name per --dump (default: directory name)")
    p.add_argument("--out", required=True)
    p.add_argument("--negatives-per-positive", type=int)
    p.add_argument("--train-negatives-per-positive", type=int)
    p.add_argument("--dev-positives", type=int)
    p.add_argument("--test-positives", type=int)
    p.add_argument("--max-malformed", type=float)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tokenizer-train", help="learn a subword vocabulary")
    p.add_argument("--corpus", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--min-frequency", type=int)
    p.set_defaults(func=cmd_tokenizer_train)

    p = sub.add_parser("adapt", help="masked-LM / next-sentence adaptation")
    p.add_argument("--corpus", action="append", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--init", action="store_true", help="start from fresh seeded parameters")
    p.add_argument("--no-nsp", action="store_true")
    p.add_argument("--exclude-domain", action="append")
    p.add_argument("--sample", type=int, help="adapt on a random sample of this many documents")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", "--lr", type=float, dest="learning_rate")
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--log-every", type=int)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("finetune", help="train the pair classifier with early stopping")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--frozen", action="store_true", help="train only the pair-classifier head")
    p.add_argument("--out", required=True)
    _add_finetune_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score pairs and report AUC@cap")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--fpr-cap", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="optional ROC curve CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="title vocabulary Jaccard analyses")
    p.add_argument("--mode", choices=("datasets", "pairs"), required=True)
    p.add_argument("--ngram", type=int, choices=(1, 2), default=1)
    p.add_argument("--questions", action="append", required=True, help="NAME=PATH in datasets mode")
    p.add_argument("--pairs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="label-fraction or unlabeled-size sweep")
    p.add_argument("kind", choices=("label-fraction", "unsup-size"))
    p.add_argument("--vocab", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--start", action="append", help="NAME=CHECKPOINT (label-fraction)")
    p.add_argument("--fractions", default="0.01,0.1,1.0")
    p.add_argument("--base", help="unadapted start checkpoint (unsup-size)")
    p.add_argument("--source", action="append", help="NAME=DOCS[,DOCS...] (unsup-size)")
    p.add_argument("--sizes", default="0,1000")
    p.add_argument("--adapt-steps", type=int)
    p.add_argument("--adapt-lr", type=float)
    p.add_argument("--report", choices=("test", "dev"), default="test")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_finetune_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rank", help="rank stored questions against a query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--query", required=True, help="DOMAIN:POST_ID")
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_rank)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    set_deterministic(args.threads)
    manifest_path = _path(args, args.manifest)
    start = now()
    status, message, outputs = 0, "", []
    try:
        manifest = ExperimentManifest.load(manifest_path)
        outputs = args.func(args, manifest)
        manifest.save(manifest_path)
    except CheckpointError as e:
        status, message = 3, f"{type(e).__name__}: {e}"
    except (DQDAError, FileNotFoundError, ValueError) as e:
        status, message = 2, f"{type(e).__name__}: {e}"
    if message:
        print(f"error: {message}", file=sys.stderr)
    append_run(
        manifest_path.with_name("runs.jsonl"),
        RunRecord(args.command, argv, start, now(), status, hash_paths(outputs), message),
    )
    return status


if __name__ == "__main__":
    sys.exit(main())
