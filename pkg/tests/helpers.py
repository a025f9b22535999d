"""Independent oracles and fixture builders shared by the test modules."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import torch

from dqda import encoder as enc
from dqda import training as tr
from dqda.tokenizer import TokenSequence


# --- finite differences -------------------------------------------------------

def rel_error(a: float, n: float, floor: float = 1e-8) -> float:
    """Symmetric relative error |a - n| / (|a| + |n|)."""
    return abs(a - n) / max(abs(a) + abs(n), floor)


def central_difference(loss_fn, params, name: str, index: tuple, h: float = 1e-3, richardson: bool = True) -> float:
    """Central difference at step ``h``; with ``richardson`` the h and h/2
    estimates are combined to cancel the O(h^2) truncation term."""
    d = _central(loss_fn, params, name, index, h)
    if not richardson:
        return d
    return (4 * _central(loss_fn, params, name, index, h / 2) - d) / 3


def _central(loss_fn, params, name, index, h):
    t = params[name]
    orig = t[index].item()
    with torch.no_grad():
        t[index] = orig + h
        up = loss_fn(params).item()
        t[index] = orig - h
        down = loss_fn(params).item()
        t[index] = orig
    return (up - down) / (2 * h)


def gradient_errors(loss_fn, params, entries, h: float = 1e-3, richardson: bool = True) -> list[tuple[str, tuple, float, float, float]]:
    """(name, index, analytic, numeric, rel_err) per entry; params must be float64."""
    work = enc.require_grad(params, {n for n, _ in entries})
    loss = loss_fn(work)
    grads = enc.backward(loss, work, {n for n, _ in entries})
    frozen = {k: v.detach().clone() for k, v in work.items()}
    out = []
    for name, index in entries:
        a = grads[name][index].item()
        n = central_difference(loss_fn, frozen, name, index, h, richardson)
        out.append((name, index, a, n, rel_error(a, n)))
    return out


def random_entries(params, names, count: int, rng: np.random.Generator):
    entries = []
    for _ in range(count):
        name = names[rng.integers(len(names))]
        shape = params[name].shape
        entries.append((name, tuple(int(rng.integers(s)) for s in shape)))
    return entries


# --- ROC / AUC oracles --------------------------------------------------------

def brute_force_partial_auc(scores, labels, cap: float) -> float:
    """Threshold enumeration with exact rational integration.

    Every distinct score is a threshold and its (fp, tp) counts come from a
    direct comparison against all scores; the ROC polyline through the
    resulting points is integrated on [0, cap] segment by segment.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    P, N = int(y.sum()), int((~y).sum())
    thresholds = np.unique(s)[::-1]
    above = s[None, :] >= thresholds[:, None]
    tps = (above & y[None, :]).sum(1)
    fps = (above & ~y[None, :]).sum(1)
    cap = Fraction(cap)
    pts = [(Fraction(0), Fraction(0))]
    for fp, tp in zip(fps.tolist(), tps.tolist()):
        pts.append((Fraction(fp, N), Fraction(tp, P)))
        if pts[-1][0] > cap:
            break
    area = Fraction(0)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if x0 >= cap:
            break
        if x1 == x0:
            continue
        xe = min(x1, cap)
        ye = y0 + (y1 - y0) * (xe - x0) / (x1 - x0)
        area += (xe - x0) * (y0 + ye) / 2
    return float(area / cap)


def pairwise_auc(scores, labels) -> float:
    """Mann-Whitney statistic with ties counted as one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    pos, neg = s[y], s[~y]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (len(pos) * len(neg)))


# --- batches -----------------------------------------------------------------

def random_batch(config, vocab, batch: int, seq: int, rng: np.random.Generator, pad_from=None):
    """Random two-segment token batch; rows shorter than ``seq`` are padded."""
    seqs = []
    for i in range(batch):
        n = seq if pad_from is None else int(pad_from[i])
        body = rng.integers(len(vocab.special_ids), config.vocab_size, size=n - 3).tolist()
        cut = max(1, len(body) // 2)
        ids = [vocab.cls_id, *body[:cut], vocab.sep_id, *body[cut:], vocab.sep_id]
        segs = [0] * (cut + 2) + [1] * (len(body) - cut + 1)
        pad = seq - len(ids)
        seqs.append(TokenSequence(ids + [0] * pad, segs + [0] * pad, [1] * len(ids) + [0] * pad, len(ids)))
    return enc.collate(seqs, trim=False)


def full_loss_fn(config, vocab, rng: np.random.Generator):
    """MLM + NSP + pair-classification loss on fixed random inputs (eval mode)."""
    mlm_batch = random_batch(config, vocab, 3, 10, rng, pad_from=[10, 8, 6])
    positions = torch.tensor([[0, 2], [1, 3], [2, 4], [0, 7]])
    mlm_labels = torch.tensor(rng.integers(5, config.vocab_size, size=4))
    nsp_labels = torch.tensor([0, 1, 0])
    titles = random_batch(config, vocab, 2, 9, rng, pad_from=[9, 7])
    bodies = random_batch(config, vocab, 2, 9, rng, pad_from=[5, 9])
    pair_labels = torch.tensor([1, 0])

    def loss(params):
        out = enc.forward_encoder(params, config, mlm_batch)
        l_mlm = enc.cross_entropy(enc.mlm_logits(params, config, out, positions), mlm_labels)
        l_nsp = enc.cross_entropy(enc.nsp_logits(params, out), nsp_labels)
        rep = enc.pair_representation(params, config, titles, bodies)
        l_pair = enc.cross_entropy(enc.pair_logits(params, rep), pair_labels)
        return l_mlm + l_nsp + l_pair

    return loss


def overfit_pairs(domain, n_pairs: int = 64):
    from dqda import corpus as C

    return C.build_pairs(domain.questions, domain.links, 1, 0)[:n_pairs]


def train_accuracy(params, config, pairs, questions, tokenizer) -> float:
    pe = tr.PairEncoder(tokenizer, questions, config.max_seq_len)
    batch = tr.make_dqd_batch(pairs, questions, tokenizer, config.max_seq_len, pe)
    with torch.no_grad():
        rep = enc.pair_representation(params, config, batch.titles, batch.bodies)
        pred = enc.pair_logits(params, rep).argmax(-1)
    return float((pred == batch.labels).double().mean())


# --- CLI pipeline ---------------------------------------------------------------

TINY_MODEL_FLAGS = ["--max-seq-len", "48", "--hidden-dim", "32", "--num-layers", "2", "--num-heads", "2", "--ffn-dim", "64"]


def cli(root, *argv) -> int:
    from dqda.cli import main

    return main(["--data-root", str(root), *map(str, argv)])


def write_dump(directory, domain) -> None:
    from dqda import synthetic as syn

    directory.mkdir(parents=True, exist_ok=True)
    (directory / "Posts.xml").write_bytes(syn.posts_xml(domain))
    (directory / "PostLinks.xml").write_bytes(syn.postlinks_xml(domain))


def run_pipeline(root, seed: int = 0, sweep: bool = True) -> dict:
    """ingest -> tokenizer-train -> adapt -> finetune -> evaluate (-> sweep) on a tiny fixture."""
    from dqda import synthetic as syn

    write_dump(root / "dumps" / "alpha", syn.populate(syn.make_domain("alpha", 0), 30, 30, 0))
    steps = [
        ["--seed", seed, "ingest", "--dump", "dumps/alpha", "--out", "data", "--negatives-per-positive", 5,
         "--dev-positives", 5, "--test-positives", 5],
        ["tokenizer-train", "--corpus", "data/unsup.jsonl", "--out", "vocab.txt", "--vocab-size", 300],
        ["--seed", seed, "adapt", "--init", "--corpus", "data/unsup.jsonl", "--vocab", "vocab.txt", "--out", "adapt",
         "--steps", 4, "--batch-size", 4, "--lr", 1e-3, *TINY_MODEL_FLAGS],
        ["--seed", seed, "finetune", "--checkpoint", "adapt/adapt_last.ckpt", "--vocab", "vocab.txt",
         "--questions", "data/questions.jsonl", "--train", "data/train.jsonl", "--dev", "data/dev.jsonl",
         "--out", "ft", "--max-steps", 6, "--batch-size", 4, "--eval-every", 3, "--lr", 1e-3],
        ["--seed", seed, "evaluate", "--checkpoint", "ft/best.ckpt", "--vocab", "vocab.txt",
         "--questions", "data/questions.jsonl", "--pairs", "data/test.jsonl", "--out", "report.json"],
    ]
    if sweep:
        steps.append(
            ["--seed", seed, "sweep", "label-fraction", "--vocab", "vocab.txt", "--questions", "data/questions.jsonl",
             "--train", "data/train.jsonl", "--dev", "data/dev.jsonl", "--test", "data/test.jsonl",
             "--start", "bert=adapt/adapt_last.ckpt", "--fractions", "0.5,1.0", "--max-steps", 4,
             "--batch-size", 4, "--eval-every", 2, "--lr", 1e-3, "--out", "sweep.csv"]
        )
    for argv in steps:
        status = cli(root, *argv)
        if status:
            raise RuntimeError(f"step {argv} exited with {status}")
    return {"report": root / "report.json", "sweep": root / "sweep.csv", "root": root}


# --- acceptance reporting --------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    """Store a criterion outcome for the end-of-session summary, then assert it."""
    ACCEPTANCE[number] = (bool(passed), title, detail)
    assert passed, f"criterion {number} ({title}) failed: {detail}"
