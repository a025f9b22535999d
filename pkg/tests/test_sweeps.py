from __future__ import annotations

import json
from dataclasses import replace

import pytest

from dqda import corpus as C
from dqda import encoder as enc
from dqda import sweeps as sw
from dqda import training as tr
from dqda.errors import ConfigurationError
from dqda.evaluation import make_auc_metric
from dqda.seeding import derive_seed

FT = tr.FinetuneConfig(max_steps=4, batch_size=4, eval_every=2, learning_rate=1e-3)
AD = tr.AdaptationConfig(steps=2, batch_size=4, learning_rate=1e-3)


@pytest.fixture(scope="module")
def data(split, domain, tokenizer):
    return sw.DqdData(split.train, split.dev, split.test, domain.questions, tokenizer)


@pytest.fixture(scope="module")
def starts(config):
    return {"bert": enc.init_parameters(config, 0), "adapted": enc.init_parameters(config, 1)}


@pytest.fixture(scope="module")
def docs(domain):
    return C.build_unsupervised_corpus(domain.questions)


class TestLabelFraction:
    def test_rows_and_schema(self, starts, config, data, tmp_path):
        rows = sw.label_fraction_sweep(starts, config, [0.5, 1.0], FT, data, tmp_path / "lf.csv")
        table = sw.read_sweep_csv(tmp_path / "lf.csv")
        assert len(rows) == len(table) == 4
        assert list(table[0]) == list(sw.LABEL_FRACTION_COLUMNS)
        assert all(0.0 <= float(r["dev_auc005"]) <= 1.0 for r in table)

    def test_single_fraction(self, starts, config, data, tmp_path):
        rows = sw.label_fraction_sweep(starts, config, [1.0], FT, data, tmp_path / "lf.csv")
        assert sorted(r["model"] for r in rows) == ["adapted", "bert"]

    def test_shared_seed_per_fraction(self, starts, config, data, tmp_path):
        sw.label_fraction_sweep(starts, config, [0.5], FT, data, tmp_path / "lf.csv")
        trials = [json.loads(l) for l in open(tmp_path / "lf.trials.jsonl")]
        assert len({t["seed"] for t in trials}) == 1 and len(trials) == 2

    def test_resume(self, starts, config, data, tmp_path):
        out = tmp_path / "lf.csv"
        sw.label_fraction_sweep(starts, config, [0.5], FT, data, out)
        first = out.read_text()
        rows = sw.label_fraction_sweep(starts, config, [0.5, 1.0], FT, data, out)
        assert len(rows) == 2 and out.read_text().startswith(first)
        assert len(sw.read_sweep_csv(out)) == 4
        assert sw.label_fraction_sweep(starts, config, [0.5, 1.0], FT, data, out) == []

    def test_resume_matches_full_run(self, starts, config, data, tmp_path):
        sw.label_fraction_sweep(starts, config, [0.5], FT, data, tmp_path / "a.csv")
        sw.label_fraction_sweep(starts, config, [0.5, 1.0], FT, data, tmp_path / "a.csv")
        sw.label_fraction_sweep(starts, config, [0.5, 1.0], FT, data, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_bad_header(self, starts, config, data, tmp_path):
        (tmp_path / "lf.csv").write_text("x,y\n")
        with pytest.raises(ConfigurationError):
            sw.label_fraction_sweep(starts, config, [1.0], FT, data, tmp_path / "lf.csv")

    @pytest.mark.parametrize("fractions", [[], [0.0], [1.5]])
    def test_bad_fractions(self, starts, config, data, tmp_path, fractions):
        with pytest.raises(ConfigurationError):
            sw.label_fraction_sweep(starts, config, fractions, FT, data, tmp_path / "lf.csv")

    @pytest.mark.slow
    def test_parallel_matches_serial(self, starts, config, data, tmp_path):
        sw.label_fraction_sweep(starts, config, [0.5, 1.0], FT, data, tmp_path / "s.csv", jobs=1)
        sw.label_fraction_sweep(starts, config, [0.5, 1.0], FT, data, tmp_path / "p.csv", jobs=2)
        assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()


class TestUnsupSize:
    def test_rows_and_schema(self, starts, config, data, docs, tmp_path):
        sources = {"target": docs, "merged": docs + docs}
        rows = sw.unsup_size_sweep(starts["bert"], config, sources, [0, 10], AD, FT, data, tmp_path / "us.csv")
        table = sw.read_sweep_csv(tmp_path / "us.csv")
        assert len(rows) == len(table) == 4 and list(table[0]) == list(sw.UNSUP_SIZE_COLUMNS)
        trials = [json.loads(l) for l in open(tmp_path / "us.trials.jsonl")]
        assert all({"sample_seed", "adapt_seed", "finetune_seed"} <= set(t) for t in trials)

    def test_full_size(self, starts, config, data, docs, tmp_path):
        rows = sw.unsup_size_sweep(starts["bert"], config, {"target": docs}, [len(docs)], AD, FT, data, tmp_path / "us.csv")
        assert [(r["source"], r["size"]) for r in rows] == [("target", len(docs))]

    def test_size_zero_is_base_finetune(self, starts, config, data, docs, tmp_path):
        rows = sw.unsup_size_sweep(starts["bert"], config, {"t": docs}, [0], AD, FT, data, tmp_path / "us.csv", report="dev")
        ft = replace(FT, seed=derive_seed(0, "unsup_size", "finetune"))
        metric = make_auc_metric(data.dev, data.questions, data.tokenizer, config)
        ref = tr.run_finetune(starts["bert"], config, data.train, data.questions, data.tokenizer, ft, metric)
        assert f"{rows[0]['auc005']:.6f}" == f"{ref.state.best_metric:.6f}"

    def test_oversized(self, starts, config, data, docs, tmp_path):
        with pytest.raises(ConfigurationError):
            sw.unsup_size_sweep(starts["bert"], config, {"t": docs}, [len(docs) + 1], AD, FT, data, tmp_path / "us.csv")

    def test_resume(self, starts, config, data, docs, tmp_path):
        out = tmp_path / "us.csv"
        sw.unsup_size_sweep(starts["bert"], config, {"t": docs}, [0], AD, FT, data, out)
        rows = sw.unsup_size_sweep(starts["bert"], config, {"t": docs}, [0, 10], AD, FT, data, out)
        assert [r["size"] for r in rows] == [10] and len(sw.read_sweep_csv(out)) == 2


class TestCheckpointStarts:
    def test_config_mismatch(self, config, tmp_path):
        other = replace(config, num_layers=1)
        enc.save_checkpoint(enc.init_parameters(config, 0), config, tmp_path / "a.ckpt")
        enc.save_checkpoint(enc.init_parameters(other, 0), other, tmp_path / "b.ckpt")
        with pytest.raises(ConfigurationError):
            sw.checkpoint_starts({"a": tmp_path / "a.ckpt", "b": tmp_path / "b.ckpt"})
        starts, cfg = sw.checkpoint_starts({"a": tmp_path / "a.ckpt"})
        assert cfg == config and list(starts) == ["a"]
