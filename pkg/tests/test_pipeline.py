import json
import shutil

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pramana.agreement import AgreementConfig
from pramana.errors import AdapterUnavailable, ConfigError
from pramana.evaluators import FilterConfig
from pramana.pipeline import (
    PRESETS,
    IncompatibleCheckpoint,
    PipelineConfig,
    PipelineError,
    YieldReport,
    RecordSummary,
    ablation_preset,
    load_config,
    report_from_manifest,
    resume,
    run_pipeline,
)
from pramana.synthcorpus import SynthConfig, generate
from pramana.transcribers import ReplayTranscriber, TranscriberSpec

from conftest import oracle_corpus_decisions, read_jsonl, write_jsonl


def manifest(tmp_path, n=20, domains=("news", "sports")):
    rows = [{"id": f"s{i:03d}", "audio_path": "a.wav", "offset_s": 3.0 * i, "duration_s": 2.5 + i % 3,
             "domain": domains[i % len(domains)]} for i in range(n)]
    return write_jsonl(tmp_path / "in.jsonl", rows), rows


def replay_pair(tmp_path, rows, texts_a, texts_b):
    a = write_jsonl(tmp_path / "a.jsonl", [{"id": r["id"], "text": t} for r, t in zip(rows, texts_a)])
    b = write_jsonl(tmp_path / "b.jsonl", [{"id": r["id"], "text": t} for r, t in zip(rows, texts_b)])
    return (TranscriberSpec("a", "replay", path=str(a), batch_size=4),
            TranscriberSpec("b", "replay", path=str(b), batch_size=4))


def check_conservation(rows_in, out_path, report):
    out = read_jsonl(out_path)
    assert sorted(r["id"] for r in out) == sorted(r["id"] for r in rows_in)
    for r in out:
        assert ("accepted_text" in r) != ("stage_rejected" in r)
        if "accepted_text" in r:
            assert r["accepted_text"] == r["candidates"][r["agreement"]["selected"]]["text"]
    assert report.hours_after_filter <= report.hours_after_agreement <= report.hours_input
    total_us = sum(round(r["duration_s"] * 1e6) for r in rows_in)
    assert report.input_us == total_us
    assert report.segments == len(rows_in)
    return out


class TestExamples:
    def test_identical_tables_accept_everything(self, tmp_path):
        inp, rows = manifest(tmp_path)
        texts = [f"अब {i}" for i in range(len(rows))]
        cfg = PipelineConfig(replay_pair(tmp_path, rows, texts, texts), AgreementConfig(1.0, 1), FilterConfig((), lam=0))
        report = run_pipeline(cfg, inp, tmp_path / "out.jsonl")
        out = check_conservation(rows, tmp_path / "out.jsonl", report)
        assert report.counts["accepted"] == len(rows)
        assert report.hours_after_agreement == report.hours_input == report.hours_after_filter
        assert [r["id"] for r in out] == [r["id"] for r in rows]

    def test_disjoint_tables_accept_nothing(self, tmp_path):
        inp, rows = manifest(tmp_path)
        cfg = PipelineConfig(replay_pair(tmp_path, rows, ["क"] * len(rows), ["ख"] * len(rows)), AgreementConfig(1.0, 1))
        report = run_pipeline(cfg, inp, tmp_path / "out.jsonl")
        out = check_conservation(rows, tmp_path / "out.jsonl", report)
        assert report.counts["accepted"] == 0
        assert {r["stage_rejected"] for r in out} == {"no_agreement"}
        assert report.hours_after_agreement == 0

    def test_missing_reply_is_transcription_error(self, tmp_path):
        inp, rows = manifest(tmp_path, n=6)
        texts = ["x"] * 6
        specs = replay_pair(tmp_path, rows[:5], texts, texts)
        out_path = tmp_path / "out.jsonl"
        report = run_pipeline(PipelineConfig(specs), inp, out_path)
        out = check_conservation(rows, out_path, report)
        assert out[-1]["stage_rejected"] == "transcription_error"
        assert "incomplete batch" in out[-1]["reject_detail"]
        assert report.counts["transcription_error"] == 1

    def test_missing_evaluator_input(self, tmp_path):
        inp, rows = manifest(tmp_path, n=4)
        specs = replay_pair(tmp_path, rows, ["x"] * 4, ["x"] * 4)
        conf = {"id": "c", "kind": "confidence", "rho": 0.5, "params": {"transcriber": "a"}}
        cfg = PipelineConfig(specs, filter=FilterConfig.from_dict({"evaluators": [conf], "lam": 1}))
        report = run_pipeline(cfg, inp, tmp_path / "out.jsonl")
        assert report.counts["missing_evaluator_input"] == 4
        assert report.hours_after_agreement == report.hours_input

    def test_unreadable_input(self, tmp_path):
        inp, rows = manifest(tmp_path, n=2)
        cfg = PipelineConfig(replay_pair(tmp_path, rows, ["x"] * 2, ["x"] * 2))
        with pytest.raises(PipelineError):
            run_pipeline(cfg, tmp_path / "nope.jsonl", tmp_path / "out.jsonl")


class TestCorpus:
    def test_matches_oracle(self, corpus_small, tmp_path):
        cfg = load_config(corpus_small.pipeline_config)
        report = run_pipeline(cfg, corpus_small.input, tmp_path / "out.jsonl")
        out = check_conservation(read_jsonl(corpus_small.input), tmp_path / "out.jsonl", report)
        oracle = oracle_corpus_decisions(corpus_small.root)
        for r in out:
            assert (r.get("stage_rejected"), r.get("accepted_text")) == oracle[r["id"]]

    def test_deterministic_bytes(self, corpus_small, tmp_path):
        cfg = load_config(corpus_small.pipeline_config)
        run_pipeline(cfg, corpus_small.input, tmp_path / "a.jsonl")
        run_pipeline(cfg, corpus_small.input, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_worker_count_independence(self, corpus_small, tmp_path):
        base = load_config(corpus_small.pipeline_config).to_dict()
        base["transcribers"] = [{**t, "batch_size": 5} for t in base["transcribers"]]
        sets = []
        for workers in (1, 4, 16):
            for ordered in (True, False):
                cfg = PipelineConfig.from_dict({**base, "workers": workers, "ordered_output": ordered})
                out = tmp_path / f"out{workers}{ordered}.jsonl"
                run_pipeline(cfg, corpus_small.input, out)
                lines = out.read_text(encoding="utf-8").splitlines()
                sets.append(frozenset(lines))
                if ordered:
                    assert [json.loads(x)["id"] for x in lines] == [r["id"] for r in read_jsonl(corpus_small.input)]
        assert len(set(sets)) == 1

    def test_report_from_manifest_agrees(self, corpus_small, tmp_path):
        cfg = load_config(corpus_small.pipeline_config)
        report = run_pipeline(cfg, corpus_small.input, tmp_path / "out.jsonl")
        assert report_from_manifest(tmp_path / "out.jsonl") == report


class FlakyReplay(ReplayTranscriber):
    """Replay adapter that goes away for good after ``budget`` batches."""

    def __init__(self, spec, budget):
        super().__init__(spec)
        self.budget = budget

    def transcribe_batch(self, segments):
        if self.budget <= 0:
            raise AdapterUnavailable("backend went away")
        self.budget -= 1
        return super().transcribe_batch(segments)


class TestResume:
    def setup(self, corpus, tmp_path):
        d = load_config(corpus.pipeline_config).to_dict()
        d["transcribers"] = [{**t, "batch_size": 10} for t in d["transcribers"]]
        d["retries"] = 0
        cfg = PipelineConfig.from_dict(d)
        full = tmp_path / "full.jsonl"
        run_pipeline(cfg, corpus.input, full)
        return cfg, set(full.read_text(encoding="utf-8").splitlines())

    def interrupt(self, cfg, corpus, out, budget):
        flaky = [FlakyReplay(cfg.transcribers[0], budget), ReplayTranscriber(cfg.transcribers[1])]
        with pytest.raises(PipelineError):
            run_pipeline(cfg, corpus.input, out, transcribers=flaky)

    def test_resume_after_half(self, corpus_small, tmp_path):
        cfg, expected = self.setup(corpus_small, tmp_path)
        out = tmp_path / "out.jsonl"
        self.interrupt(cfg, corpus_small, out, budget=6)  # 60 of 120 segments
        assert len(read_jsonl(out)) == 60
        report = resume(cfg, corpus_small.input, out)
        assert set(out.read_text(encoding="utf-8").splitlines()) == expected
        assert report == report_from_manifest(tmp_path / "full.jsonl")

    def test_torn_and_unconfirmed_lines_are_dropped(self, corpus_small, tmp_path):
        cfg, expected = self.setup(corpus_small, tmp_path)
        out = tmp_path / "out.jsonl"
        self.interrupt(cfg, corpus_small, out, budget=3)
        full_rows = read_jsonl(tmp_path / "full.jsonl")
        with open(out, "a", encoding="utf-8") as fh:
            # a written-but-unconfirmed row followed by a torn line
            fh.write(json.dumps({**full_rows[50], "accepted_text": "bogus"}, ensure_ascii=False) + "\n")
            fh.write('{"id": "synth-0')
        with open(f"{out}.ckpt", "a", encoding="utf-8") as fh:
            fh.write('"synth-00')
        resume(cfg, corpus_small.input, out)
        assert set(out.read_text(encoding="utf-8").splitlines()) == expected

    def test_changed_tau_is_incompatible(self, corpus_small, tmp_path):
        cfg, _ = self.setup(corpus_small, tmp_path)
        out = tmp_path / "out.jsonl"
        self.interrupt(cfg, corpus_small, out, budget=2)
        changed = PipelineConfig.from_dict({**cfg.to_dict(), "agreement": {"tau": 0.9, "delta": 1}})
        with pytest.raises(IncompatibleCheckpoint, match="incompatible checkpoint"):
            resume(changed, corpus_small.input, out)

    def test_workers_do_not_change_hash(self, corpus_small, tmp_path):
        cfg, expected = self.setup(corpus_small, tmp_path)
        out = tmp_path / "out.jsonl"
        self.interrupt(cfg, corpus_small, out, budget=4)
        more = PipelineConfig.from_dict({**cfg.to_dict(), "workers": 4, "retries": 3})
        resume(more, corpus_small.input, out)
        assert set(out.read_text(encoding="utf-8").splitlines()) == expected

    def test_resume_completed_is_noop(self, corpus_small, tmp_path):
        cfg, _ = self.setup(corpus_small, tmp_path)
        full = tmp_path / "full.jsonl"
        before = full.read_bytes()
        first = report_from_manifest(full)
        assert resume(cfg, corpus_small.input, full) == first
        assert full.read_bytes() == before

    def test_missing_checkpoint(self, corpus_small, tmp_path):
        cfg, _ = self.setup(corpus_small, tmp_path)
        with pytest.raises(IncompatibleCheckpoint):
            resume(cfg, corpus_small.input, tmp_path / "never.jsonl")


class TestConfig:
    def test_collects_all_violations(self):
        with pytest.raises(ConfigError) as ei:
            PipelineConfig.from_dict({"transcribers": [], "workers": 0, "bogus": 1})
        text = "\n".join(ei.value.violations)
        assert "bogus" in text
        with pytest.raises(ConfigError) as ei:
            PipelineConfig.from_dict({"transcribers": [{"id": "a", "kind": "http"}], "workers": 0})
        assert len(ei.value.violations) >= 2

    def test_unknown_confidence_source(self):
        d = {"transcribers": [{"id": "a", "kind": "replay", "path": "x"}],
             "filter": {"evaluators": [{"id": "c", "kind": "confidence", "rho": 0.5, "params": {"transcriber": "z"}}],
                        "lam": 1}}
        with pytest.raises(ConfigError, match="unknown transcriber"):
            PipelineConfig.from_dict(d)

    def test_roundtrip_and_relative_paths(self, corpus_small):
        cfg = load_config(corpus_small.pipeline_config)
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
        assert all(str(corpus_small.root) in t.path for t in cfg.transcribers)

    def test_hash_ignores_runtime_knobs(self, corpus_small):
        cfg = load_config(corpus_small.pipeline_config)
        d = cfg.to_dict()
        assert PipelineConfig.from_dict({**d, "workers": 8, "ordered_output": False}).config_hash() == cfg.config_hash()
        assert PipelineConfig.from_dict({**d, "agreement": {"tau": 0.5, "delta": 1}}).config_hash() != cfg.config_hash()


class TestPresets:
    def test_structure(self, corpus_small):
        base = load_config(corpus_small.pipeline_config)
        p = {name: ablation_preset(name, base) for name in PRESETS}
        ids = {name: [t.id for t in c.transcribers] for name, c in p.items()}
        assert ids == {"PN-RNNT": ["rnnt"], "PN-SONAR": ["rnnt"], "PN-No-Filter": ["rnnt", "ctc"], "PN": ["rnnt", "ctc"]}
        assert p["PN-RNNT"].agreement.delta == 0 and p["PN-RNNT"].filter.lam == 0 and not p["PN-RNNT"].filter.evaluators
        assert [e.id for e in p["PN-SONAR"].filter.evaluators] == ["sonar"] and p["PN-SONAR"].filter.lam == 1
        assert p["PN-No-Filter"].filter.evaluators == () and p["PN-No-Filter"].filter.lam == 0
        pn = p["PN"]
        assert (pn.agreement.tau, pn.agreement.delta, pn.filter.lam, pn.filter.comparison) == (1.0, 1, 2, "ge")
        assert [(e.id, e.rho) for e in pn.filter.evaluators] == [("sonar", 0.8), ("rnnt_conf", 0.7)]

    def test_missing_component(self, tmp_path):
        base = PipelineConfig((TranscriberSpec("rnnt", "replay", path="x"),))
        assert ablation_preset("PN-RNNT", base).transcribers == base.transcribers
        with pytest.raises(ConfigError, match="ctc"):
            ablation_preset("PN", base)
        with pytest.raises(ConfigError):
            ablation_preset("PN-Other", base)

    def test_pn_rnnt_accepts_all_transcribed(self, corpus_small, tmp_path):
        cfg = ablation_preset("PN-RNNT", load_config(corpus_small.pipeline_config))
        report = run_pipeline(cfg, corpus_small.input, tmp_path / "out.jsonl")
        assert report.counts["accepted"] == report.segments


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_preset_dominance(tmp_path_factory, seed):
    root = tmp_path_factory.mktemp("dom")
    corpus = generate(SynthConfig(seed=seed, n_segments=60), root / "c")
    base = load_config(corpus.pipeline_config)
    accepted = {}
    for name in ("PN", "PN-No-Filter"):
        out = root / f"{name}.jsonl"
        run_pipeline(ablation_preset(name, base), corpus.input, out)
        accepted[name] = {r["id"] for r in read_jsonl(out) if "accepted_text" in r}
    assert accepted["PN"] <= accepted["PN-No-Filter"]
    shutil.rmtree(root)


@given(st.lists(st.tuples(st.floats(0.01, 40.0), st.sampled_from(["a", "b", None]), st.booleans(),
                          st.sampled_from([None, "filtered", "no_agreement"])), max_size=30),
       st.randoms(use_true_random=False))
def test_yield_report_order_independent(items, rnd):
    summaries = [RecordSummary(f"s{i}", d, dom, passed or rej is None, rej) for i, (d, dom, passed, rej) in enumerate(items)]
    a, b = YieldReport(), YieldReport()
    for s in summaries:
        a.add(s)
    rnd.shuffle(summaries)
    for s in summaries:
        b.add(s)
    assert a == b
    assert a.hours_after_filter <= a.hours_after_agreement <= a.hours_input
