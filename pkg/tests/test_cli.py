from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from knnfuse import (
    FramesFileHeader,
    load_datastore,
    read_manifest,
    write_frames,
    write_manifest,
)
from knnfuse.cli import main, parse_lambdas

from conftest import random_utterance


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture
def corpus(tmp_path):
    code = run("synth", "--out", tmp_path / "corpus", "--seed", 5,
               "--num-utts", 12, "--num-classes", 6, "--dim", 8,
               "--posterior-error-rate", "0.2", "--noise-sigma", "0.1")
    assert code == 0
    d = tmp_path / "corpus"
    return {
        "frames": d / "frames.knnf",
        "manifest": d / "manifest.jsonl",
        "vocab": d / "vocab.txt",
        "dir": d,
    }


def test_synth_writes_files(corpus):
    for key in ("frames", "manifest", "vocab"):
        assert corpus[key].exists()


def test_build_and_stats(corpus, tmp_path, capsys):
    out = tmp_path / "ds.knds"
    assert run("build", "--frames", corpus["frames"], "--vocab", corpus["vocab"],
               "--out", out) == 0
    printed = capsys.readouterr().out
    ds = load_datastore(out)
    assert f"entries: {ds.count}" in printed
    assert ds.source_tag == f"build:{corpus['frames']}"


def test_build_empty_frames_warns(tmp_path, capsys):
    frames = tmp_path / "empty.knnf"
    write_frames(frames, FramesFileHeader(dim=4, vocab=3), [])
    vocab = tmp_path / "v.txt"
    vocab.write_text("<blank>\na\nb\n")
    assert run("build", "--frames", frames, "--vocab", vocab,
               "--out", tmp_path / "ds.knds") == 0
    assert "datastore is empty" in capsys.readouterr().err


def test_build_vocab_size_mismatch_is_data_error(corpus, tmp_path, capsys):
    bad_vocab = tmp_path / "bad.txt"
    bad_vocab.write_text("<blank>\na\n")
    assert run("build", "--frames", corpus["frames"], "--vocab", bad_vocab,
               "--out", tmp_path / "ds.knds") == 2
    assert "error" in capsys.readouterr().err


def test_adapt_refuses_manifest(corpus, tmp_path, capsys):
    code = run("adapt", "--frames", corpus["frames"], "--vocab", corpus["vocab"],
               "--out", tmp_path / "ds.knds", "--manifest", corpus["manifest"])
    assert code == 1
    assert "manifest" in capsys.readouterr().err


def test_adapt_tags_and_interchangeable(corpus, tmp_path):
    a = tmp_path / "adapt.knds"
    b = tmp_path / "build.knds"
    assert run("adapt", "--frames", corpus["frames"], "--vocab", corpus["vocab"],
               "--out", a, "--skip-blank") == 0
    assert run("build", "--frames", corpus["frames"], "--vocab", corpus["vocab"],
               "--out", b, "--skip-blank") == 0
    da, db = load_datastore(a), load_datastore(b)
    assert da.source_tag == f"adapt:{corpus['frames']}"
    assert np.asarray(da.keys).tobytes() == np.asarray(db.keys).tobytes()
    np.testing.assert_array_equal(np.asarray(da.values), np.asarray(db.values))
    hyp = tmp_path / "hyp.jsonl"
    assert run("decode", "--frames", corpus["frames"], "--datastore", a,
               "--vocab", corpus["vocab"], "--out", hyp) == 0


def test_decode_lambda_zero_is_ctc_greedy(corpus, tmp_path):
    ds = tmp_path / "ds.knds"
    run("build", "--frames", corpus["frames"], "--vocab", corpus["vocab"],
        "--out", ds, "--skip-blank")
    hyp = tmp_path / "hyp.jsonl"
    assert run("decode", "--frames", corpus["frames"], "--datastore", ds,
               "--vocab", corpus["vocab"], "--out", hyp, "--lambda", 0) == 0
    # independent greedy reference
    from knnfuse import load_vocabulary, read_frames

    vocab = load_vocabulary(corpus["vocab"])
    _, utts = read_frames(corpus["frames"])
    expected_lines = []
    for utt in utts:
        ids, prev = [], None
        for row in np.asarray(utt.posteriors):
            t = int(np.argmax(row))
            if t != prev and t != 0:
                ids.append(t)
            prev = t
        expected_lines.append(json.dumps(
            {"utt_id": utt.utt_id, "text": vocab.text(ids)}, ensure_ascii=False))
    assert hyp.read_text().splitlines() == expected_lines


def test_decode_ivf_full_probe_matches_flat(corpus, tmp_path):
    ds = tmp_path / "ds.knds"
    run("build", "--frames", corpus["frames"], "--vocab", corpus["vocab"], "--out", ds)
    flat = tmp_path / "flat.jsonl"
    ivf = tmp_path / "ivf.jsonl"
    common = ["--frames", corpus["frames"], "--datastore", ds,
              "--vocab", corpus["vocab"], "--lambda", "0.8", "--k", "16"]
    assert run("decode", *common, "--out", flat, "--index", "flat") == 0
    assert run("decode", *common, "--out", ivf, "--index", "ivf",
               "--n-centroids", 7, "--nprobe", 7) == 0
    assert flat.read_bytes() == ivf.read_bytes()


def test_decode_saved_ivf_index_matches_in_memory(corpus, tmp_path):
    ds = tmp_path / "ds.knds"
    run("build", "--frames", corpus["frames"], "--vocab", corpus["vocab"], "--out", ds)
    knivf = tmp_path / "ds.knivf"
    assert run("index", "--datastore", ds, "--out", knivf,
               "--n-centroids", 6, "--seed", 3) == 0
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    common = ["--frames", corpus["frames"], "--datastore", ds,
              "--vocab", corpus["vocab"], "--lambda", "0.7", "--k", "8",
              "--index", "ivf", "--nprobe", "2"]
    assert run("decode", *common, "--out", a, "--ivf-index", knivf) == 0
    assert run("decode", *common, "--out", b, "--n-centroids", 6, "--seed", 3) == 0
    assert a.read_bytes() == b.read_bytes()


def test_decode_threads_deterministic(corpus, tmp_path):
    ds = tmp_path / "ds.knds"
    run("build", "--frames", corpus["frames"], "--vocab", corpus["vocab"], "--out", ds)
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    common = ["--frames", corpus["frames"], "--datastore", ds,
              "--vocab", corpus["vocab"], "--lambda", "0.6"]
    assert run("decode", *common, "--out", a, "--threads", 1) == 0
    assert run("decode", *common, "--out", b, "--threads", 4) == 0
    assert a.read_bytes() == b.read_bytes()


def test_decode_trace_and_stats(corpus, tmp_path):
    ds = tmp_path / "ds.knds"
    run("build", "--frames", corpus["frames"], "--vocab", corpus["vocab"],
        "--out", ds, "--skip-blank")
    hyp = tmp_path / "hyp.jsonl"
    trace = tmp_path / "trace.jsonl"
    stats = tmp_path / "stats.json"
    assert run("decode", "--frames", corpus["frames"], "--datastore", ds,
               "--vocab", corpus["vocab"], "--out", hyp, "--lambda", "0.5",
               "--skip-blank-decode", "--trace", trace, "--stats-out", stats) == 0
    counters = json.loads(stats.read_text())
    rows = [json.loads(l) for l in trace.read_text().splitlines()]
    assert len(rows) == counters["frames"]
    assert sum(r["skipped"] for r in rows) == counters["skipped_frames"]
    assert counters["queries_issued"] + counters["skipped_frames"] == counters["frames"]
    skipped_rows = [r for r in rows if r["skipped"]]
    assert all(r["knn_top1"] is None for r in skipped_rows)


def test_eval_perfect_and_substitution(tmp_path):
    ref = tmp_path / "ref.jsonl"
    write_manifest(ref, [("u1", "a" * 60), ("u2", "b" * 40)])
    hyp_same = tmp_path / "same.jsonl"
    write_manifest(hyp_same, [("u1", "a" * 60), ("u2", "b" * 40)])
    report = tmp_path / "r.json"
    assert run("eval", "--hyp", hyp_same, "--ref", ref, "--json", report) == 0
    assert json.loads(report.read_text())["rate"] == 0.0

    hyp_sub = tmp_path / "sub.jsonl"
    write_manifest(hyp_sub, [("u1", "x" + "a" * 59), ("u2", "b" * 40)])
    assert run("eval", "--hyp", hyp_sub, "--ref", ref, "--json", report) == 0
    out = json.loads(report.read_text())
    assert out["S"] == 1 and out["rate"] == pytest.approx(0.01)


def test_eval_missing_utt_counts_full_deletion(tmp_path, capsys):
    ref = tmp_path / "ref.jsonl"
    write_manifest(ref, [("u1", "abc"), ("u2", "de")])
    hyp = tmp_path / "hyp.jsonl"
    write_manifest(hyp, [("u1", "abc")])
    report = tmp_path / "r.json"
    assert run("eval", "--hyp", hyp, "--ref", ref, "--json", report) == 0
    assert "missing from hypotheses" in capsys.readouterr().err
    out = json.loads(report.read_text())
    assert out["D"] == 2 and out["ref_len"] == 5

def test_eval_word_unit(tmp_path):
    ref = tmp_path / "ref.jsonl"
    write_manifest(ref, [("u1", "the cat sat")])
    hyp = tmp_path / "hyp.jsonl"
    write_manifest(hyp, [("u1", "the hat sat")])
    report = tmp_path / "r.json"
    assert run("eval", "--hyp", hyp, "--ref", ref, "--unit", "word",
               "--json", report) == 0
    out = json.loads(report.read_text())
    assert out == {"S": 1, "D": 0, "I": 0, "C": 2, "ref_len": 3, "rate": pytest.approx(1 / 3)}


def test_sweep_csv_shape_and_endpoint(corpus, tmp_path):
    ds = tmp_path / "ds.knds"
    run("build", "--frames", corpus["frames"], "--vocab", corpus["vocab"],
        "--out", ds, "--skip-blank")
    out_csv = tmp_path / "sweep.csv"
    assert run("sweep", "--frames", corpus["frames"], "--datastore", ds,
               "--vocab", corpus["vocab"], "--manifest", corpus["manifest"],
               "--lambdas", "0:1:0.25", "--out", out_csv,
               "--skip-blank-decode") == 0
    with open(out_csv) as f:
        rows = list(csv.DictReader(f))
    assert [float(r["lambda"]) for r in rows] == [0.0, 0.25, 0.5, 0.75, 1.0]

    # the lambda=0 row must equal an eval of the lambda=0 decode
    hyp = tmp_path / "hyp0.jsonl"
    report = tmp_path / "r.json"
    run("decode", "--frames", corpus["frames"], "--datastore", ds,
        "--vocab", corpus["vocab"], "--out", hyp, "--lambda", 0,
        "--skip-blank-decode")
    run("eval", "--hyp", hyp, "--ref", corpus["manifest"], "--json", report)
    assert float(rows[0]["rate"]) == json.loads(report.read_text())["rate"]


def test_parse_lambdas():
    assert parse_lambdas("0:1:0.5") == [0.0, 0.5, 1.0]
    assert parse_lambdas("0:1:0.1") == pytest.approx(
        [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    assert parse_lambdas("0.3,0.7") == [0.3, 0.7]
    with pytest.raises(ValueError):
        parse_lambdas("0:1:0")
    with pytest.raises(ValueError):
        parse_lambdas("0:1")


def test_usage_errors_exit_one(tmp_path):
    assert run("nonsense") == 1
    assert run("decode", "--frames", "x") == 1  # missing required flags
    assert run() == 1


def test_data_errors_exit_two(tmp_path, capsys):
    bogus = tmp_path / "bogus.knnf"
    bogus.write_bytes(b"XXXX" + b"\x00" * 30)
    vocab = tmp_path / "v.txt"
    vocab.write_text("<blank>\na\n")
    assert run("build", "--frames", bogus, "--vocab", vocab,
               "--out", tmp_path / "o.knds") == 2
    assert run("build", "--frames", tmp_path / "missing.knnf", "--vocab", vocab,
               "--out", tmp_path / "o.knds") == 2


def test_help_exits_zero():
    assert run("--help") == 0


def test_index_on_empty_datastore_is_error(tmp_path, capsys):
    frames = tmp_path / "empty.knnf"
    write_frames(frames, FramesFileHeader(dim=4, vocab=3), [])
    vocab = tmp_path / "v.txt"
    vocab.write_text("<blank>\na\nb\n")
    ds = tmp_path / "ds.knds"
    run("build", "--frames", frames, "--vocab", vocab, "--out", ds)
    assert run("index", "--datastore", ds, "--out", tmp_path / "i.knivf") == 2


def test_decode_against_empty_datastore_falls_back(tmp_path, capsys, rng):
    frames = tmp_path / "f.knnf"
    utt = random_utterance(rng, "u0", 5, 4, 3)
    write_frames(frames, FramesFileHeader(dim=4, vocab=3), [utt])
    empty = tmp_path / "empty.knnf"
    write_frames(empty, FramesFileHeader(dim=4, vocab=3), [])
    vocab = tmp_path / "v.txt"
    vocab.write_text("<blank>\na\nb\n")
    ds = tmp_path / "ds.knds"
    run("build", "--frames", empty, "--vocab", vocab, "--out", ds)
    hyp = tmp_path / "hyp.jsonl"
    assert run("decode", "--frames", frames, "--datastore", ds, "--vocab", vocab,
               "--out", hyp, "--lambda", "0.9") == 0
    assert "fell back" in capsys.readouterr().err
