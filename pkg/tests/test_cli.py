"""End-to-end command line tests, run in process."""

import io
import json
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pytest

from wordalign.cli import main
from wordalign.embedding import dctow, normalize_token


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def run_json(argv):
    code, out, err = run(argv)
    assert code == 0, err
    return json.loads(out)


SIM_FLAGS = [
    "--pages", "2", "--lines", "2", "--words-per-line", "3", "4",
    "--noise-sigma", "0", "--decoy-ratio", "1.0", "--seed", "11",
]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    pages = root / "pages"
    manifest = run_json(["simulate", "--out-dir", str(pages), *SIM_FLAGS])
    assert manifest["pages"] == ["synth-0000", "synth-0001"]
    aligned = root / "aligned"
    summary = run_json(["align", "--input-dir", str(pages), "--out-dir", str(aligned)])
    assert summary["pages"] == 2
    return {
        "pages": pages,
        "aligned": aligned,
        "proposals": pages / "synth-0000.proposals.json",
        "transcript": pages / "synth-0000.transcript.json",
        "truth": pages / "synth-0000.truth.json",
        "alignment": aligned / "synth-0000.alignment.json",
    }


def test_simulate_writes_three_files_per_page(work):
    names = sorted(p.name for p in work["pages"].iterdir())
    assert names == [
        "synth-0000.proposals.json", "synth-0000.transcript.json", "synth-0000.truth.json",
        "synth-0001.proposals.json", "synth-0001.transcript.json", "synth-0001.truth.json",
    ]


def test_simulate_same_seed_byte_identical(tmp_path, work):
    again = tmp_path / "again"
    run_json(["simulate", "--out-dir", str(again), *SIM_FLAGS])
    for p in sorted(work["pages"].iterdir()):
        assert (again / p.name).read_bytes() == p.read_bytes()


def test_simulate_different_seed_differs(tmp_path, work):
    other = tmp_path / "other"
    flags = SIM_FLAGS[:-1] + ["99"]
    run_json(["simulate", "--out-dir", str(other), *flags])
    assert (other / "synth-0000.proposals.json").read_bytes() != work["proposals"].read_bytes()


def test_align_rerun_byte_identical(tmp_path, work):
    outs = [tmp_path / "a.json", tmp_path / "b.json"]
    for out in outs:
        run_json(["align", "--proposals", str(work["proposals"]),
                  "--transcript", str(work["transcript"]), "--out", str(out)])
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert outs[0].read_bytes() == work["alignment"].read_bytes()


def test_align_jobs_parallel_matches_serial(tmp_path, work):
    par = tmp_path / "par"
    run_json(["align", "--input-dir", str(work["pages"]), "--out-dir", str(par),
              "--jobs", "2"])
    for p in sorted(work["aligned"].iterdir()):
        assert (par / p.name).read_bytes() == p.read_bytes()


def test_eval_align_single_perfect(work):
    report = run_json(["eval-align", "--alignment", str(work["alignment"]),
                       "--truth", str(work["truth"])])
    assert report["metric"] == "alignment_accuracy"
    assert report["value"] == 1.0
    assert report["num_pages"] == 1
    assert report["t_o"] == 0.5


def test_eval_align_directory(tmp_path, work):
    out = tmp_path / "report.json"
    code, stdout, _ = run(["eval-align", "--alignment-dir", str(work["aligned"]),
                           "--truth-dir", str(work["pages"]), "--out", str(out)])
    assert code == 0
    assert stdout == ""
    report = json.loads(out.read_text())
    assert report["value"] == 1.0
    assert report["num_pages"] == 2


def test_search_and_eval_map_perfect(tmp_path, work):
    results_path = tmp_path / "results.json"
    run(["search", "--proposals", str(work["proposals"]),
         "--queries-from-truth", str(work["truth"]), "--out", str(results_path)])
    doc = json.loads(results_path.read_text())
    truth = json.loads(work["truth"].read_text())
    labels = list(dict.fromkeys(e["label"] for e in truth["truth"]))
    assert [r["query"] for r in doc["results"]] == labels
    for threshold in ("0.5", "0.25"):
        report = run_json(["eval-map", "--results", str(results_path),
                           "--truth", str(work["truth"]), "--iou-threshold", threshold])
        assert report["metric"] == "mean_average_precision"
        assert report["value"] == 1.0
        assert report["num_queries"] == len(labels)


def test_search_stdout_and_dedup(work):
    doc = run_json(["search", "--proposals", str(work["proposals"]), "the", "the", "of"])
    assert [r["query"] for r in doc["results"]] == ["the", "of"]
    for r in doc["results"]:
        sims = [item["similarity"] for item in r["items"]]
        assert sims == sorted(sims, reverse=True)


def test_search_without_queries_fails(work):
    code, _, err = run(["search", "--proposals", str(work["proposals"])])
    assert code == 2
    assert "no queries" in err


def test_search_unembeddable_query_fails(work):
    code, _, err = run(["search", "--proposals", str(work["proposals"]), "&&&"])
    assert code == 2
    assert json.loads(err)["error"]["type"] == "UnembeddableTokenError"


def test_embed_matches_library(work):
    doc = run_json(["embed", "Cat", "dog"])
    assert [e["word"] for e in doc["embeddings"]] == ["Cat", "dog"]
    vec = doc["embeddings"][0]["embedding"]
    assert len(vec) == 108
    np.testing.assert_array_equal(np.array(vec), dctow(normalize_token("Cat")))


def test_render_svg(tmp_path, work):
    out = tmp_path / "page.svg"
    code, _, err = run(["render", "--alignment", str(work["alignment"]),
                        "--truth", str(work["truth"]), "--out", str(out)])
    assert code == 0, err
    svg = out.read_text()
    assert svg.startswith("<svg")
    assert "stroke-dasharray" in svg
    assert "<text" in svg


def test_render_page_mismatch_fails(tmp_path, work):
    other_truth = work["pages"] / "synth-0001.truth.json"
    code, _, err = run(["render", "--alignment", str(work["alignment"]),
                        "--truth", str(other_truth), "--out", str(tmp_path / "x.svg")])
    assert code == 2
    assert "page mismatch" in err


def test_eval_align_page_mismatch_fails(work):
    other_truth = work["pages"] / "synth-0001.truth.json"
    code, _, err = run(["eval-align", "--alignment", str(work["alignment"]),
                        "--truth", str(other_truth)])
    assert code == 2
    assert "page mismatch" in err


def test_config_file_supplies_defaults(tmp_path, work):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"epsilon": 0.25, "top_k": 7}))
    out = tmp_path / "a.json"
    run_json(["align", "--proposals", str(work["proposals"]),
              "--transcript", str(work["transcript"]), "--out", str(out),
              "--config", str(config)])
    params = json.loads(out.read_text())["params"]
    assert params["epsilon"] == 0.25
    assert params["top_k"] == 7
    assert params["tau"] == 0.5


def test_flag_overrides_config(tmp_path, work):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"epsilon": 0.25}))
    out = tmp_path / "a.json"
    run_json(["align", "--proposals", str(work["proposals"]),
              "--transcript", str(work["transcript"]), "--out", str(out),
              "--config", str(config), "--epsilon", "0.05"])
    assert json.loads(out.read_text())["params"]["epsilon"] == 0.05


def test_unknown_config_key_fails(tmp_path, work):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"epsilonn": 0.25}))
    code, _, err = run(["align", "--proposals", str(work["proposals"]),
                        "--transcript", str(work["transcript"]),
                        "--out", str(tmp_path / "a.json"), "--config", str(config)])
    assert code == 2
    assert "unknown config keys" in err


def test_config_must_be_object(tmp_path, work):
    config = tmp_path / "config.json"
    config.write_text("[1, 2]")
    code, _, err = run(["align", "--proposals", str(work["proposals"]),
                        "--transcript", str(work["transcript"]),
                        "--out", str(tmp_path / "a.json"), "--config", str(config)])
    assert code == 2
    assert "JSON object" in err


def test_missing_input_file_exit_4(tmp_path):
    code, _, err = run(["align", "--proposals", str(tmp_path / "nope.json"),
                        "--transcript", str(tmp_path / "nope2.json"),
                        "--out", str(tmp_path / "a.json")])
    assert code == 4
    assert json.loads(err)["error"]["type"] == "IOError"


def test_corrupt_json_exit_2(tmp_path, work):
    bad = tmp_path / "bad.proposals.json"
    bad.write_text("{oops")
    code, _, err = run(["align", "--proposals", str(bad),
                        "--transcript", str(work["transcript"]),
                        "--out", str(tmp_path / "a.json")])
    assert code == 2
    assert json.loads(err)["error"]["type"] == "InputValidationError"


def test_single_and_batch_flags_conflict(tmp_path, work):
    code, _, err = run(["align", "--proposals", str(work["proposals"]),
                        "--input-dir", str(work["pages"]),
                        "--out-dir", str(tmp_path)])
    assert code == 2
    assert "not both" in err


def test_batch_align_missing_transcript_fails(tmp_path, work):
    lonely = tmp_path / "lonely"
    lonely.mkdir()
    src = work["proposals"]
    (lonely / src.name).write_bytes(src.read_bytes())
    code, _, err = run(["align", "--input-dir", str(lonely), "--out-dir", str(tmp_path / "o")])
    assert code == 2
    assert "no matching" in err


def test_batch_align_empty_dir_fails(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    code, _, err = run(["align", "--input-dir", str(empty), "--out-dir", str(tmp_path / "o")])
    assert code == 2
    assert "no *.proposals.json" in err


def test_simulate_custom_vocabulary(tmp_path):
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("alpha beta\ngamma\n")
    out = tmp_path / "v"
    run_json(["simulate", "--out-dir", str(out), "--pages", "1", "--lines", "2",
              "--words-per-line", "3", "3", "--vocabulary", str(vocab)])
    doc = json.loads((out / "synth-0000.transcript.json").read_text())
    tokens = {w for line in doc["lines"] for w in line}
    assert tokens <= {"alpha", "beta", "gamma"}
