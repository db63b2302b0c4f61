import json
import subprocess
import sys

import pytest

from layoutloop import cli
from layoutloop.layout import parse_html, serialize_html
from layoutloop.prompts import perturb_layout
from layoutloop.retrieval import iter_split


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def generated(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert run("generate", "--dataset", small_dataset, "--iterations", 3, "--out", out,
               "--render", "--parallel", 2) == cli.EXIT_OK
    return out


def load_manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_generate_outputs_match_manifest(generated):
    m = load_manifest(generated)
    assert m["counts"] == {"ok": 5, "skipped": 0, "failed": 0}
    ok = [r["id"] for r in m["samples"] if r["status"] == "ok"]
    assert sorted(p.stem for p in (generated / "layouts").glob("*.html")) == sorted(ok)
    assert sorted(p.stem for p in (generated / "history").glob("*.jsonl")) == sorted(ok)
    for sid in ok:
        assert len(list((generated / "renders" / sid).glob("iter*.png"))) == 4
    for key in ("requests", "retries", "prompt_tokens", "completion_tokens"):
        assert m["usage"][key] == sum(r["usage"][key] for r in m["samples"])
    assert m["usage"]["requests"] == 5 * 4
    assert m["config"]["run"]["iterations"] == 3
    assert len(m["dataset"]["hash"]) == 64
    lines = (generated / "metrics.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 5 + 1


def test_generate_is_idempotent(small_dataset, generated, tmp_path):
    assert run("generate", "--dataset", small_dataset, "--iterations", 3, "--out", tmp_path) == 0
    a, b = load_manifest(generated), load_manifest(tmp_path)
    for m in (a, b):
        m.pop("wall_time_s")
        m["config"]["args"].pop("out")
        m["config"]["args"].pop("render")
        m["config"]["args"].pop("parallel")
    assert a == b
    for p in (generated / "history").glob("*.jsonl"):
        assert (tmp_path / "history" / p.name).read_bytes() == p.read_bytes()


def test_generate_zero_iterations(small_dataset, tmp_path):
    assert run("generate", "--dataset", small_dataset, "--iterations", 0, "--out", tmp_path, "--limit", 2) == 0
    m = load_manifest(tmp_path)
    assert m["counts"] == {"ok": 2, "skipped": 3, "failed": 0}
    assert all(r["iterations"] == 0 for r in m["samples"] if r["status"] == "ok")


def test_generate_constrained_task(small_dataset, tmp_path):
    assert run("generate", "--dataset", small_dataset, "--iterations", 1, "--task", "c2sp",
               "--out", tmp_path) == 0
    rows = [json.loads(l) for p in (tmp_path / "history").glob("*.jsonl") for l in p.read_text().splitlines()]
    assert any(r["kind"] == "candidate" for r in rows)


def test_generate_strict_reports_failures(small_dataset, tmp_path):
    # a retry budget of one cannot get past two refusals
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("retries: 1\n")
    args = ["generate", "--dataset", small_dataset, "--iterations", 1, "--backend", "mock:malformed(k=2)",
            "--config", cfg]
    assert run(*args, "--out", tmp_path / "a") == cli.EXIT_OK
    assert run(*args, "--out", tmp_path / "b", "--strict") == cli.EXIT_FAILED
    assert load_manifest(tmp_path / "b")["counts"]["failed"] == 5


def test_generate_retry_path_completes(small_dataset, tmp_path):
    assert run("generate", "--dataset", small_dataset, "--iterations", 1, "--backend", "mock:malformed(k=2)",
               "--out", tmp_path, "--strict") == 0
    m = load_manifest(tmp_path)
    assert m["counts"]["ok"] == 5
    assert m["usage"]["requests"] == 5 * 2 * 3


def test_config_file(small_dataset, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("weights: {occ: 1.0, rea: 0.0, ove: 0.0, align: 0.0, und: 0.0}\npool_size: 2\n")
    assert run("generate", "--dataset", small_dataset, "--iterations", 1, "--limit", 1,
               "--config", cfg, "--out", tmp_path / "o") == 0
    run_cfg = load_manifest(tmp_path / "o")["config"]["run"]
    assert run_cfg["pool_size"] == 2 and run_cfg["weights"]["occ"] == 1.0
    cfg.write_text("bogus: 1\n")
    assert run("generate", "--dataset", small_dataset, "--config", cfg, "--out", tmp_path / "p") == cli.EXIT_USAGE


def test_usage_errors(tmp_path, small_dataset, capsys):
    assert run("generate", "--dataset", tmp_path / "nope", "--out", tmp_path / "o") == cli.EXIT_USAGE
    assert "error" in capsys.readouterr().err
    assert run("evaluate", "--dataset", small_dataset, "--pred", tmp_path / "nope", "--out", tmp_path) == 2
    assert run("retrieve", "--dataset", small_dataset, "--id", "zzz") == cli.EXIT_USAGE
    assert run("cluster", "--history", tmp_path / "none.jsonl") == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        run("generate")
    assert info.value.code == 2


def test_evaluate_ground_truth(small_dataset, tmp_path):
    assert run("evaluate", "--dataset", small_dataset, "--out", tmp_path) == 0
    data = json.loads((tmp_path / "metrics.json").read_text())
    assert data["aggregate"]["frechet_proxy"] == pytest.approx(0.0, abs=1e-6)
    assert len((tmp_path / "metrics.csv").read_text().strip().splitlines()) == 1 + 5 + 1


def test_evaluate_predictions(small_dataset, tmp_path):
    pred = tmp_path / "pred"
    pred.mkdir()
    samples = list(iter_split(small_dataset / "test"))
    for i, s in enumerate(samples[:4]):
        (pred / f"{s.id}.html").write_text(serialize_html(perturb_layout(s.layout, 0.1, seed=i)))
    (pred / "stranger.html").write_text("<div></div>")
    assert run("evaluate", "--dataset", small_dataset, "--pred", pred, "--out", tmp_path / "a") == 0
    data = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert data["aggregate"]["frechet_proxy"] > 0
    assert data["problems"]["missing"] == [samples[4].id]
    assert data["problems"]["unknown"] == ["stranger"]
    assert run("evaluate", "--dataset", small_dataset, "--pred", pred, "--out", tmp_path / "b",
               "--strict") == cli.EXIT_FAILED


def test_evaluate_generated(small_dataset, generated, tmp_path):
    assert run("evaluate", "--dataset", small_dataset, "--pred", generated / "layouts", "--out", tmp_path,
               "--strict") == 0


def test_retrieve(small_dataset, capsys):
    assert run("retrieve", "--dataset", small_dataset, "--query-split", "test", "--id", "te0000", "--m", 10) == 0
    hits = json.loads(capsys.readouterr().out)
    assert len(hits) == 10
    sims = [h["similarity"] for h in hits]
    assert sims == sorted(sims, reverse=True)
    capsys.readouterr()
    assert run("retrieve", "--dataset", small_dataset, "--id", "tr0000", "--m", 5) == 0
    assert "tr0000" not in [h["id"] for h in json.loads(capsys.readouterr().out)]


def test_render(small_dataset, generated, tmp_path, capsys):
    assert run("render", "--dataset", small_dataset, "--id", "te0000", "te0001", "--out", tmp_path) == 0
    assert (tmp_path / "te0000.png").is_file() and (tmp_path / "te0001.png").is_file()
    assert run("render", "--dataset", small_dataset, "--id", "te0002", "--layouts", generated / "layouts",
               "--out", tmp_path / "g") == 0
    assert run("render", "--dataset", small_dataset, "--id", "te0000", "nope", "--out", tmp_path) == 1
    assert "nope" in capsys.readouterr().err


def test_cluster(generated, capsys):
    history = generated / "history" / "te0000.jsonl"
    assert run("cluster", "--history", history) == 0
    result = json.loads(capsys.readouterr().out)
    (entry,) = result.values()
    n_candidates = sum(json.loads(l)["kind"] == "candidate" for l in history.read_text().splitlines())
    assert len(entry["labels"]) == n_candidates
    assert entry["clusters"] == len(set(entry["labels"]))
    assert run("cluster", "--history", history, "--iteration", 0) == 0
    assert len(json.loads(capsys.readouterr().out)["te0000"]["labels"]) == 5


def test_synth_and_index(tmp_path):
    assert run("synth", "--out", tmp_path / "d", "--train", 3, "--test", 2, "--size", "40x50") == 0
    assert run("index", "--dataset", tmp_path / "d", "--out", tmp_path / "i.npz") == 0
    assert (tmp_path / "i.npz").is_file()
    layout = next(iter_split(tmp_path / "d" / "test")).layout
    assert layout.dims == (40, 50)
    assert run("synth", "--out", tmp_path / "e", "--size", "big") == cli.EXIT_USAGE


def test_console_entry_point(small_dataset):
    proc = subprocess.run([sys.executable, "-m", "layoutloop.cli", "retrieve", "--dataset", str(small_dataset),
                           "--id", "tr0001", "--m", "2"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert len(json.loads(proc.stdout)) == 2


def test_written_layouts_parse(generated):
    for p in (generated / "layouts").glob("*.html"):
        parse_html(p.read_text(), (103, 150))
