import json

import pytest

from gkgrec.cli import EXIT_DATA, EXIT_OK, EXIT_REMOTE, EXIT_USAGE, main

CONFIG = """
seed = 2
out_dir = "{root}/run"
[data]
dir = "{root}/data"
[encoder]
dim = 64
[synth]
n_train = 200
n_eval = 60
catalog_items = 40
related_pool = 60
star_fanout = 12
[train]
iterations = 2
buffer_size = 64
batch_size = 32
holdout_size = 40
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(CONFIG.format(root=tmp_path), encoding="utf-8")
    return p


def run(*argv):
    return main(["--threads", "1", *map(str, argv)])


def test_full_command_sequence(cfg, tmp_path, capsys):
    assert run("--config", cfg, "synth") == EXIT_OK
    err = capsys.readouterr().err
    assert "# seed = 2" in err and '"out_dir"' in err
    assert run("--config", cfg, "build-index") == EXIT_OK
    assert (tmp_path / "run/index/triples.gkgx").exists()
    assert (tmp_path / "run/index/kg/triples.tsv").exists()

    q = tmp_path / "q.jsonl"
    q.write_text('{"items": [0, 1, 2]}\n{"query": "sequel"}\nplain text line\n', encoding="utf-8")
    out = tmp_path / "hits.jsonl"
    assert run("--config", cfg, "retrieve", "--expert", "3", "--hops", "2", "--query-file", q,
               "--out", out) == EXIT_OK
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 3 and all(r["expert"] == 3 and r["elapsed_ms"] >= 0 for r in rows)
    assert rows[0]["knowledge"]["kind"] == "subgraph" and "aligned" in rows[0]

    assert run("--config", cfg, "train") == EXIT_OK
    metrics = (tmp_path / "run/metrics.csv").read_text()
    assert metrics.startswith("iteration,") and len(metrics.splitlines()) == 3
    ckpt = tmp_path / "run/model.mmpo"

    report = tmp_path / "out/report.csv"
    assert run("--config", cfg, "eval", "--checkpoint", ckpt, "--out", report) == EXIT_OK
    assert "accuracy," in report.read_text()
    assert (tmp_path / "out/report_experts.csv").read_text().startswith("expert,fraction")
    assert (tmp_path / "out/report_experts_plot.csv").read_text().startswith("label,percent")
    assert run("--config", cfg, "eval", "--checkpoint", ckpt, "--mode", "cold-start",
               "--out", tmp_path / "cs.csv") == EXIT_OK

    stats = tmp_path / "rs.csv"
    assert run("--config", cfg, "route-stats", "--checkpoint", ckpt, "--out", stats) == EXIT_OK
    fr = [float(line.split(",")[1]) for line in stats.read_text().splitlines()[1:]]
    assert len(fr) == 4 and abs(sum(fr) - 1) < 1e-5

    assert run("--config", cfg, "retrieve", "--checkpoint", ckpt, "--query-file", q) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert all(json.loads(line)["expert"] in (1, 2, 3, 4) for line in lines[-3:])


def test_synth_is_idempotent(cfg, tmp_path):
    run("--config", cfg, "synth", "--out", tmp_path / "a")
    run("--config", cfg, "synth", "--out", tmp_path / "b")
    for name in ("triples.tsv", "train.jsonl", "eval.jsonl", "entities.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override(cfg, tmp_path, capsys):
    run("--config", cfg, "--seed", "9", "synth", "--out", tmp_path / "s")
    assert "# seed = 9" in capsys.readouterr().err


def test_usage_errors(cfg, tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["eval"]) == EXIT_USAGE  # --checkpoint is required
    assert main(["--threads", "0", "synth"]) == EXIT_USAGE
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nwat = 1\n", encoding="utf-8")
    assert run("--config", bad, "synth") == EXIT_USAGE
    assert "wat" in capsys.readouterr().err
    assert run("--config", cfg, "retrieve", "--expert", "2", "--budget-m", "0",
               "--query-file", "x") == EXIT_USAGE


def test_data_errors(cfg, tmp_path):
    assert run("--config", cfg, "build-index") == EXIT_DATA  # no data yet
    run("--config", cfg, "synth")
    (tmp_path / "data/triples.tsv").write_text("0\t0\t999999\n", encoding="utf-8")
    assert run("--config", cfg, "build-index") == EXIT_DATA
    run("--config", cfg, "synth")
    junk = tmp_path / "junk.mmpo"
    junk.write_bytes(b"not a checkpoint")
    assert run("--config", cfg, "eval", "--checkpoint", junk) == EXIT_DATA
    q = tmp_path / "q.jsonl"
    q.write_text('{"items": [123456789]}\n', encoding="utf-8")
    assert run("--config", cfg, "retrieve", "--expert", "1", "--query-file", q) == EXIT_DATA


def test_remote_errors(tmp_path, monkeypatch):
    monkeypatch.delenv("GKG_EMBED_URL", raising=False)
    cfg = tmp_path / "r.toml"
    cfg.write_text(CONFIG.format(root=tmp_path) + '\n', encoding="utf-8")
    run("--config", cfg, "synth")
    remote = tmp_path / "remote.toml"
    remote.write_text(CONFIG.format(root=tmp_path).replace("dim = 64", 'kind = "remote"'),
                      encoding="utf-8")
    assert run("--config", remote, "build-index") == EXIT_REMOTE
