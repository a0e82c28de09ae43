import pytest

from gkgrec.config import ConfigError, RunConfig, default_toml, from_dict, load_config

try:
    import tomllib
except ImportError:  # 3.10
    import tomli as tomllib


def test_defaults_round_trip():
    assert from_dict(tomllib.loads(default_toml())).to_dict() == RunConfig().to_dict()


def test_defaults():
    c = RunConfig()
    t = c.train_config()
    assert (t.lr, t.gamma, t.lam, t.clip_eps, t.beta, t.n_hard) == (3e-4, 0.99, 0.95, 0.2, 0.2, 10)
    assert (c.retrieval.m, c.retrieval.c, c.reward.alpha) == (3, 5, 0.2)
    assert (c.lora.r, c.lora.alpha, c.lora.dropout) == (16, 32, 0.1)
    assert c.cost_model().costs == (0.0, 1.0, 2.0, 4.0)


def test_run_seed_and_reward_weights_flow_into_sections(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 7\n[reward]\nalpha = 0.0\neta = 0.01\n[train]\niterations = 3\n',
                 encoding="utf-8")
    c = load_config(p)
    t = c.train_config()
    assert (t.seed, t.alpha, t.eta, t.iterations) == (7, 0.0, 0.01, 3)
    assert c.synth_config().seed == 7
    d = c.to_dict()
    assert d["train"]["seed"] == 7 and d["synth"]["seed"] == 7 and d["train"]["alpha"] == 0.0


@pytest.mark.parametrize("text,match", [
    ("bogus = 1\n", "unknown top-level"),
    ("[train]\nspeed = 1\n", r"unknown key\(s\) in \[train\]: speed"),
    ("[train]\nseed = 1\n", "unknown key"),  # owned by the top-level seed
    ("[nope]\nx = 1\n", "unknown top-level"),
    ("seed = -1\n", "seed"),
    ("seed = 1.5\n", "integer"),
    ("[encoder]\ndim = 4\n", "encoder.dim"),
    ("[encoder]\nidf = 1\n", "boolean"),
    ("[reward]\ncosts = [1, 1, 2, 4]\n", "reward.costs"),
    ("[router]\nmode = \"fixed\"\n", "fixed_expert"),
    ("[train]\ngamma = 1.5\n", "gamma"),
    ("[retrieval]\nppr_restart = 0\n", "ppr_restart"),
    ("[eval]\nn_candidates = 10\n", "n_candidates"),
    ("[synth]\nmix = [1, 2]\n", "mix"),
    ("domain = \"books\"\n", "domain"),
    ("seed = \n", "c.toml"),
])
def test_rejections(tmp_path, text, match):
    p = tmp_path / "c.toml"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError, match=match):
        load_config(p)


def test_numbers_coerce_to_float():
    c = from_dict({"reward": {"alpha": 1}})
    assert isinstance(c.reward.alpha, float)


def test_data_paths(tmp_path):
    c = from_dict({"data": {"dir": str(tmp_path), "train": "/abs/train.jsonl"}})
    assert c.data.path("items") == tmp_path / "items.jsonl"
    assert str(c.data.path("train")) == "/abs/train.jsonl"
