import hashlib
import json

import pytest

from conftest import FIXTURES
from itemfm import cli
from itemfm.config import CONFIG_ENV, ConfigError, RunConfig, load_config, parse_config, with_global_seed
from itemfm.embed import load_embeddings

FIXTURE_INI = FIXTURES / "synthetic_100" / "pipeline.ini"


def test_defaults_without_file(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    assert load_config() == RunConfig()


def test_sections_are_typed():
    cfg = parse_config(
        "[train]\ndim = 8\nlearning_rate = 0.5\ninclude_context_side = yes\n"
        "[eval]\nbin_edges = 3, 9\nmax_eval_tracks_per_query = none\n"
        "[split]\nsplit_timestamp = 100\n"
    )
    assert cfg.train.dim == 8 and cfg.train.learning_rate == 0.5 and cfg.train.include_context_side is True
    assert cfg.eval.bin_edges == (3, 9) and cfg.eval.max_eval_tracks_per_query is None
    assert cfg.split.split_timestamp == 100


def test_global_seed_fills_unset_seeds():
    cfg = parse_config("[pipeline]\nseed = 7\n[train]\nseed = 3\n")
    assert cfg.train.seed == 3
    assert cfg.als.seed == 7 and cfg.ingest.rng_seed == 7 and cfg.eval.rng_seed == 7
    again = with_global_seed(cfg, 9)
    assert again.train.seed == 9 and again.pipeline.seed == 9


@pytest.mark.parametrize(
    "text",
    [
        "[bogus]\nx = 1\n",
        "[train]\nunknown_key = 1\n",
        "[train]\ndim = many\n",
        "[train]\nloss = hinge\n",
        "[pipeline]\nthreads = 0\n",
        "[train\n",
        "[eval]\nbin_edges = 9, 3\n",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_overrides_skip_none_and_validate():
    cfg = RunConfig().with_overrides({"train": {"dim": 4, "epochs": None}})
    assert cfg.train.dim == 4 and cfg.train.epochs == RunConfig().train.epochs
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"train": {"dim": "0"}})


def test_paths_resolve_against_config_dir(tmp_path, monkeypatch):
    ini = tmp_path / "run.ini"
    ini.write_text("[paths]\nevents = data/e.tsv\ngen_synthetic = users=5\n")
    cfg = load_config(ini)
    assert cfg.paths["events"] == str(tmp_path / "data" / "e.tsv")
    assert cfg.paths["gen_synthetic"] == "users=5"
    monkeypatch.setenv(CONFIG_ENV, str(ini))
    assert load_config() == cfg


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    return code


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_pipeline_on_fixture(tmp_path, capsys):
    events = FIXTURES / "synthetic_100" / "events.tsv"
    before = digest(events)
    log = tmp_path / "log.jsonl"
    code = run(["pipeline", "--config", FIXTURE_INI, "--workdir", tmp_path, "--dim", 16, "--log", log])
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("bin\tcount\tmpr\n") and "\navg\t" in out
    assert out == (tmp_path / "report.tsv").read_text()
    for name in ["interactions.tsv", "train.tsv", "test.tsv", "cooc.txt", "params.fm", "embeddings.emb", "als.emb", "als_report.tsv"]:
        assert (tmp_path / name).is_file(), name
    assert load_embeddings(tmp_path / "embeddings.emb").dim == 16
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["stage"] for r in records] == ["ingest", "split", "cooc", "train", "eval", "train-als", "eval"]
    for r in records:
        assert {"stage", "wall_seconds", "seed", "inputs", "outputs"} <= r.keys()
        assert all(v["bytes"] > 0 for v in r["outputs"].values())
    assert records[3]["seed"] == 11
    assert digest(events) == before


def test_stage_commands_and_query(tmp_path, capsys):
    events = FIXTURES / "synthetic_100" / "events.tsv"
    w = tmp_path
    assert run(["ingest", "--events", events, "--out", w / "i.tsv", "--log", w / "l"]) == 0
    assert run(["split", "--interactions", w / "i.tsv", "--train-out", w / "tr.tsv", "--test-out", w / "te.tsv", "--log", w / "l"]) == 0
    assert run(["cooc", "--interactions", w / "tr.tsv", "--out", w / "c.txt", "--log", w / "l"]) == 0
    assert run(["train", "--cooc", w / "c.txt", "--out", w / "p.fm", "--embeddings", w / "e.emb", "--dim", 8, "--epochs", 2, "--log", w / "l"]) == 0
    capsys.readouterr()
    assert run(["eval", "--embeddings", w / "e.emb", "--test", w / "te.tsv", "--train-cooc", w / "c.txt", "--out", w / "r.tsv", "--bins", "5,10", "--log", w / "l"]) == 0
    assert capsys.readouterr().out == (w / "r.tsv").read_text()
    track = load_embeddings(w / "e.emb").vocab[0]
    assert run(["query", "--embeddings", w / "e.emb", "--track", track, "--n", 3]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and all(len(line.split("\t")) == 2 for line in lines)
    assert run(["train-als", "--interactions", w / "tr.tsv", "--out", w / "a.emb", "--dim", 4, "--sweeps", 2, "--log", w / "l"]) == 0
    assert load_embeddings(w / "a.emb").dim == 4


def test_exit_codes(tmp_path, capsys):
    events = FIXTURES / "synthetic_100" / "events.tsv"
    assert run(["pipeline", "--no-such-flag"]) == cli.EXIT_USAGE
    assert run(["ingest", "--events", tmp_path / "missing.tsv", "--out", tmp_path / "o"]) == cli.EXIT_MISSING_FILE
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\ndim = zero\n")
    assert run(["ingest", "--config", bad, "--events", events, "--out", tmp_path / "o"]) == cli.EXIT_BAD_CONFIG
    code = run(["pipeline", "--config", FIXTURE_INI, "--workdir", tmp_path / "w", "--dim", 4, "--lr", 1e200, "--no-als", "--log", tmp_path / "l"])
    assert code == cli.EXIT_DIVERGED
    emb = tmp_path / "w" / "embeddings.emb"
    run(["pipeline", "--config", FIXTURE_INI, "--workdir", tmp_path / "w", "--dim", 4, "--epochs", 1, "--no-als", "--log", tmp_path / "l"])
    assert run(["query", "--embeddings", emb, "--track", "nope"]) == cli.EXIT_BAD_INPUT
    assert "itemfm: error:" in capsys.readouterr().err


def test_flags_override_config_and_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(CONFIG_ENV, str(FIXTURE_INI))
    code = run(["pipeline", "--workdir", tmp_path, "--dim", 6, "--epochs", 1, "--no-als", "--log", tmp_path / "l"])
    assert code == 0
    assert load_embeddings(tmp_path / "embeddings.emb").dim == 6
    assert not (tmp_path / "als.emb").exists()


def test_generated_corpus_pipeline(tmp_path, capsys):
    spec = "clusters=2 tracks_per_cluster=15 users=60 max_interactions=12"
    argv = ["pipeline", "--gen-synthetic", spec, "--seed", 3, "--dim", 4, "--epochs", 1, "--no-als", "--log", tmp_path / "l"]
    assert run([*argv, "--workdir", tmp_path / "a"]) == 0
    assert run([*argv, "--workdir", tmp_path / "b"]) == 0
    assert digest(tmp_path / "a" / "events.tsv") == digest(tmp_path / "b" / "events.tsv")
    assert digest(tmp_path / "a" / "embeddings.emb") == digest(tmp_path / "b" / "embeddings.emb")
