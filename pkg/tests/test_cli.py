import csv
import json

import numpy as np
import pytest

from apar.cli import RunConfig, load_config, main
from apar.evaluation import DEFAULT_DEGREES, DEFAULT_FRACTIONS, DEFAULT_LAMBDAS
from apar.ingest import parse_reviews
from apar.model import load_model

FAST = ["--set", "d=4", "--set", "max_iters=40", "--set", "seeds=[0, 1]"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def common(fixture_path, tmp_path):
    return ["--dataset", fixture_path, "--out", tmp_path / "out", "--quiet"]


def test_ingest_summary(capsys, common, tmp_path):
    code, out, _ = run(capsys, *common, "ingest")
    assert code == 0
    lines = dict(line.split(None, 1) for line in out.splitlines())
    assert lines["users"] == "6" and lines["items"] == "5" and lines["ratings"] == "8"
    assert lines["density"] == f"{8 / 30:.4f}"
    assert lines["dsw"] == "0.3333"
    dump = parse_reviews(tmp_path / "out" / "dataset.jsonl")
    assert dump.records == parse_reviews(common[1]).records
    assert (tmp_path / "out" / "folds_k5.txt").read_text().count("fold") == 5


def test_missing_dataset(capsys, tmp_path):
    missing = tmp_path / "nope.jsonl"
    code, _, err = run(capsys, "--dataset", missing, "--out", tmp_path, "ingest")
    assert code == 1 and str(missing) in err


def test_parse_error_exit(capsys, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"reviewerID": "u", "asin": "v", "overall": 3}\n{oops\n')
    code, _, err = run(capsys, "--dataset", bad, "--out", tmp_path, "ingest")
    assert code == 1 and "line 2" in err


def test_traits(capsys, tmp_path):
    # 100 tokens: 10 social, 5 human, 2 seeing, 83 neutral
    words = ["talk"] * 10 + ["baby"] * 5 + ["saw"] * 2 + ["plot"] * 83
    data = tmp_path / "d.jsonl"
    data.write_text("\n".join(json.dumps(r) for r in [
        {"reviewerID": "c", "asin": "v1", "overall": 4, "reviewText": " ".join(words)},
        {"reviewerID": "silent", "asin": "v2", "overall": 2, "reviewText": ""},
    ]) + "\n")
    code, out, _ = run(capsys, "--dataset", data, "--out", tmp_path / "o", "traits")
    assert code == 0 and "untyped   1" in out
    rows = {r["user_id"]: r for r in csv.DictReader(open(tmp_path / "o" / "profiles.csv"))}
    assert float(rows["c"]["C"]) == pytest.approx(0.03201, abs=1e-12)
    assert rows["silent"]["untyped"] == "1"
    first = (tmp_path / "o" / "profiles.csv").read_bytes()
    run(capsys, "--dataset", data, "--out", tmp_path / "o", "traits")
    assert (tmp_path / "o" / "profiles.csv").read_bytes() == first


def test_bad_lexicon_line(capsys, common, tmp_path):
    lex = tmp_path / "lex.txt"
    lex.write_text("%category SP\nta*lk\n")
    code, _, err = run(capsys, *common, "--lexicon", lex, "traits")
    assert code == 1 and "line 2" in err


def test_train_and_reload(capsys, common, tmp_path, fixture_path):
    code, out, _ = run(capsys, *common, "train")
    assert code == 0
    ds = parse_reviews(fixture_path)
    model = load_model(tmp_path / "out" / "model.apar", fingerprint=ds.fingerprint)
    assert model.hyperparams.d == 100
    trace = [float(r["objective"]) for r in
             csv.DictReader(open(tmp_path / "out" / "objective_trace.csv"))]
    assert np.all(np.diff(trace) <= 1e-9)
    assert (tmp_path / "out" / "knowledge.csv").exists()


def test_recommend(capsys, common):
    assert run(capsys, *common, "--set", "d=3", "train")[0] == 0
    code, out, _ = run(capsys, *common, "recommend", "u1", "-n", "99")
    assert code == 0
    items = [line.split("\t")[0] for line in out.splitlines()]
    assert sorted(items) == ["v3", "v4", "v5"]
    scores = [float(line.split("\t")[1]) for line in out.splitlines()]
    assert scores == sorted(scores, reverse=True)
    code, _, err = run(capsys, *common, "recommend", "nobody")
    assert code == 1 and "nobody" in err


def test_recommend_refuses_other_dataset(capsys, common, tmp_path, fixture_path):
    assert run(capsys, *common, "--set", "d=2", "train")[0] == 0
    other = tmp_path / "other.jsonl"
    other.write_text(fixture_path.read_text().replace('"overall": 4', '"overall": 3', 1))
    code, _, err = run(capsys, "--dataset", other, "--out", tmp_path / "out", "recommend", "u1")
    assert code == 1 and "trained on dataset" in err


def test_evaluate_sweep_dsw(capsys, tmp_path):
    from apar.synthetic import planted_corpus
    ds = planted_corpus(n_clusters=2, users_per_cluster=10, n_shared_items=20,
                        ratings_per_user=8, seed=0)[0]
    data = tmp_path / "p.jsonl"
    ds.dump(data)
    base = ["--dataset", data, "--out", tmp_path / "o", "--quiet", *FAST]
    assert run(capsys, *base, "--set", "fractions=[0.8]", "evaluate")[0] == 0
    assert run(capsys, *base, "--set", "lambdas=[0.0, 0.5]", "sweep")[0] == 0
    assert run(capsys, *base, "--set", "degrees=[0.2]", "--set", 'methods=["APAR"]', "dsw")[0] == 0
    for stem in ("benchmark", "lambda_sweep", "dsw"):
        rows = list(csv.DictReader(open(tmp_path / "o" / f"{stem}.csv")))
        assert rows and all(r["error"] == "" for r in rows)
        assert (tmp_path / "o" / f"{stem}.txt").read_text().strip()


def test_config_file(tmp_path, fixture_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'dataset = "{fixture_path}"\nlambda = 0.3\nd = 8\nseeds = [4]\nout = "res"\n')
    rc = load_config(cfg)
    assert rc.lam == 0.3 and rc.d == 8 and rc.seeds == [4]
    assert rc.out == str(tmp_path / "res")
    cfg.write_text("lamda = 0.3\n")
    with pytest.raises(ValueError, match="lamda"):
        load_config(cfg)
    cfg.write_text('d = "big"\n')
    with pytest.raises(ValueError):
        load_config(cfg)


def test_unknown_key_exit(capsys, common):
    code, _, err = run(capsys, *common, "--set", "alpha3=1", "ingest")
    assert code == 1 and "alpha3" in err


def test_flag_beats_config(capsys, tmp_path, fixture_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'dataset = "{fixture_path}"\nout = "a"\nseeds = [1, 2]\n')
    code, _, _ = run(capsys, "--config", cfg, "--out", tmp_path / "b", "--seed", "7", "ingest")
    assert code == 0 and (tmp_path / "b" / "dataset.jsonl").exists()
    assert not (tmp_path / "a").exists()


def test_default_settings():
    rc = RunConfig()
    assert (rc.d, rc.alpha1, rc.alpha2, rc.lam, rc.beta) == (100, 0.1, 0.1, 0.1, 0.5)
    assert tuple(rc.lambdas) == DEFAULT_LAMBDAS == (0.01, 0.1, 0.3, 0.5, 0.7, 0.9)
    assert tuple(rc.degrees) == DEFAULT_DEGREES == (0.2, 0.4, 0.6, 0.8)
    assert tuple(rc.fractions) == DEFAULT_FRACTIONS == (0.6, 0.7, 0.8, 0.9)


def test_numeric_failure_exit(capsys, common, monkeypatch):
    from apar import cli
    from apar.model import NumericalError

    def boom(*a, **k):
        raise NumericalError("non-finite loss term", term="loss", iteration=3)

    monkeypatch.setattr(cli, "fit_apar", boom)
    code, _, err = run(capsys, *common, "train")
    assert code == 2 and "loss" in err


def test_reruns_are_byte_identical(capsys, common, tmp_path):
    outputs = []
    for k in range(3):
        args = list(common)
        args[3] = tmp_path / f"run{k}"
        for cmd in ("ingest", "traits", "train"):
            assert run(capsys, *args, "--set", "d=3", cmd)[0] == 0
        outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / f"run{k}").iterdir())})
    assert outputs[0] == outputs[1] == outputs[2]
    assert {"dataset.jsonl", "profiles.csv", "model.apar", "knowledge.csv"} <= set(outputs[0])
