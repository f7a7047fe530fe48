import json

import pytest

from dercluster.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    spec = out / "spec.json"
    spec.write_text(json.dumps({"n_pv": 3, "n_load": 4, "n_samples": 300, "rng_seed": 1}))
    assert main(["synth", "--spec", str(spec), "--out", str(out)]) == 0
    return out


def test_synth_writes_files(dataset):
    assert (dataset / "profiles.csv").exists()
    assert (dataset / "global_radiation.csv").exists()


def test_stats(dataset, tmp_path):
    out = tmp_path / "s.json"
    rc = main(["stats", "--profiles", str(dataset / "profiles.csv"),
               "--feature", str(dataset / "global_radiation.csv"), "--hours", "9-18", "--out", str(out)])
    assert rc == 0
    d = json.loads(out.read_text())
    assert d["chosen_feature"] == "global_radiation"
    assert len(d["ders"]) == 7 and len(d["covariance"]) == 7


def test_bounds(dataset, capsys):
    rc = main(["bounds", "--profiles", str(dataset / "profiles.csv"), "--members", "pv01,load01",
               "--levels", "0.95"])
    assert rc == 0
    d = json.loads(capsys.readouterr().out)
    assert d["w"] == pytest.approx(0.9)
    assert d["members"] == ["pv01", "load01"]


def test_bounds_tighten_and_errors(dataset, capsys):
    args = ["bounds", "--profiles", str(dataset / "profiles.csv"), "--members", "pv01,pv02"]
    assert main(args + ["--tighten", "0.8"]) == 0
    assert json.loads(capsys.readouterr().out)["w"] == pytest.approx(0.8)
    assert main(args + ["--levels", "0.3"]) == 2
    assert main(["bounds", "--profiles", str(dataset / "profiles.csv"), "--members", "nope",
                 "--levels", "0.9"]) == 2
    assert "unknown DER id" in capsys.readouterr().err


@pytest.mark.parametrize("model", ["proxy", "covariance", "brute", "mc"])
def test_cluster(dataset, capsys, model):
    rc = main(["cluster", "--profiles", str(dataset / "profiles.csv"),
               "--feature", str(dataset / "global_radiation.csv"), "--model", model,
               "--clusters", "3", "--weights", "1,2", "--n-mc", "200"])
    assert rc == 0
    d = json.loads(capsys.readouterr().out)
    assert len(d["assignment"]) == 7
    assert sum(len(c) for c in d["clusters"]) == 7
    assert d["max_true_variance"] == max(d["per_cluster_variance"][:len(d["clusters"])])


def test_cluster_bad_weights(dataset):
    with pytest.raises(SystemExit):
        main(["cluster", "--profiles", str(dataset / "profiles.csv"),
              "--feature", str(dataset / "global_radiation.csv"), "--weights", "1,2,3"])


def test_benchmark_and_scale(dataset, tmp_path):
    src = {"profiles": str(dataset / "profiles.csv"), "feature": str(dataset / "global_radiation.csv")}
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({"n_pv_per_run": 2, "n_load_per_run": 3, "m_opt": 2, "n_mc": 100,
                               "source": src, "record_timing": False}))
    assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "b" / "report.json").read_bytes()
    assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "b2")]) == 0
    assert (tmp_path / "b2" / "report.json").read_bytes() == first
    scfg = tmp_path / "s.json"
    scfg.write_text(json.dumps({"sweep": [[2, 2, 2]], "repeats": 1, "source": src}))
    assert main(["scale", "--config", str(scfg), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "scalability.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"m_opt": 0}))
    assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["stats", "--profiles", str(tmp_path / "missing.csv"), "--feature", "x.csv"]) == 2
