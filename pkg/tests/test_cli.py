import json

import pytest

from srheat.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_flag_report(capsys):
    code, out, _ = run(capsys, "flag", "--corpus", "martinet")
    assert code == 0
    rep = json.loads(out)
    assert rep["growth_vector"] == [2, 2, 3] and rep["Q"] == 5 and rep["weights"] == [1, 1, 3]


def test_flag_at_other_point(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"point": [1, 0]}))
    code, out, _ = run(capsys, "flag", "--corpus", "grushin_k1", "--config", str(cfg))
    assert code == 0 and json.loads(out)["growth_vector"] == [2]


def test_nilpotentize(capsys):
    code, out, _ = run(capsys, "nilpotentize", "--corpus", "heisenberg_pert")
    rep = json.loads(out)
    assert code == 0 and rep["divergence_free"] and rep["chart"]["orders_ok"]
    assert rep["nilpotent"]["hat_fields_text"][1] == "(1)*d/dx2 + (1/2*x1)*d/dx3"


def test_model_file(capsys, tmp_path):
    code, out, _ = run(capsys, "corpus", "--show", "grushin_k1")
    path = tmp_path / "m.json"
    path.write_text(out)
    code, out, _ = run(capsys, "flag", "--model", str(path))
    assert code == 0 and json.loads(out)["Q"] == 3


@pytest.mark.parametrize("argv", [
    ["flag"],
    ["flag", "--corpus", "heisenberg", "--model", "x.json"],
    ["flag", "--corpus", "nope"],
    ["flag", "--model", "/nonexistent.json"],
    ["verify", "--corpus", "heisenberg"],
    ["verify", "--corpus", "heisenberg", "--check", "bogus"],
    ["verify", "--corpus", "heisenberg", "--check", "coercivity", "--tolerance-scale", "0"],
    ["simulate", "--corpus", "euclidean1", "--seed", "-1"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_bad_config_exit_2(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("[1, 2")
    assert run(capsys, "flag", "--corpus", "heisenberg", "--config", str(cfg))[0] == 2


def test_numerical_failure_exit_3(capsys, tmp_path):
    # forward Euler at dt far above the stability bound
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"simulate": {"method": "fd", "t": 0.3, "dt_ratio": 10, "scheme": "euler"}}))
    code, _, err = run(capsys, "simulate", "--corpus", "euclidean1", "--config", str(cfg))
    assert code == 3 and "numerical" in err


def test_verify_pass_and_fail_codes(capsys, tmp_path):
    code, out, _ = run(capsys, "verify", "--corpus", "grushin_pert", "--check", "damping,coercivity")
    assert code == 0 and json.loads(out)["passed"]
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"settings": {"damping": {"expected": 0.5}}}))
    code, out, _ = run(capsys, "verify", "--corpus", "grushin_pert", "--check", "damping", "--config", str(cfg))
    assert code == 1 and not json.loads(out)["passed"]
    # loosening every tolerance by 4x turns the 0.3 miss into a pass
    code, _, _ = run(capsys, "verify", "--corpus", "grushin_pert", "--check", "damping", "--config", str(cfg),
                     "--tolerance-scale", "4")
    assert code == 0


def test_simulate_outputs_are_deterministic(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"simulate": {"t": 0.25, "n_paths": 20000, "targets": [[0.0], [0.3]]}}))
    dirs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code, _, _ = run(capsys, "simulate", "--corpus", "euclidean1", "--config", str(cfg), "--seed", "42",
                         "--out", str(d))
        assert code == 0
        dirs.append(d)
    for name in ("report.json", "kernel.csv", "kernel.gp"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    man = json.loads((dirs[0] / "manifest.json").read_text())
    assert man["seed"] == 42 and "timestamp" in man and len(man["model_sha256"]) == 64
    # every default is echoed
    assert man["config"]["simulate"]["dt_ratio"] == 500 and man["config"]["simulate"]["n_batches"] == 20
    assert "timestamp" not in (dirs[0] / "report.json").read_text()


def test_corpus_listing(capsys):
    code, out, _ = run(capsys, "corpus")
    names = [m["name"] for m in json.loads(out)["models"]]
    assert code == 0 and "martinet" in names
