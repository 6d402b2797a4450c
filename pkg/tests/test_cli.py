import json

import pytest

from weakon.cli import main


@pytest.fixture
def config(tmp_path):
    doc = {
        "seed": 11,
        "systems": {
            "lin12": {"builtin": "linear", "matrix": [[-1, 0], [0, -2]]},
            "spin": {"builtin": "linear", "matrix": [[-1, 0], [0, 0.5]]},
            "decay": {"equations": ["dx0 = -x0"], "box": [[-1, 1]]},
        },
        "metrics": {
            "wobble": {"kind": "storage", "gamma": "0.1*sin(t)", "bound": 0.1},
            "scaled": {"kind": "block_scaling", "blocks": [[1, 1.0], [1, 2.0]]},
        },
        "samplers": {"coarse": {"kind": "grid", "points": 11},
                     "rand": {"kind": "random", "count": 50}},
        "solvers": {"short": {"horizon": 5.0, "step": 0.01}},
        "combine": {
            "par": {"kind": "parallel", "a": "pendulum", "b": "pendulum", "alpha": 0.5},
            "fb": {"kind": "feedback", "a": "lin12", "b": "lin12",
                   "G": [[0.5, 0], [0, 0.5]], "gain": 1.0},
            "hier": {"kind": "hierarchical", "a": "pendulum", "b": "decay",
                     "G": [[1.0], [1.0]]},
        },
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_certify_pendulum(capsys):
    code, rep, _ = run(capsys, "certify", "pendulum", "identity", "--points", "41")
    assert code == 0
    assert rep["command"] == "certify" and rep["holds"] is True
    assert rep["alpha"] == pytest.approx(0.5)


def test_certify_failure_exit_code(capsys):
    code, rep, _ = run(capsys, "certify", "vanderpol", "--points", "41")
    assert code == 2
    assert rep["holds"] is False


def test_certify_from_config(capsys, config):
    code, rep, _ = run(capsys, "certify", "lin12", "--k", "1", "--sampler", "coarse",
                       "--config", config)
    assert code == 0
    assert rep["alpha"] == pytest.approx(1.0)
    code, _, _ = run(capsys, "certify", "spin", "--k", "1", "--config", config)
    assert code == 2


def test_certify_with_storage(capsys, config):
    code, rep, _ = run(capsys, "certify", "pendulum", "wobble", "--points", "21",
                       "--time-window", "0", "6.283185307179586", "--config", config)
    assert code == 0
    assert rep["alpha"] == pytest.approx(0.3, abs=1e-6)


def test_operational_errors(capsys, config, tmp_path):
    assert main(["certify", "nosuch"]) == 1
    assert main(["certify", "pendulum", "nosuch", "--config", config]) == 1
    assert main(["certify", "pendulum", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["certify", "pendulum", "--config", str(bad)]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_simulate_writes_trajectory(capsys, tmp_path):
    out = tmp_path / "sim"
    code, rep, _ = run(capsys, "simulate", "pendulum", "--x0", "0.1", "0", "--T", "100",
                       "--out", str(out))
    assert code == 0
    assert rep["trajectory"]["terminal"] == "converged-to-equilibrium"
    assert json.loads((out / "report.json").read_text()) == rep
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x0,x1"
    assert len(lines) == 10002


def test_simulate_outside_domain(capsys):
    code, rep, err = run(capsys, "simulate", "pendulum", "--x0", "100", "0")
    assert code == 1 and rep is None
    assert "outside" in err


def test_simulate_census(capsys, config, tmp_path):
    code, rep, _ = run(capsys, "simulate", "lin12", "--census", "10", "--T", "30",
                       "--config", config, "--out", str(tmp_path))
    assert code == 0
    assert rep["census"]["fraction_converged"] == 1.0
    assert len((tmp_path / "census.csv").read_text().splitlines()) == 11


def test_volumes(capsys):
    code, rep, _ = run(capsys, "volumes", "pendulum", "--x0", "1", "0.5", "--T", "30",
                       "--points", "21")
    assert code == 0
    assert rep["volumes"]["fitted_rate"] == pytest.approx(-0.5, abs=1e-4)
    assert rep["volumes"]["bound_satisfied"] is True


def test_lyapunov(capsys, config):
    code, rep, _ = run(capsys, "lyapunov", "lin12", "--x0", "1", "1", "--T", "50",
                       "--transient", "5", "--config", config)
    assert code == 0
    assert rep["lyapunov"]["exponents"] == pytest.approx([-1.0, -2.0], abs=1e-3)


def test_combine_parallel_and_feedback(capsys, config):
    code, rep, _ = run(capsys, "combine", "par", "--certify", "--points", "11",
                       "--config", config)
    assert code == 0 and rep["certificate"]["holds"]
    code, rep, _ = run(capsys, "combine", "fb", "--certify", "--points", "5",
                       "--config", config)
    assert code == 0
    assert rep["certificate"]["holds"] and "hypothesis" in rep


def test_combine_hierarchical(capsys, config):
    code, rep, _ = run(capsys, "combine", "hier", "--certify", "--points", "11",
                       "--config", config)
    assert code == 0
    res = rep["epsilon_search"]
    assert res["found"] and 0 < res["epsilon"] <= 1


def test_combine_describe_only(capsys, config):
    code, rep, _ = run(capsys, "combine", "par", "--config", config)
    assert code == 0 and "composite" in rep


def test_report(capsys):
    code, rep, _ = run(capsys, "report", "pendulum", "--points", "21")
    assert code == 0
    assert rep["dimension_bound"]["k_star"] == 2


def test_reports_are_byte_identical(capsys, config, tmp_path):
    args = ["simulate", "lin12", "--census", "5", "--T", "5", "--config", config]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    capsys.readouterr()
    for name in ("report.json", "census.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
