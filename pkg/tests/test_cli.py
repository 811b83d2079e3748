import json
import math

import numpy as np
import pytest

from blockop import cli


MINIMAL = """
[grid]
d = 1
n = 64
[model]
name = "beris_edwards_delta"
[[tasks]]
name = "angle"
"""

BE_THREE = """
seed = 3
[grid]
d = 1
n = 16
[model]
name = "beris_edwards_delta"
[[tasks]]
name = "factorization-check"
[[tasks]]
name = "angle"
rays = 16
[[tasks]]
name = "hinf"
"""

SINGULAR = """
[grid]
d = 1
n = 8
[custom]
A = "[[-1]]"
B = "[[0]]"
C = "[[0]]"
D = "[[-1]]"
[[tasks]]
name = "sweep"
rays = 2
radii = 25
refine = false
"""


def _write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_validate_minimal(tmp_path):
    sc = cli.validate_config(_write(tmp_path, MINIMAL))
    assert (sc.d, sc.n, sc.model) == (1, 64, "beris_edwards_delta")
    assert [t.name for t in sc.tasks] == ["angle"]
    assert sc.tasks[0].params["rays"] == 64


def test_unknown_task_names_line(tmp_path):
    with pytest.raises(cli.ConfigError) as info:
        cli.validate_config(_write(tmp_path, MINIMAL + '[[tasks]]\nname = "teleport"\n'))
    assert any("teleport" in d and "line 10" in d for d in info.value.diagnostics)


def test_bad_symbol_reports_column_and_line(tmp_path):
    with pytest.raises(cli.ConfigError) as info:
        cli.validate_config(_write(tmp_path, SINGULAR.replace('B = "[[0]]"', 'B = "[[0 +]]"')))
    msg = info.value.diagnostics[0]
    assert "custom.B" in msg and "column" in msg and "line 7" in msg


def test_parameter_range_and_unknown_key(tmp_path):
    text = MINIMAL + "rays = 3\nspeed = 1\n"
    with pytest.raises(cli.ConfigError) as info:
        cli.validate_config(_write(tmp_path, text))
    joined = "\n".join(info.value.diagnostics)
    assert "rays" in joined and "speed" in joined


def test_model_params_checked(tmp_path):
    text = MINIMAL.replace('name = "beris_edwards_delta"', 'name = "damped_wave"\n[model.params]\norder = 3')
    with pytest.raises(cli.ConfigError) as info:
        cli.validate_config(_write(tmp_path, text))
    assert "order" in info.value.diagnostics[0]


def test_toml_syntax_error(tmp_path):
    assert cli.main(["validate", str(_write(tmp_path, "x = [\n"))]) == cli.EXIT_CONFIG


def test_run_three_tasks(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", str(_write(tmp_path, BE_THREE)), "--out", str(out)])
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["schema_version"] == cli.SCHEMA_VERSION
    assert [r["task"] for r in rep["tasks"]] == ["factorization-check", "angle", "hinf"]
    assert all(r["status"] == "ok" for r in rep["tasks"])
    assert rep["tasks"][0]["result"]["max_residual"] <= 1e-10


def test_singular_sweep_is_data(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(_write(tmp_path, SINGULAR)), "--out", str(out)]) == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["tasks"][0]["result"]["singular_cells"] >= 1
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "theta,radius,re_lambda,im_lambda,norm,singular"
    assert any(r.endswith(",inf,1") for r in rows[1:])


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["run", str(_write(tmp_path, BE_THREE)), "--out", str(blocker / "sub")]) == cli.EXIT_TASK


def test_missing_config_file(tmp_path):
    assert cli.main(["validate", str(tmp_path / "absent.toml")]) == cli.EXIT_CONFIG


def test_determinism(tmp_path):
    p = _write(tmp_path, BE_THREE)
    cli.main(["run", str(p), "--out", str(tmp_path / "a")])
    cli.main(["run", str(p), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert (tmp_path / "a" / "angle.csv").read_bytes() == (tmp_path / "b" / "angle.csv").read_bytes()


def test_seed_override_changes_hash(tmp_path):
    p = _write(tmp_path, BE_THREE)
    cli.main(["run", str(p), "--out", str(tmp_path / "a")])
    cli.main(["run", str(p), "--out", str(tmp_path / "b"), "--seed", "4"])
    ha = json.loads((tmp_path / "a" / "report.json").read_text())["scenario_hash"]
    hb = json.loads((tmp_path / "b" / "report.json").read_text())["scenario_hash"]
    assert ha != hb


def test_task_isolation(tmp_path):
    base = """
[grid]
d = 1
n = 16
[model]
name = "damped_wave"
[model.params]
eps = 0.0
"""
    check = '[[tasks]]\nname = "factorization-check"\n'
    failing = '[[tasks]]\nname = "maxreg"\n'
    cli.main(["run", str(_write(tmp_path, base + failing + check, "a.toml")), "--out", str(tmp_path / "a")])
    code = cli.main(["run", str(_write(tmp_path, base + check, "b.toml")), "--out", str(tmp_path / "b")])
    assert code == cli.EXIT_OK
    ra = json.loads((tmp_path / "a" / "report.json").read_text())["tasks"]
    rb = json.loads((tmp_path / "b" / "report.json").read_text())["tasks"]
    assert ra[0]["status"] == "error" and "AngleTooLarge" in ra[0]["error"]
    assert ra[1] == rb[0]


def test_failed_task_exit_code(tmp_path):
    text = '[grid]\nd = 1\nn = 16\n[model]\nname = "damped_wave"\n[model.params]\neps = 0.0\n' \
           '[[tasks]]\nname = "maxreg"\n'
    assert cli.main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")]) == cli.EXIT_TASK


def test_plot_tables(tmp_path):
    text = BE_THREE + '[[tasks]]\nname = "lizorkin"\n[[tasks]]\nname = "sweep"\nrays = 2\nradii = 4\n'
    out = tmp_path / "out"
    cli.main(["run", str(_write(tmp_path, text)), "--out", str(out)])
    assert cli.main(["plot", str(out / "report.json"), "--task", "lizorkin"]) == cli.EXIT_OK
    lines = (out / "lizorkin_plot.csv").read_text().splitlines()
    assert lines[0] == "n,bound" and [l.split(",")[0] for l in lines[1:]] == ["32", "64", "128"]
    assert cli.main(["plot", str(out / "report.json"), "--task", "sweep"]) == cli.EXIT_OK
    assert (out / "sweep_plot.csv").read_text().startswith("theta,radius,norm")
    assert cli.main(["plot", str(out / "report.json"), "--task", "nothing"]) == cli.EXIT_CONFIG


def test_duplicate_tasks_get_distinct_files(tmp_path):
    text = BE_THREE + '[[tasks]]\nname = "angle"\nrays = 8\n'
    out = tmp_path / "out"
    cli.main(["run", str(_write(tmp_path, text)), "--out", str(out)])
    assert (out / "angle.csv").exists() and (out / "angle-2.csv").exists()


def test_threads_fallback(monkeypatch):
    monkeypatch.setenv("BLOCKOP_THREADS", "3")
    assert cli._threads(None) == 3
    assert cli._threads(2) == 2
    monkeypatch.setenv("BLOCKOP_THREADS", "many")
    assert cli._threads(None) == 1


def test_number_formatting():
    assert cli.dumps(0.1) == "0.10000000000000001"
    assert cli.dumps(math.inf) == '"inf"' and cli.dumps(-math.inf) == '"-inf"' and cli.dumps(math.nan) == '"nan"'
    assert json.loads(cli.dumps(1 + 2j)) == {"re": 1.0, "im": 2.0}
    assert json.loads(cli.dumps({"a": [np.float64(1.5), np.int64(2), True, None]})) == {"a": [1.5, 2, True, None]}
