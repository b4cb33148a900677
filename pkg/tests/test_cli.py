import json

import numpy as np
import pytest

from rollkit.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_builtin(capsys):
    code, out, _ = run(capsys, "analyze", "--scenario", "sphere_plane_2d")
    rep = json.loads(out)
    assert code == 0
    assert rep["ranks"] == [2, 3, 5] and rep["controllable"] is True
    assert list(rep) == ["ranks", "step", "config_dim", "orbit_dim", "controllable", "provenance"]


def test_analyze_inline_and_file(capsys, tmp_path):
    sc = {"manifold": {"type": "euclidean", "n": 3}, "hat_manifold": {"type": "euclidean", "n": 3}}
    code, out, _ = run(capsys, "analyze", "--scenario", json.dumps(sc))
    assert code == 0 and json.loads(out)["ranks"] == [3, 3]
    f = tmp_path / "sc.json"
    f.write_text(json.dumps({**sc, "initial": {"x": [1, 2, 3]}}))
    code, out, _ = run(capsys, "analyze", "--scenario", str(f))
    assert code == 0 and json.loads(out)["orbit_dim"] == 3


@pytest.mark.parametrize("sc", [
    "{not json",
    '{"manifold": {"type": "torus"}, "hat_manifold": {"type": "euclidean", "n": 2}}',
    '{"manifold": {"type": "sphere", "n": 2}, "hat_manifold": {"type": "euclidean", "n": 3}}',
    '{"manifold": {"type": "sphere", "n": 2}, "hat_manifold": {"type": "euclidean", "n": 2},'
    ' "initial": {"A": [[1, 0], [0, -1]]}}',
    "no_such_scenario",
])
def test_analyze_malformed(capsys, sc):
    code, _, err = run(capsys, "analyze", "--scenario", sc)
    assert code == 2 and err


def test_analyze_rank_unstable(capsys):
    code, out, err = run(capsys, "analyze", "--scenario", "sphere_plane_2d", "--rank-tol", "0.5")
    assert code == 3 and "rank-unstable" in err
    json.loads(out)


def test_bad_seed_is_malformed(capsys, monkeypatch):
    monkeypatch.setenv("ROLLKIT_SEED", "abc")
    code, _, _ = run(capsys, "analyze", "--scenario", "sphere_plane_2d")
    assert code == 2


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["roll", "--scenario", "se3_example"])
    assert info.value.code == 2


def test_roll_se3_and_determinism(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code, out, _ = run(capsys, "roll", "--scenario", "se3_example", "--control", "se3_example", "--T", "0.5",
                       "--dt", "0.01", "--out", str(a))
    rep = json.loads(out)
    assert code == 0 and rep["ok"] and rep["steps"] == 50
    assert np.allclose(rep["final_x_hat"], [np.sqrt(2) * 0.5, 0, 0, 0, 0, 0.5])
    run(capsys, "roll", "--scenario", "se3_example", "--control", "se3_example", "--T", "0.5",
        "--dt", "0.01", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()
    head = a.read_text().splitlines()
    assert head[0].startswith("# rollkit") and head[1].startswith("t,u1,")


def test_roll_chart_exit_writes_partial(capsys, tmp_path):
    out = tmp_path / "s.csv"
    ctrl = '{"type": "piecewise_constant", "knots": [0], "values": [[1, 0]]}'
    code, _, err = run(capsys, "roll", "--scenario", "sphere_plane_2d", "--control", ctrl, "--T", "3.14159",
                       "--out", str(out))
    assert code == 4 and "chart exit" in err
    text = out.read_text()
    assert text.rstrip().splitlines()[-1].startswith("# error:")
    assert len(text.splitlines()) > 1000


@pytest.mark.parametrize("ctrl", [
    '{"type": "piecewise_constant", "knots": [0], "values": [[1, 0, 0]]}',
    '{"type": "piecewise_constant", "knots": [0, 0], "values": [[1, 0], [0, 1]]}',
    '{"type": "spline"}',
])
def test_roll_bad_control(capsys, tmp_path, ctrl):
    code, _, _ = run(capsys, "roll", "--scenario", "sphere_plane_2d", "--control", ctrl,
                     "--out", str(tmp_path / "x.csv"))
    assert code == 2


def test_roll_nonpositive_time(capsys, tmp_path):
    code, _, _ = run(capsys, "roll", "--scenario", "se3_example", "--control", "se3_example", "--T", "0",
                     "--out", str(tmp_path / "x.csv"))
    assert code == 2


def test_transport_latitude(capsys, tmp_path):
    out = tmp_path / "z.csv"
    code, summary, _ = run(capsys, "transport", "--curve", "latitude:1.0471975511965976", "--v0", "1,0",
                           "--out", str(out))
    s = json.loads(summary)
    assert code == 0 and s["steps"] == 2000
    assert abs(abs(s["holonomy_angle"]) - np.pi) < 1e-6
    assert out.read_text().splitlines()[1] == "t,z1,z2"


def test_transport_curve_file(capsys, tmp_path):
    t = np.linspace(0.0, 1.0, 21)
    f = tmp_path / "c.csv"
    f.write_text("t,x1,x2\n" + "".join(f"{a},{a},{2 * a}\n" for a in t))
    code, out, _ = run(capsys, "transport", "--manifold", '{"type": "euclidean", "n": 2}', "--curve", str(f),
                       "--v0", "0.5,0.25")
    rows = [r for r in out.splitlines() if not r.startswith("#")]
    assert code == 0 and rows[0] == "t,z1,z2" and rows[-1] == "1,0.5,0.25"


def test_transport_normal_identity(capsys):
    code, out, _ = run(capsys, "transport", "--curve", "se3_example", "--normal")
    assert code == 0 and out.splitlines()[1].startswith("t,z1_1,z1_2")


def test_transport_errors(capsys, tmp_path):
    assert run(capsys, "transport", "--curve", str(tmp_path / "missing.csv"),
               "--manifold", '{"type": "sphere", "n": 2}')[0] == 2
    assert run(capsys, "transport", "--curve", "latitude:x")[0] == 2
    assert run(capsys, "transport", "--curve", "latitude", "--v0", "1,0,0")[0] == 2


def test_verify_filter_and_fault(capsys):
    code, out, _ = run(capsys, "verify", "--filter", "bracket")
    assert code == 0 and "PASS" in out
    code, out, _ = run(capsys, "verify", "--filter", "sphere", "--inject-fault", "christoffel-sign")
    assert code == 1 and "FAIL" in out
    code, _, _ = run(capsys, "verify", "--filter", "nothing-matches-this")
    assert code == 2
