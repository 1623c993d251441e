import csv
import json

import numpy as np
import pytest

from cibo import CATALOG, get_object, io
from cibo.cli import main
from cibo.exceptions import ConfigError

GEAR1_INI = """\
[object]
mass = 140 g
l = 84 mm
w = 2 cm
mu_A = 0.3
mu_B = 0.3
mu_P = 0.8

[planner]
kind = cibo-com
N = 30
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_units_and_catalog_base():
    run = io.parse_config(GEAR1_INI)
    ref = CATALOG["gear1"]
    for k in ("mass", "l", "w", "mu_A", "mu_B", "mu_P"):
        assert getattr(run.spec, k) == pytest.approx(getattr(ref, k), rel=1e-15)
    run2 = io.parse_config("[object]\nname = gear1\nmass = 0.28 kg\n")
    assert run2.spec.mass == pytest.approx(0.28) and run2.spec.l == ref.l
    assert run2.planner.kind == "baseline"


def test_peg_from_config():
    run = io.parse_config("[object]\nshape = peg\nmass = 85 g\nl1 = 28 mm\nl2 = 40 mm\n"
                          "w1 = 10 mm\nw2 = 27.5 mm\n[planner]\nkind = modes\n")
    assert run.spec == CATALOG["peg3"] and run.planner.kind == "cibo-modes"


@pytest.mark.parametrize("text, line, fragment", [
    ("[object]\nname = gear1\nbogus = 3\n", 3, "unknown key"),
    ("[object]\nname = gear1\n[planets]\nx = 1\n", 3, "unknown section"),
    ("[object]\nmass = 140 lb\nl = 1\nw = 1\n", 2, "unit"),
    ("[object]\nname = gear1\n[planner]\nkind = cibo-torque\n", 3, "unknown planner kind"),
    ("[object]\nname = gear9\n", 2, "unknown catalog"),
])
def test_config_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        io.parse_config(text)
    msg = str(info.value)
    assert f"line {line}" in msg and fragment in msg


def test_config_requires_object():
    with pytest.raises(ConfigError):
        io.parse_config("[planner]\nkind = baseline\n")
    with pytest.raises(ConfigError):
        io.parse_config("[object]\nname = gear1\n[solver]\ndelta_min = 5\n")


def test_emit_parse_round_trip():
    text = GEAR1_INI + "[solver]\nmax_stages = 9\n[eval]\nkind = com\nlo = -0.002\nhi = 0.003\n" \
        "count = 77\nseed = 5\n"
    run = io.parse_config(text)
    back = io.parse_config(io.emit_config(run))
    assert back.to_dict() == run.to_dict()
    assert back.config_hash() == run.config_hash()
    assert back.eval == run.eval


def test_hash_tracks_semantic_fields_only():
    base = io.parse_config(GEAR1_INI)
    same = [GEAR1_INI + "[solver]\ndelta_min = 1e-8\n",  # equals the planner default
            GEAR1_INI.replace("mass = 140 g", "mass = 0.14 kg"),
            GEAR1_INI.replace("[object]\n", "[object]\nname = gear1\n")]
    for t in same:
        assert io.parse_config(t).config_hash() == base.config_hash(), t
    changed = [GEAR1_INI.replace("140 g", "141 g"), GEAR1_INI.replace("N = 30", "N = 32"),
               GEAR1_INI + "[solver]\ndelta_min = 1e-7\n",
               GEAR1_INI.replace("kind = cibo-com", "kind = cibo-mass"),
               GEAR1_INI + "beta = 0.001\n"]
    hashes = {io.parse_config(t).config_hash() for t in changed}
    assert base.config_hash() not in hashes and len(hashes) == len(changed)


@pytest.fixture(scope="module")
def com_file(tmp_path_factory, planned):
    tr = planned("gear1", "cibo-com")
    path = tmp_path_factory.mktemp("traj") / "com.csv"
    io.write_trajectory(tr, path, io.parse_config(GEAR1_INI))
    return tr, path


def test_trajectory_file_layout(com_file):
    tr, path = com_file
    lines = path.read_text().splitlines()
    header = json.loads(lines[0][2:])
    assert header["schema"] == io.SCHEMA_VERSION and header["margin_family"] == "com"
    assert header["config_hash"] == io.parse_config(GEAR1_INI).config_hash()
    cols = lines[1].split(",")
    assert tuple(cols) == io.BASE_COLUMNS + ("r_plus", "r_minus") + io.TAIL_COLUMNS
    assert len(lines) == 2 + len(tr.knots)


def test_trajectory_round_trip_is_lossless(com_file):
    tr, path = com_file
    tf = io.read_trajectory(path)
    np.testing.assert_array_equal(tf.column("theta"), [k.state.theta for k in tr.knots])
    np.testing.assert_array_equal(tf.column("f_nA"), [k.contact.f_nA for k in tr.knots])
    np.testing.assert_array_equal(tf.column("t"), tr.times)
    back = io.trajectory_from_file(tf)
    assert back.converged and back.cfg == tr.cfg
    for a, b in zip(back.knots, tr.knots):
        np.testing.assert_allclose(a.geom.A, b.geom.A, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a.geom.P, b.geom.P, rtol=0, atol=1e-12)
    cols, rows = io.recompute_margins(tf)
    rows = np.array(rows)
    np.testing.assert_allclose(rows[:, 2], tf.column("r_plus"), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(rows[:, 3], tf.column("r_minus"), rtol=1e-12, atol=1e-12)
    bp, bm, bk = back.worst_margin("com")
    tp, tm, tk = tr.worst_margin("com")
    assert (bp, bm) == pytest.approx((tp, tm), abs=1e-12) and bk == tk


def test_friction_and_patch_columns(tmp_path, planned):
    tr = planned("gear1", "cibo-friction")
    p = io.write_trajectory(tr, tmp_path / "f.csv")
    tf = io.read_trajectory(p)
    assert tf.columns[-2:] == ("epsA_star", "epsB_star")
    cols, rows = io.recompute_margins(tf)
    np.testing.assert_allclose(np.array(rows)[:, 2], tf.column("epsA_plus"), atol=1e-6)
    tp = planned("gear2", "cibo-com", contact="patch")
    tf = io.read_trajectory(io.write_trajectory(tp, tmp_path / "p.csv"))
    assert tf.columns[-1] == "patch_len"
    _, rows = io.recompute_margins(tf)
    np.testing.assert_allclose(np.array(rows)[:, 2], tf.column("r_plus"), atol=1e-9)


def test_margin_command_single_knot(tmp_path, com_file, capsys):
    _, path = com_file
    lines = path.read_text().splitlines()
    one = write(tmp_path, "one.csv", "\n".join(lines[:3]) + "\n")
    assert main(["margin", str(one), "--kind", "mass"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "k,t,eps_plus,eps_minus" and len(out) == 2


def test_nan_row_is_a_config_error(tmp_path, com_file, capsys):
    _, path = com_file
    lines = path.read_text().splitlines()
    fields = lines[4].split(",")
    fields[2] = "nan"
    lines[4] = ",".join(fields)
    bad = write(tmp_path, "bad.csv", "\n".join(lines) + "\n")
    assert main(["margin", str(bad)]) == 1
    assert "line 5" in capsys.readouterr().err


def test_plan_exit_codes(tmp_path, capsys):
    cfg = write(tmp_path, "base.ini", "[object]\nname = gear1\n[planner]\nN = 12\n")
    out = tmp_path / "t.csv"
    assert main(["plan", str(cfg), "--out", str(out)]) == 0
    assert "converged" in capsys.readouterr().out
    assert io.read_trajectory(out).header["report"]["status"] == "converged"
    assert main(["plan", str(cfg), "--kind", "nonsense"]) == 1
    assert main(["plan", str(tmp_path / "missing.ini")]) == 1
    bad = write(tmp_path, "bad.ini", "[object]\nname = gear1\nbogus = 1\n")
    assert main(["plan", str(bad)]) == 1
    assert "line 3" in capsys.readouterr().err
    # finger at the face centre of peg3 cannot hold the flat pose
    peg = write(tmp_path, "peg.ini", "[object]\nname = peg3\n[planner]\nkind = modes\n"
                "x_s = 0, 0\n")
    assert main(["plan", str(peg), "--out", str(tmp_path / "peg.csv")]) == 2
    assert io.read_trajectory(tmp_path / "peg.csv").header["report"]["status"] != "converged"


def test_eval_command_reports_certificate(tmp_path, com_file):
    tr, path = com_file
    plus, minus, _ = tr.worst_margin("com")
    cfg = write(tmp_path, "e.ini", GEAR1_INI + f"[eval]\nkind = com\nlo = {-minus!r}\n"
                f"hi = {plus!r}\ncount = 500\n")
    out = tmp_path / "eval.csv"
    assert main(["eval", str(path), str(cfg), "--out", str(out), "--seed", "3"]) == 0
    (row,) = read_csv(out)
    assert row["kind"] == "com" and float(row["success_rate"]) == 1.0
    assert int(row["samples"]) == 500 == int(row["successes"])
    no_eval = write(tmp_path, "n.ini", GEAR1_INI)
    assert main(["eval", str(path), str(no_eval)]) == 1


def test_sweep_grid_table(tmp_path):
    cfg = write(tmp_path, "s.ini", "[object]\nname = gear1\n[planner]\nkind = com\nN = 12\n")
    out = tmp_path / "sweep.csv"
    assert main(["sweep", str(cfg), "--grid", "0w,0.1w,0.2w,0.3w,0.4w", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 5
    assert list(rows[0]) == ["p_y0", "p_y0_over_w", "converged", "r_plus_mm", "r_minus_mm",
                             "status"]
    assert [float(r["p_y0_over_w"]) for r in rows] == pytest.approx([0, 0.1, 0.2, 0.3, 0.4])
    assert main(["sweep", str(cfg), "--grid", "abc"]) == 1
    assert main(["sweep", str(cfg)]) == 1


@pytest.mark.slow
def test_mode_experiment_table_is_reproducible(tmp_path):
    cfg = write(tmp_path, "m.ini", "[object]\nname = peg3\n[planner]\nkind = modes\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", str(cfg), "--mode-experiment", "--n", "2", "--seed", "9",
                 "--out", str(a)]) == 0
    assert main(["sweep", str(cfg), "--mode-experiment", "--n", "2", "--seed", "9",
                 "--out", str(b)]) == 0
    assert a.read_text() == b.read_text()
    assert [r["method"] for r in read_csv(a)] == ["mode-based", "hierarchical"]


def test_seed_must_be_u64(tmp_path):
    cfg = write(tmp_path, "x.ini", "[object]\nname = gear1\n")
    assert main(["plan", str(cfg), "--seed", "-1"]) == 1
    assert main(["plan", str(cfg), "--seed", str(2 ** 64)]) == 1


def test_log_level_from_environment(tmp_path, monkeypatch, capsys):
    import logging
    monkeypatch.setenv("CIBO_LOG", "debug")
    cfg = write(tmp_path, "x.ini", "[object]\nname = gear1\n[planner]\nN = 6\n")
    logging.getLogger().handlers.clear()
    main(["plan", str(cfg), "--out", str(tmp_path / "x.csv")])
    assert "DEBUG" in capsys.readouterr().err
    logging.getLogger().handlers.clear()
    logging.getLogger().setLevel(logging.WARNING)


def test_catalog_lookup():
    assert get_object("gear3").mass == pytest.approx(0.28)
