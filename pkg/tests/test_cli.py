from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from affinepr.cli import main
from affinepr.constructions import tight_ensemble
from affinepr.forward import measure
from affinepr.model import Field
from affinepr.serialization import serialize_ensemble, serialize_signal


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("AFFINE_PR_SEED", raising=False)


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_build_tight(tmp_path, capsys):
    out = tmp_path / "e.json"
    code, _, _ = _run(capsys, "build", "--field", "real", "--dim", 4, "--rank", 2, "--out", out)
    assert code == 0
    obj = json.loads(out.read_text())
    assert obj["schema"] == "affine-pr-1" and len(obj["measurements"]) == 6
    assert obj["meta"]["kind"] == "tight"


def test_build_to_stdout_and_kinds(capsys):
    code, out, _ = _run(capsys, "build", "--dim", 2, "--rank", 1, "--kind", "random", "--m", 5, "--seed", 3)
    assert code == 0 and len(json.loads(out)["measurements"]) == 5
    code, out, _ = _run(capsys, "build", "--dim", 2, "--rank", 2, "--kind", "perturbed", "--delta", 0.5)
    assert code == 0 and json.loads(out)["meta"]["kind"] == "perturbed"


def test_measure_recover_round_trip(tmp_path, capsys):
    for field in Field:
        e, s, y, r = (tmp_path / f"{n}_{field.value}.json" for n in "esyr")
        assert _run(capsys, "build", "--field", field.value, "--dim", 5, "--rank", 2, "--out", e)[0] == 0
        x = np.random.default_rng(1).standard_normal(5) + (1j if field is Field.COMPLEX else 0)
        s.write_text(serialize_signal(x, field))
        assert _run(capsys, "measure", "--ensemble", e, "--signal", s, "--out", y)[0] == 0
        assert _run(capsys, "recover", "--ensemble", e, "--measurements", y, "--out", r)[0] == 0
        got = json.loads(r.read_text())
        assert got["schema"] == "affine-pr-sig-1" and got["field"] == field.value
        xr = np.array([complex(*v) if isinstance(v, list) else v for v in got["x"]])
        assert np.linalg.norm(xr - x) <= 1e-8 * (1 + np.linalg.norm(x))


def test_recover_lsq(tmp_path, capsys):
    e, y = tmp_path / "e.json", tmp_path / "y.json"
    _run(capsys, "build", "--dim", 2, "--rank", 1, "--kind", "random", "--m", 5, "--seed", 4, "--out", e)
    s = tmp_path / "s.json"
    s.write_text(serialize_signal(np.array([0.3, -1.2]), Field.REAL))
    _run(capsys, "measure", "--ensemble", e, "--signal", s, "--out", y)
    code, out, _ = _run(capsys, "recover", "--ensemble", e, "--measurements", y, "--seed", 1)
    assert code == 0 and json.loads(out)["schema"] == "affine-pr-sig-1"


def test_recover_strict_inconsistent(tmp_path, capsys):
    e, y = tmp_path / "e.json", tmp_path / "y.json"
    e.write_text(serialize_ensemble(tight_ensemble(2, 1)))
    y.write_text('{"schema": "affine-pr-meas-1", "y": [1.0, 4.0, 5.0, 9.0]}')
    code, _, err = _run(capsys, "recover", "--ensemble", e, "--measurements", y, "--strict")
    assert code == 1 and "block" in err
    code, _, err = _run(capsys, "recover", "--ensemble", e, "--measurements", y)
    assert code == 0 and "warning" in err


def test_verify_expect(tmp_path, capsys):
    e, bad = tmp_path / "e.json", tmp_path / "bad.json"
    e.write_text(serialize_ensemble(tight_ensemble(2, 1)))
    bad.write_text(serialize_ensemble(tight_ensemble(2, 1).without(0)))
    code, out, _ = _run(capsys, "verify", "--ensemble", e, "--restarts", 10, "--seed", 1, "--expect", "injective")
    assert code == 0 and json.loads(out)["verdict"] == "no_collision_found"
    code, out, _ = _run(capsys, "verify", "--ensemble", bad, "--seed", 1, "--expect", "injective")
    assert code == 1 and json.loads(out)["verdict"] == "non_injective"
    code, _, _ = _run(capsys, "verify", "--ensemble", bad, "--seed", 1, "--expect", "non-injective")
    assert code == 0


def test_collide_and_certify(tmp_path, capsys):
    e, w, c, w2 = (tmp_path / f"{n}.json" for n in ("e", "w", "c", "w2"))
    E = tight_ensemble(3, 1, Field.COMPLEX).without(4)
    e.write_text(serialize_ensemble(E))
    assert _run(capsys, "collide", "--ensemble", e, "--out", w)[0] == 0
    wit = json.loads(w.read_text())
    assert wit["schema"] == "affine-pr-witness-1"
    code, _, _ = _run(capsys, "certify", "--ensemble", e, "--witness", w, "--out", c)
    cert = json.loads(c.read_text())
    assert code == 0 and all(v for k, v in cert["checks"].items() if k != "failing_pairs")
    assert _run(capsys, "certify", "--ensemble", e, "--certificate", c, "--out", w2)[0] == 0
    obj = json.loads(w2.read_text())
    assert obj["gap"] <= 1e-8 * obj["scale"]


def test_certify_rejects_tampered(tmp_path, capsys):
    e, w, c = (tmp_path / f"{n}.json" for n in ("e", "w", "c"))
    e.write_text(serialize_ensemble(tight_ensemble(2, 1).without(1)))
    _run(capsys, "collide", "--ensemble", e, "--out", w)
    _run(capsys, "certify", "--ensemble", e, "--witness", w, "--out", c)
    cert = json.loads(c.read_text())
    cert["Q"][-1][-1] = 0.1
    c.write_text(json.dumps(cert))
    code, _, err = _run(capsys, "certify", "--ensemble", e, "--certificate", c)
    assert code == 1 and err


def test_collide_nothing_found(tmp_path, capsys):
    e = tmp_path / "e.json"
    e.write_text(serialize_ensemble(tight_ensemble(2, 1)))
    code, out, err = _run(capsys, "collide", "--ensemble", e, "--restarts", 6, "--seed", 2)
    assert code == 1 and out == "" and "no collision" in err


def test_experiment_csv(tmp_path, capsys):
    code, out, _ = _run(capsys, "experiment", "tightness", "--dims", "2,3", "--trials", 2, "--seed", 9)
    assert code == 0
    assert out.splitlines()[0].startswith("cell,trial,field,d,r,m,bound")
    dest = tmp_path / "rows.json"
    code, out, _ = _run(capsys, "experiment", "openness", "--dims", "2", "--format", "json", "--out", dest)
    assert code == 0 and out == ""
    assert len(json.loads(dest.read_text())["rows"]) == 3


def test_seed_env_fallback(monkeypatch, capsys):
    argv = ["experiment", "generic", "--dims", "2", "--trials", 2, "--restarts", 3, "--no-control"]
    monkeypatch.setenv("AFFINE_PR_SEED", "5")
    _, env_out, _ = _run(capsys, *argv)
    _, flag_out, _ = _run(capsys, *argv, "--seed", 5)
    _, other_out, _ = _run(capsys, *argv, "--seed", 6)

    def strip(text):
        return [line.rsplit(",", 1)[0] for line in text.splitlines()]

    assert strip(env_out) == strip(flag_out) != strip(other_out)
    monkeypatch.setenv("AFFINE_PR_SEED", "abc")
    code, _, err = _run(capsys, *argv)
    assert code == 2 and "AFFINE_PR_SEED" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["build", "--dim", "2"],
        ["frobnicate"],
        ["build", "--dim", "2", "--rank", "1", "--kind", "random"],
        ["build", "--dim", "0", "--rank", "1"],
        ["measure", "--ensemble", "/nonexistent/e.json", "--signal", "x"],
        ["experiment", "openness", "--dims", "1"],
        ["experiment", "tightness", "--dims", "a,b"],
    ],
)
def test_usage_and_io_errors(argv, capsys):
    code, _, err = _run(capsys, *argv)
    assert code == 2 and err


def test_bad_file_contents(tmp_path, capsys):
    e, s = tmp_path / "e.json", tmp_path / "s.json"
    e.write_text('{"schema": "affine-pr-1", "field": "real"')
    s.write_text(serialize_signal(np.zeros(2), Field.REAL))
    code, _, err = _run(capsys, "measure", "--ensemble", e, "--signal", s)
    assert code == 2 and "line" in err
    e.write_text(serialize_ensemble(tight_ensemble(2, 1)))
    s.write_text(serialize_signal(np.array([1j, 0]), Field.COMPLEX))
    code, _, err = _run(capsys, "measure", "--ensemble", e, "--signal", s)
    assert code == 2


def test_measure_matches_library(tmp_path, capsys):
    E = tight_ensemble(3, 2, Field.COMPLEX)
    x = np.array([1 + 1j, -2.0, 0.5j])
    e, s = tmp_path / "e.json", tmp_path / "s.json"
    e.write_text(serialize_ensemble(E))
    s.write_text(serialize_signal(x, Field.COMPLEX))
    code, out, _ = _run(capsys, "measure", "--ensemble", e, "--signal", s)
    assert code == 0 and np.array_equal(json.loads(out)["y"], measure(E, x))


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "affinepr", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "affine-pr" in res.stdout
