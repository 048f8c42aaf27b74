import json

import pytest

from nonholo.cli import main
from nonholo.models import flat_holonomic, print_model


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


class TestAnalyze:
    def test_disc(self, capsys):
        code, rep, _ = run(capsys, "analyze", "--model", "disc")
        assert code == 0
        for key in ("frames", "christoffels", "frobenius", "geodesic", "fhat_star", "b_field", "a_field"):
            assert key in rep
        entry = rep["fhat_star"][1][0]
        assert "v_s" in entry and "v_r" not in entry
        assert rep["config"]["seed"] == 0x5EED

    def test_flat(self, capsys):
        code, rep, _ = run(capsys, "analyze", "--model", "flat_holonomic")
        assert code == 0
        assert all(c == "ZERO(certified)" for comps in rep["frobenius"].values() for c in comps)

    def test_missing_model(self, capsys):
        assert run(capsys, "analyze", "--model", "missing.mdl")[0] == 2

    def test_bad_override(self, capsys):
        assert run(capsys, "analyze", "--set", "mass=2")[0] == 2

    def test_writes_file(self, capsys, tmp_path):
        code, rep, _ = run(capsys, "analyze", "--model", "flat_holonomic", "--out", str(tmp_path))
        assert code == 0 and json.loads((tmp_path / "analyze.json").read_text()) == rep

    def test_same_seed_same_output(self, capsys):
        assert run(capsys, "analyze", "--seed", "3")[1] == run(capsys, "analyze", "--seed", "3")[1]


class TestInvariants:
    def test_level_spin_free(self, capsys):
        code, rep, _ = run(capsys, "invariants", "--set", "tau=0", "--stratum", "v_s=0", "--samples", "4")
        assert code == 0
        [stratum] = rep["strata"]
        assert stratum["status"] == "nonempty" and stratum["dim"] == 1
        assert stratum["labels"] == {"verified": 4}
        for s in rep["samples"]:
            assert abs(s["p_star"][0]) <= 1e-8 and abs(s["directions"][0][0]) <= 1e-8

    def test_singular_inclined(self, capsys):
        code, rep, _ = run(capsys, "invariants", "--which", "sing", "--set", "tau=0.5236",
                           "--stratum", "v_s=0", "--samples", "4")
        assert code == 0
        assert all(s["status"] == "nonempty" and s["label"] == "verified" for s in rep["samples"])

    def test_generic_inclined_empty(self, capsys):
        code, rep, _ = run(capsys, "invariants", "--set", "tau=0.5236", "--samples", "8")
        assert code == 0
        assert [s["status"] for s in rep["strata"]] == ["empty"]

    def test_unstabilized_exit(self, capsys):
        code, rep, _ = run(capsys, "invariants", "--set", "tau=0", "--stratum", "v_s=0",
                           "--samples", "2", "--orders", "1")
        assert code == 3 and rep["all_stabilized"] is False

    def test_bad_which(self, capsys):
        assert run(capsys, "invariants", "--which", "rcv")[0] == 1


class TestSimulate:
    def test_invariant_start(self, capsys, tmp_path):
        code, rep, _ = run(capsys, "simulate", "--set", "tau=0", "--state", "0.3,0,0,0,0,0.5",
                           "--p0", "0,1", "--with-sing", "--out", str(tmp_path))
        assert code == 0 and rep["gap_nh_rcv"] <= 1e-8
        assert {p.name for p in tmp_path.iterdir()} >= {"nh.csv", "rcv.csv", "sing.csv", "simulate.json"}

    def test_counterexample(self, capsys):
        code, rep, _ = run(capsys, "simulate", "--state", "0,0,0,0,1,0", "--p0", "1,0")
        assert code == 0 and rep["gap_nh_rcv"] > 1e-2

    def test_missing_state(self, capsys):
        assert run(capsys, "simulate")[0] == 1

    def test_blowup(self, capsys, tmp_path):
        path = tmp_path / "cliff.mdl"
        path.write_text(print_model(flat_holonomic()).replace("V = 0", "V = -x^4"))
        code, rep, _ = run(capsys, "simulate", "--model", str(path), "--state", "2,0,0,0,0", "--p0", "0")
        assert code == 4 and rep["blowup"] is True


class TestCheck:
    def test_default_passes(self, capsys):
        code, rep, _ = run(capsys, "check")
        assert code == 0 and rep["passed"] and not rep["failures"]

    def test_seed_independent(self, capsys):
        a = run(capsys, "check", "--seed", "7")[1]
        b = run(capsys, "check", "--seed", "0")[1]
        assert a["passed"] == b["passed"] is True

    def test_mutation_fails(self, capsys):
        code, rep, err = run(capsys, "check", "--mutate", "flip_pdot1")
        assert code == 5
        assert "regular_adjoint_equations" in rep["failures"]
        assert "regular_adjoint_equations" in err


def test_unknown_command(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys)[0] == 1
