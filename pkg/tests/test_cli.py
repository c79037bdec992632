from __future__ import annotations

import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qsrsim import io
from qsrsim.cli import NON_MARKOV_MESSAGE, main
from qsrsim.grid import TimeGrid
from qsrsim.sde import expected_pure

MODELS = Path(__file__).resolve().parent.parent / "models"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def report(out: str) -> dict:
    return json.loads(out)


def write(tmp_path, name, data) -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


# -- validate ------------------------------------------------------------------------


def test_validate_projective_qsr(capsys):
    code, out, _ = run(capsys, "validate", MODELS / "projective_z.json")
    assert code == 0
    assert report(out)["pass"] is True


def test_validate_broken_normalization(capsys):
    code, out, _ = run(capsys, "validate", MODELS / "broken_normalization.json")
    assert code == 1
    failing = [c["name"] for c in report(out)["checks"] if not c["pass"]]
    assert failing == ["operator_normalization"]


def test_validate_large_chain_switches_to_monte_carlo(capsys):
    code, out, _ = run(capsys, "validate", MODELS / "chain_long.json")
    rep = report(out)
    assert code == 0
    assert rep["info"]["mode"] == "monte-carlo"
    assert "enumeration cap" in rep["info"]["note"]


@pytest.mark.parametrize("name", ["chain_weak_z.json", "chain_history.json", "decay.json", "cnot.json"])
def test_validate_other_kinds(capsys, name):
    code, out, _ = run(capsys, "validate", MODELS / name)
    assert code == 0, out


def test_validate_writes_report(capsys, tmp_path):
    code, out, _ = run(capsys, "validate", MODELS / "projective_z.json", "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "validate.json").read_text(encoding="utf-8") == out


@pytest.mark.parametrize("content", [
    '{"kind": "qsr", ',
    '[1, 2]',
    '{"schema_version": 1}',
    '{"schema_version": 9, "kind": "qsr"}',
    '{"schema_version": 1, "kind": "qsr", "outcomes": [0]}',
    '{"schema_version": 1, "kind": "qsr", "outcomes": [0], "channels": [{"alpha": 1, "nu": [1], "V": [[[1, 0]]]}]}',
    '{"schema_version": 1, "kind": "banana"}',
    '{"schema_version": 1, "kind": "chain", "n_steps": 2, "generator": "mystery"}',
])
def test_malformed_files_exit_2(capsys, tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content, encoding="utf-8")
    code, _, err = run(capsys, "validate", path)
    assert code == 2
    assert err.startswith("error:")


def test_missing_file_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "validate", tmp_path / "nope.json")
    assert code == 2 and "cannot read" in err


def test_bad_flags_exit_2(capsys, tmp_path):
    code, _, _ = run(capsys, "sample", MODELS / "decay.json", "--seed", "-1", "--out", tmp_path)
    assert code == 2
    code, _, _ = run(capsys, "sample", MODELS / "decay.json", "--n-traj", "0", "--out", tmp_path)
    assert code == 2
    for flag in (("--dt", "0"), ("--dt", "-1"), ("--n-steps", "0"), ("--workers", "0")):
        code, _, _ = run(capsys, "sample", MODELS / "decay.json", *flag, "--out", tmp_path)
        assert code == 2, flag
    code, _, err = run(capsys, "sample", MODELS / "decay.json", "--dt", "0.5", "--out", tmp_path)
    assert code == 2 and "gamma_max*dt" in err


# -- sample --------------------------------------------------------------------------


def test_sample_is_reproducible(capsys, tmp_path):
    for sub in ("a", "b"):
        code, _, _ = run(capsys, "sample", MODELS / "decay.json", "--n-traj", 1, "--seed", 42,
                         "--out", tmp_path / sub)
        assert code == 0
    a = (tmp_path / "a" / "trajectories.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectories.csv").read_bytes()
    assert a.startswith(b"trajectory_id,t,norm_sq,X_1,jump_1\n")
    assert b"\r" not in a


def test_sample_independent_of_workers(capsys, tmp_path):
    for w in (1, 8):
        code, _, _ = run(capsys, "sample", MODELS / "diffusive_jump.json", "--n-traj", 100, "--seed", 9,
                         "--workers", w, "--out", tmp_path / f"w{w}", "--dump-every", 40)
        assert code == 0
    for name in ("trajectories.csv", "states.json"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w8" / name).read_bytes()


def test_sample_chain_csv(capsys, tmp_path):
    code, _, _ = run(capsys, "sample", MODELS / "chain_weak_z.json", "--n-traj", 50, "--out", tmp_path)
    assert code == 0
    with open(tmp_path / "trajectories.csv", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["trajectory_id", "step", "outcome", "norm_sq"]
    assert len(rows) == 50 * 4
    assert {r["outcome"] for r in rows if r["step"] != "0"} <= {"+", "-"}


def test_sample_decay_norm_matches_scheme_mean(capsys, tmp_path):
    code, _, _ = run(capsys, "sample", MODELS / "decay.json", "--n-traj", 2000, "--n-steps", 100,
                     "--out", tmp_path)
    assert code == 0
    with open(tmp_path / "trajectories.csv", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_t: dict[str, list[float]] = {}
    for r in rows:
        by_t.setdefault(r["t"], []).append(float(r["norm_sq"]))
    assert len(by_t) == 101
    data = io.load_json(MODELS / "decay.json")
    model, _ = io.sde_from_dict(data)
    exact = expected_pure(model, io.initial_state(data, 2), TimeGrid(100, 0.01))
    final = np.array(list(by_t.values())[-1])
    se = final.std(ddof=1) / math.sqrt(len(final))
    assert abs(final.mean() - np.trace(exact[-1]).real) <= 3 * se


def test_sample_state_dump(capsys, tmp_path):
    code, _, _ = run(capsys, "sample", MODELS / "decay.json", "--n-traj", 3, "--n-steps", 10,
                     "--dump-every", 5, "--out", tmp_path)
    assert code == 0
    dump = json.loads((tmp_path / "states.json").read_text(encoding="utf-8"))
    assert dump["schema_version"] == 1
    assert [s["t"] for s in dump["trajectories"][0]["states"]] == [0.0, 0.05, 0.1]


def test_sample_needs_out(capsys):
    code, _, _ = run(capsys, "sample", MODELS / "decay.json")
    assert code == 2


# -- compare -------------------------------------------------------------------------


def test_compare_no_noise(capsys):
    code, out, _ = run(capsys, "compare", MODELS / "no_noise.json")
    assert code == 0
    assert max(r["trace_distance"] for r in report(out)["times"]) <= 1e-12


def test_compare_damping_bound_halves(capsys):
    bounds = []
    for dt in ("0.01", "0.005"):
        code, out, _ = run(capsys, "compare", MODELS / "decay.json", "--dt", dt, "--n-traj", 2000)
        rep = report(out)
        assert code == 0
        assert rep["n_steps"] * rep["dt"] == pytest.approx(3.0)
        bounds.append(rep["bias_bound"])
        assert 0.9 <= rep["observed_order"] <= 1.1
    assert 0.4 <= bounds[1] / bounds[0] <= 0.6


def test_compare_refuses_history_dependence(capsys):
    code, _, err = run(capsys, "compare", MODELS / "chain_history.json")
    assert code == 2
    assert NON_MARKOV_MESSAGE in err


def test_compare_markov_chain(capsys):
    code, out, _ = run(capsys, "compare", MODELS / "chain_weak_z.json", "--n-traj", 2000)
    assert code == 0
    assert len(report(out)["steps"]) == 4


# -- nondemolition -----------------------------------------------------------------


def test_ndcheck_cnot(capsys):
    code, out, _ = run(capsys, "ndcheck", MODELS / "cnot.json")
    assert code == 0


def test_ndcheck_recoupling(capsys):
    code, out, _ = run(capsys, "ndcheck", MODELS / "recoupling.json")
    rep = report(out)
    assert code == 1
    assert "system_commutes_with_past_probes" in rep["failing"]
    for c in rep["checks"]:
        if c["name"] in rep["failing"]:
            assert c["residual"] > 0.1


def test_ndcheck_identity(capsys):
    code, out, _ = run(capsys, "ndcheck", MODELS / "identity.json")
    assert code == 0
    assert all(c["residual"] == 0.0 for c in report(out)["checks"])


def test_ndcheck_dimension_cap(capsys, tmp_path):
    path = write(tmp_path, "big.json", {"schema_version": 1, "kind": "probe-chain", "generator": "identity",
                                        "n_steps": 12})
    code, _, err = run(capsys, "ndcheck", path)
    assert code == 2 and "cap" in err


def test_ndcheck_wrong_kind(capsys):
    code, _, _ = run(capsys, "ndcheck", MODELS / "decay.json")
    assert code == 2


def test_extract_qsr_round_trip(capsys, tmp_path):
    code, out, _ = run(capsys, "extract-qsr", MODELS / "partial_swap.json", "--out", tmp_path)
    assert code == 0
    chain = io.chain_from_dict(json.loads(out))
    assert chain.n_steps == 3
    code, _, _ = run(capsys, "validate", tmp_path / "extracted_chain.json")
    assert code == 0
    code, _, _ = run(capsys, "extract-qsr", MODELS / "recoupling.json")
    assert code == 2


def test_explicit_probe_chain_file(capsys, tmp_path):
    cnot = np.eye(4)[[0, 1, 3, 2]]
    data = {"schema_version": 1, "kind": "probe-chain", "generator": "explicit", "n_steps": 2,
            "system_dim": 2, "probe_dim": 2, "f": io.encode_array(np.array([1, 0j])),
            "U_step": io.encode_array(cnot.astype(complex)), "probe_observable": "z"}
    code, _, _ = run(capsys, "ndcheck", write(tmp_path, "explicit.json", data))
    assert code == 0


def test_console_script_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "qsrsim.cli", "validate", str(MODELS / "projective_z.json")],
                        capture_output=True)
    bad = subprocess.run([sys.executable, "-m", "qsrsim.cli", "validate",
                          str(MODELS / "broken_normalization.json")], capture_output=True)
    junk = subprocess.run([sys.executable, "-m", "qsrsim.cli", "frobnicate"], capture_output=True)
    assert (ok.returncode, bad.returncode, junk.returncode) == (0, 1, 2)
