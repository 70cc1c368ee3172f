import csv
import json

import numpy as np
import pytest

from ffloors.annotations import SpeakingMatrix, serialize_speaking_csv
from ffloors.cli import main, verify_manifest
from ffloors.glm import read_report
from ffloors.sim import SimScenario, scenario_to_ini


def _write_corpus(tmp_path, rows, pids, ff_lines):
    m = SpeakingMatrix(20, tuple(pids), np.array(rows, dtype=np.int8))
    sp = tmp_path / "speaking.csv"
    sp.write_text(serialize_speaking_csv(m))
    ffp = tmp_path / "ff.csv"
    ffp.write_text("id,start_s,end_s,members\n" + "\n".join(ff_lines) + "\n")
    return sp, ffp


def _csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def toy(tmp_path):
    rows = np.zeros((4, 60), np.int8)
    rows[0, :] = 1        # A speaks 0-3 s
    rows[1, 0:40] = 1     # B speaks 0-2 s
    rows[2, 20:40] = 1    # C speaks 1-2 s
    return _write_corpus(tmp_path, rows, "ABCD", ["F1,0,3,A;B;C;D"])


def test_floors_toy_by_hand(tmp_path, toy):
    out = tmp_path / "out"
    assert main(["floors", str(toy[0]), str(toy[1]), "--out-dir", str(out)]) == 0
    obs = _csv(out / "observations.csv")
    assert [(r["d_s"], r["y"], r["n_windows"]) for r in obs] == [
        ("1", "3", "3"), ("2", "2", "2"), ("3", "1", "1")]
    means = _csv(out / "fig3_means.csv")
    assert list(means[0]) == ["cardinality", "d_s", "mean_y"]
    assert [(r["d_s"], float(r["mean_y"])) for r in means] == [("1", 3.0), ("2", 2.0), ("3", 1.0)]
    counts = _csv(out / "fig5_counts.csv")
    assert [(r["cardinality"], r["n"]) for r in counts] == [("4", "1")] * 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["d_max_s"] == 20 and manifest["config"]["min_cardinality"] == 4
    assert set(manifest["outputs"]) == {str(out / n) for n in
                                        ("observations.csv", "fig3_means.csv", "fig5_counts.csv")}
    assert verify_manifest(out / "manifest.json") == []


def test_floors_rerun_byte_identical(tmp_path, toy):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["floors", str(toy[0]), str(toy[1]), "--out-dir", str(a)])
    main(["floors", str(toy[0]), str(toy[1]), "--out-dir", str(b)])
    for name in ("observations.csv", "fig3_means.csv", "fig5_counts.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_floors_empty_after_filter(tmp_path, capsys):
    sp, ffp = _write_corpus(tmp_path, np.zeros((3, 100)), "ABC", ["F1,0,3,A;B;C"])
    assert main(["floors", str(sp), str(ffp), "--out-dir", str(tmp_path / "o")]) == 1
    assert "no F-formations left" in capsys.readouterr().err


def test_parse_error_has_location(tmp_path, capsys):
    sp = tmp_path / "s.csv"
    sp.write_text("frame,A,B\n0,1,0\n2,1,0\n")
    ffp = tmp_path / "f.csv"
    ffp.write_text("id,start_s,end_s,members\nF,0,1,A;B\n")
    assert main(["floors", str(sp), str(ffp), "--out-dir", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "non-contiguous frame index at row 3" in err and str(sp) in err


def test_verify_detects_tampering(tmp_path, toy, capsys):
    out = tmp_path / "out"
    main(["floors", str(toy[0]), str(toy[1]), "--out-dir", str(out)])
    assert main(["verify", str(out / "manifest.json")]) == 0
    (out / "fig3_means.csv").write_text("tampered\n")
    assert main(["verify", str(out / "manifest.json")]) == 1


def _observations_file(tmp_path, beta, cards=(4, 5, 6, 7), reps=20, seed=0):
    rng = np.random.default_rng(seed)
    lines = ["fformation_id,cardinality,d_s,y,n_windows"]
    k = 0
    for c in cards:
        for d in range(1, 21):
            for _ in range(reps):
                y = int(rng.poisson(np.exp(beta @ [1, d, c, d * c])))
                lines.append(f"f{k},{c},{d},{min(y, c)},1")
                k += 1
    path = tmp_path / "obs.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_fit_report_recovers(tmp_path, capsys):
    beta = np.array([0.1, 0.005, 0.2, -0.003])
    obs = _observations_file(tmp_path, beta, reps=50)
    out = tmp_path / "fit.ini"
    assert main(["fit", str(obs), "--out", str(out)]) == 0
    cp = read_report(out.read_text())
    assert cp["model"]["converged"] == "true"
    for k, name in enumerate(("Intercept", "Turn-duration", "Cardinality",
                              "Turn-duration:Cardinality")):
        sec = cp[f"coef {name}"]
        assert abs(float(sec["coef"]) - beta[k]) < 3 * float(sec["std_err"])
        assert {"coef", "std_err", "z", "p"} <= set(sec)


def test_fit_intercept_only(tmp_path):
    obs = _observations_file(tmp_path, np.array([0.5, 0, 0, 0]), reps=3)
    ys = [int(r["y"]) for r in _csv(obs)]
    out = tmp_path / "fit.ini"
    assert main(["fit", str(obs), "--out", str(out), "--intercept-only"]) == 0
    coef = float(read_report(out.read_text())["coef Intercept"]["coef"])
    assert abs(coef - np.log(np.mean(ys))) < 1e-9


def test_fit_rank_deficient_exit(tmp_path, capsys):
    path = tmp_path / "obs.csv"
    path.write_text("fformation_id,cardinality,d_s,y,n_windows\n" +
                    "".join(f"f{k},4,{1 + k % 5},1,1\n" for k in range(20)))
    assert main(["fit", str(path), "--out", str(tmp_path / "r.ini")]) == 1
    assert "rank-deficient" in capsys.readouterr().err


def test_fit_non_convergence_exit(tmp_path):
    obs = _observations_file(tmp_path, np.array([0.1, 0.005, 0.2, -0.003]), reps=2)
    out = tmp_path / "fit.ini"
    assert main(["fit", str(obs), "--out", str(out), "--max-iter", "1"]) == 2
    assert read_report(out.read_text())["model"]["converged"] == "false"


def test_posthoc_six_pairs(tmp_path):
    obs = _observations_file(tmp_path, np.array([0.1, 0.005, 0.2, -0.003]))
    out = tmp_path / "posthoc.ini"
    assert main(["posthoc", str(obs), "--out", str(out)]) == 0
    cp = read_report(out.read_text())
    pairs = [s for s in cp.sections() if s.startswith("pair ")]
    assert pairs == ["pair 4-5", "pair 4-6", "pair 4-7", "pair 5-6", "pair 5-7", "pair 6-7"]
    assert cp["posthoc"]["tests"] == "6" and cp["posthoc"]["alpha"] == "0.001"
    sec = cp["pair 4-6"]
    nominal = float(sec["Turn-duration:Cardinality.nominal_p"])
    corrected = sec["Turn-duration:Cardinality.corrected_p"]
    assert float(corrected.rstrip("*")) == pytest.approx(min(1.0, 6 * nominal))
    assert corrected.endswith("*") == (min(1.0, 6 * nominal) < 0.001)


def test_posthoc_two_cardinalities(tmp_path):
    obs = _observations_file(tmp_path, np.array([0.1, 0.005, 0.2, -0.003]), cards=(4, 6))
    out = tmp_path / "posthoc.ini"
    assert main(["posthoc", str(obs), "--out", str(out)]) == 0
    cp = read_report(out.read_text())
    sec = cp["pair 4-6"]
    assert cp["posthoc"]["tests"] == "1"
    assert float(sec["Intercept.corrected_p"].rstrip("*")) == float(sec["Intercept.nominal_p"])


def test_posthoc_insufficient_pair_continues(tmp_path):
    path = _observations_file(tmp_path, np.array([0.1, 0.005, 0.2, -0.003]), cards=(4, 5))
    with open(path, "a") as f:
        f.write("g0,7,1,1,1\n")
    out = tmp_path / "posthoc.ini"
    assert main(["posthoc", str(path), "--out", str(out)]) == 0
    cp = read_report(out.read_text())
    assert cp["pair 4-5"]["status"] == "ok"
    assert cp["pair 4-7"]["status"] == "insufficient data"
    assert cp["posthoc"]["tests"] == "3"


def test_posthoc_needs_two_cardinalities(tmp_path):
    obs = _observations_file(tmp_path, np.array([0.1, 0.0, 0.0, 0.0]), cards=(4,), reps=1)
    assert main(["posthoc", str(obs), "--out", str(tmp_path / "p.ini")]) == 1


def test_synth_then_floors(tmp_path):
    scen = tmp_path / "scenario.ini"
    scen.write_text(scenario_to_ini(SimScenario(n_floors=2, participants_per_floor=3,
                                                duration_s=120, seed=8)))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", str(scen), "--out-dir", str(a)]) == 0
    assert main(["synth", str(scen), "--out-dir", str(b)]) == 0
    for name in ("speaking.csv", "fformations.csv", "ground_truth.csv", "turns.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    gt = _csv(a / "ground_truth.csv")
    assert len({r["floor"] for r in gt}) == 2
    out = tmp_path / "floors"
    assert main(["floors", str(a / "speaking.csv"), str(a / "fformations.csv"),
                 "--out-dir", str(out)]) == 0
    assert len(_csv(out / "observations.csv")) == 20
    assert verify_manifest(a / "manifest.json") == []


def test_synth_invalid_fields(tmp_path, capsys):
    scen = tmp_path / "bad.ini"
    scen.write_text("[scenario]\nn_floors = 0\nwithin_overlap_prob = 2\n")
    assert main(["synth", str(scen), "--out-dir", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "n_floors" in err and "within_overlap_prob" in err


def test_overlaps_fig2_pattern(tmp_path):
    rows = np.zeros((2, 160), np.int8)
    rows[0, 0:40] = 1      # A 0-2 s
    rows[1, 50:90] = 1     # B 2.5-4.5 s  -> gap 0.5
    rows[0, 84:140] = 1    # A 4.2-7 s    -> between-overlap 0.3
    rows[1, 100:110] = 1   # B 5-5.5 s    -> within-overlap 0.5
    sp, ffp = _write_corpus(tmp_path, rows, "AB", ["F,0,8,A;B"])
    out = tmp_path / "ov.csv"
    assert main(["overlaps", str(sp), str(ffp), "--out", str(out)]) == 0
    (row,) = _csv(out)
    assert (row["n_gap"], row["n_between"], row["n_within"]) == ("1", "1", "1")
    assert float(row["mean_s_gap"]) == pytest.approx(0.5)
    assert float(row["mean_s_between"]) == pytest.approx(0.3)
    assert float(row["median_s_within"]) == pytest.approx(0.5)


def test_overlaps_silent(tmp_path):
    sp, ffp = _write_corpus(tmp_path, np.zeros((3, 100)), "ABC", ["F,0,5,A;B;C"])
    out = tmp_path / "ov.csv"
    assert main(["overlaps", str(sp), str(ffp), "--out", str(out)]) == 0
    rows = _csv(out)
    assert len(rows) == 3
    assert all(r["n_gap"] == r["n_between"] == r["n_within"] == "0" for r in rows)
    assert all(r["mean_s_gap"] == "" for r in rows)


def test_overlaps_match_module_recomputation(tmp_path):
    from ffloors.turns import classify_transitions, overlap_stats, segment_turns
    from ffloors.sim import simulate
    matrix, ff, _ = simulate(SimScenario(n_floors=1, participants_per_floor=2,
                                         duration_s=200, seed=33))
    sp = tmp_path / "s.csv"
    sp.write_text(serialize_speaking_csv(matrix))
    ffp = tmp_path / "f.csv"
    ffp.write_text(f"id,start_s,end_s,members\nS0,0,200,F0P0;F0P1\n")
    out = tmp_path / "ov.csv"
    assert main(["overlaps", str(sp), str(ffp), "--out", str(out)]) == 0
    (row,) = _csv(out)
    ta = segment_turns(matrix.track("F0P0"), 20, participant="F0P0")
    tb = segment_turns(matrix.track("F0P1"), 20, participant="F0P1")
    s = overlap_stats(classify_transitions(ta, tb))
    assert int(row["n_gap"]) == s["gap"].count > 0
    assert int(row["n_between"]) == s["between-overlap"].count
    if s["between-overlap"].count:
        assert float(row["mean_s_between"]) == pytest.approx(s["between-overlap"].mean_s)
