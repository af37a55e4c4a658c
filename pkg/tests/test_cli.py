import numpy as np
import pytest

from ssmbench import cli
from ssmbench import synthetic as S
from ssmbench.shape_space import fit_pca, project, reconstruct
from ssmbench.shapes import load_landmarks, save_landmarks, save_point_set, save_volume


def run(tmp_path, command, config_text="", seed=3, out="out"):
    cfg = tmp_path / "run.ini"
    cfg.write_text(config_text)
    argv = [command, "--config", str(cfg), "--out", str(tmp_path / out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    return cli.main(argv), tmp_path / out


@pytest.fixture(scope="module")
def synth_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("synth")
    code, out = run(base, "synth")
    return code, out, base


def test_synth_default_outputs(synth_run):
    code, out, _ = synth_run
    assert code == 0
    assert len(list((out / "shapes").glob("*.pts"))) == 20
    assert len(list((out / "volumes").glob("*.vol"))) == 20
    assert (out / "manifest.csv").read_text().startswith("file,sha256\n")
    assert not (out / cli.PARTIAL_MARKER).exists()
    assert "seed: 3" in (out / "report.md").read_text()


def test_synth_rerun_same_hashes(synth_run, tmp_path):
    _, out, _ = synth_run
    code, again = run(tmp_path, "synth", "[synth]\noutlier = true\n")
    assert code == 0
    assert (again / "manifest.csv").read_text() == (out / "manifest.csv").read_text()


def test_missing_seed_is_config_error(tmp_path, capsys):
    code, _ = run(tmp_path, "synth", seed=None)
    assert code == cli.EXIT_CONFIG
    assert "seed" in capsys.readouterr().err


def test_seed_from_config_file(tmp_path):
    code, out = run(tmp_path, "evaluate", "[run]\nseed = 5\n[synth]\nn_shapes = 5\n[evaluate]\nspecificity_samples = 10\n",
                    seed=None)
    assert code == 0
    assert "seed: 5" in (out / "report.md").read_text()


def test_unknown_key_is_config_error(tmp_path):
    code, _ = run(tmp_path, "evaluate", "[evaluate]\nbogus = 1\n")
    assert code == cli.EXIT_CONFIG


def test_bad_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["nope"])
    assert exc.value.code == cli.EXIT_CONFIG


def test_missing_input_path_is_config_error(tmp_path):
    code, _ = run(tmp_path, "evaluate", "[evaluate]\ninput = does-not-exist\n")
    assert code == cli.EXIT_CONFIG


def test_evaluate_identical_shapes_zero_compactness(tmp_path):
    d = tmp_path / "same"
    d.mkdir()
    pts = np.random.default_rng(0).normal(size=(10, 3))
    for i in range(4):
        save_point_set(d / f"s{i}.pts", pts)
    code, out = run(tmp_path, "evaluate", "[evaluate]\ninput = same\nspecificity_samples = 20\nalign = false\n")
    assert code == 0
    rows = (out / "metrics_same.csv").read_text().splitlines()
    assert rows[0].startswith("K,compactness")
    assert all(float(r.split(",")[1]) == 0.0 for r in rows[1:])


def test_evaluate_box_bump_rows(tmp_path):
    code, out = run(tmp_path, "evaluate", "[evaluate]\nspecificity_samples = 50\n")
    assert code == 0
    rows = (out / "metrics_box_bump.csv").read_text().splitlines()
    assert len(rows) == 1 + 18  # K = 1 .. N - 2


def test_malformed_point_file_is_data_error(tmp_path, capsys):
    d = tmp_path / "bad"
    d.mkdir()
    for i in range(3):
        save_point_set(d / f"s{i}.pts", np.eye(3) * (i + 1))
    (d / "s1.pts").write_text("1 2 3\n4 five 6\n7 8 9\n")
    code, out = run(tmp_path, "evaluate", "[evaluate]\ninput = bad\n")
    assert code == cli.EXIT_DATA
    assert "s1.pts" in capsys.readouterr().err
    assert (out / cli.PARTIAL_MARKER).exists()


def test_screen_member_is_control_like(synth_run, tmp_path):
    _, synth_out, _ = synth_run
    spec = S.BoxBumpSpec()
    ens = np.stack([np.loadtxt(p) for p in sorted((synth_out / "shapes").glob("*.pts"))])
    pts, vol = S.make_shape(spec, S.ShapeLatent(s=0.37))
    sub = fit_pca(ens, variance=0.97)
    member = reconstruct(sub, project(sub, pts)).reshape(-1, 3)
    save_point_set(tmp_path / "member.pts", member)
    save_volume(tmp_path / "member.vol", vol)
    text = f"[screen]\ncontrols = {synth_out / 'shapes'}\nsample = member.pts\nvolume = member.vol\n"
    code, out = run(tmp_path, "screen", text)
    assert code == 0
    assert "control-like: max |dx| < threshold" in (out / "report.md").read_text()


def test_screen_outlier_flags_lesion(tmp_path):
    code, out = run(tmp_path, "screen")
    assert code == 0
    report = (out / "report.md").read_text()
    assert "abnormal" in report
    assert "[screen]" in report and "lambda = auto" in report


def test_screen_nonconvergence_exit_code(tmp_path):
    code, out = run(tmp_path, "screen", "[screen]\nmax_iters = 2\n")
    assert code == cli.EXIT_NUMERICAL
    assert (out / "offsets.csv").exists()
    assert (out / cli.PARTIAL_MARKER).exists()


def test_infer_landmarks_subject_equal_mean(tmp_path):
    mean = np.random.default_rng(1).normal(size=(30, 3)) * 10
    save_point_set(tmp_path / "mean.pts", mean)
    (tmp_path / "subjects").mkdir()
    (tmp_path / "truth").mkdir()
    save_point_set(tmp_path / "subjects" / "subj.pts", mean)
    from ssmbench.shapes import LandmarkSet
    lm = LandmarkSet({"tip": np.array([[1.0, 2.0, 3.0]]), "ring": np.random.default_rng(2).normal(size=(6, 3))})
    save_landmarks(tmp_path / "mean.lm", lm)
    save_landmarks(tmp_path / "truth" / "subj.lm", lm)
    text = ("[landmarks]\nmean_points = mean.pts\nmean_landmarks = mean.lm\n"
            "subject_points = subjects\ntruth_landmarks = truth\n")
    code, out = run(tmp_path, "infer-landmarks", text)
    assert code == 0
    err = (out / "landmark_errors.csv").read_text().splitlines()[1].split(",")
    assert max(float(v) for v in err[1:]) < 1e-9
    pred = load_landmarks(out / "predicted" / "subj.lm")
    assert np.allclose(pred.curves["tip"], lm.curves["tip"])


def test_classify_from_features_file(tmp_path):
    g = np.random.default_rng(0)
    y = np.repeat([0, 1], 12)
    x = g.normal(scale=0.1, size=(24, 4))
    x[:, 1] += y
    with (tmp_path / "f.csv").open("w") as fh:
        fh.write("label,a,b,c,d\n")
        for lab, row in zip(y, x):
            fh.write(f"{lab}," + ",".join(repr(float(v)) for v in row) + "\n")
    code, out = run(tmp_path, "classify", "[classify]\nfeatures = f.csv\nrepeats = 2\nepochs = 30\n")
    assert code == 0
    lines = (out / "classification.csv").read_text().splitlines()
    assert lines[0] == "dataset,split,metric,mean,std"
    assert {ln.split(",")[2] for ln in lines[1:]} == {"accuracy", "f1", "auc"}


def test_cluster_synthetic(tmp_path):
    code, out = run(tmp_path, "cluster", "[cluster]\nrepresentatives = 4\n")
    assert code == 0
    assert (out / "elbow.csv").read_text().startswith("k,variance_explained\n")
    assert len((out / "representatives.csv").read_text().splitlines()) == 5
    assert "adjusted_rand_index: 1.0" in (out / "report.md").read_text()


def test_sidecar_log_has_timestamps(tmp_path):
    code, out = run(tmp_path, "cluster", "[cluster]\nper_cluster = 5\nk_max = 6\n")
    assert code == 0
    log = (out / "run.log").read_text()
    assert log[:4].isdigit()
    assert "run.log" not in (out / "manifest.csv").read_text()
