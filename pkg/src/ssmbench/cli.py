"""``ssm-bench`` command line: synthetic data, evaluation, clustering, landmarks, screening, classification."""
from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import logging
import os
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import clustering, metrics, morphometry, screening, synthetic
from .shape_space import fit_pca, modes_for_variance, save_spectrum_csv, save_subspace
from .shapes import (ShapeDataError, SingularConfigurationError, generalized_procrustes,
                     load_landmarks, load_point_set, load_volume, save_landmarks, save_point_set,
                     save_volume)

log = logging.getLogger("ssmbench")

LOG_ENV = "SSM_BENCH_LOG"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
PARTIAL_MARKER = "PARTIAL"

DEFAULTS = {
    "run": {"seed": "", "out": "ssm-out"},
    "synth": {"n_shapes": "20", "grid_size": "64", "bump_height": "4.0", "bump_travel": "5.0",
              "outlier": "true", "side_height": "3.0", "outlier_position": "0.5"},
    "evaluate": {"input": "", "variance": "0.97", "k_max": "0", "specificity_samples": "1000",
                 "align": "true"},
    "cluster": {"input": "", "k_max": "8", "restarts": "10", "clusters": "4", "per_cluster": "10",
                "representatives": "0"},
    "landmarks": {"mean_points": "", "mean_landmarks": "", "subject_points": "", "truth_landmarks": "",
                  "reg": "0.0", "procrustes": "false"},
    "screen": {"controls": "", "sample": "", "volume": "", "lambda": "auto", "beta": "1e6",
               "threshold": "0.005", "tolerance": "1e-6", "max_iters": "3000", "variance": "0.97"},
    "classify": {"features": "", "n_controls": "20", "n_lesions": "20", "repeats": "10",
                 "test_fraction": "0.3333333333333333", "folds": "3", "epochs": "100"},
}

PATH_KEYS = {("evaluate", "input"), ("cluster", "input"), ("landmarks", "mean_points"),
             ("landmarks", "mean_landmarks"), ("landmarks", "subject_points"),
             ("landmarks", "truth_landmarks"), ("screen", "controls"), ("screen", "sample"),
             ("screen", "volume"), ("classify", "features")}


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

class RunConfig:
    """Resolved INI config with typed getters; paths are relative to the config file."""

    def __init__(self, parser: configparser.ConfigParser, base: Path):
        self.parser = parser
        self.base = base

    @classmethod
    def load(cls, path=None, seed=None, out=None) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(DEFAULTS)
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file {path} not found")
            try:
                cp.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            base = path.resolve().parent
        unknown = [s for s in cp.sections() if s not in DEFAULTS]
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
        for section in cp.sections():
            extra = set(cp[section]) - set(DEFAULTS[section])
            if extra:
                raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(extra))}")
        if seed is not None:
            cp["run"]["seed"] = str(seed)
        if out is not None:
            cp["run"]["out"] = str(out)
        return cls(cp, base)

    def get(self, section, key) -> str:
        return self.parser[section][key].strip()

    def int(self, section, key) -> int:
        try:
            return int(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer") from None

    def float(self, section, key) -> float:
        try:
            return float(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number") from None

    def bool(self, section, key) -> bool:
        try:
            return self.parser[section].getboolean(key)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be true or false") from None

    def path(self, section, key) -> Path | None:
        raw = self.get(section, key)
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base / p

    def paths(self, section, key) -> list[Path]:
        raw = self.get(section, key)
        return [p if p.is_absolute() else self.base / p
                for p in (Path(s.strip()) for s in raw.split(",") if s.strip())]

    @property
    def seed(self) -> int:
        raw = self.get("run", "seed")
        if not raw:
            raise ConfigError("a root seed is required: set [run] seed or pass --seed")
        try:
            return int(raw)
        except ValueError:
            raise ConfigError("[run] seed must be an integer") from None

    @property
    def out(self) -> Path:
        p = Path(self.get("run", "out"))
        return p if p.is_absolute() else Path.cwd() / p

    def validate(self, sections) -> None:
        _ = self.seed
        for section, key in PATH_KEYS:
            if section not in sections:
                continue
            for p in self.paths(section, key):
                if not p.exists():
                    raise ConfigError(f"[{section}] {key}: {p} does not exist")

    def rng(self, module: str) -> np.random.Generator:
        """Independent stream per module, derived from the root seed."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(module.encode())]))

    def text(self, sections=None) -> str:
        keep = configparser.ConfigParser(interpolation=None)
        for s in self.parser.sections():
            if sections is None or s in sections or s == "run":
                keep[s] = dict(self.parser[s])
        # the output location does not affect results and would break byte-identical reruns
        keep.remove_option("run", "out")
        buf = io.StringIO()
        keep.write(buf)
        return buf.getvalue().rstrip() + "\n"


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------

class Run:
    """Owns an output directory: sidecar log, partial marker, manifest."""

    def __init__(self, out: Path, name: str):
        self.out = out
        self.name = name
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / PARTIAL_MARKER).write_text(f"{name} run in progress or interrupted\n")
        except OSError as exc:
            raise ConfigError(f"cannot write to output directory {out}: {exc}") from None
        self.handler = logging.FileHandler(out / "run.log", mode="w")
        self.handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        logging.getLogger("ssmbench").addHandler(self.handler)

    def finish(self) -> Path:
        manifest = write_manifest(self.out)
        (self.out / PARTIAL_MARKER).unlink(missing_ok=True)
        self.close()
        return manifest

    def close(self):
        logging.getLogger("ssmbench").removeHandler(self.handler)
        self.handler.close()


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path) -> Path:
    skip = {"run.log", "manifest.csv", PARTIAL_MARKER}
    rows = sorted(p for p in out.rglob("*") if p.is_file() and p.name not in skip)
    target = out / "manifest.csv"
    with target.open("w") as fh:
        fh.write("file,sha256\n")
        for p in rows:
            fh.write(f"{p.relative_to(out).as_posix()},{sha256(p)}\n")
    return target


def write_report(path: Path, title: str, cfg: RunConfig, sections, lines) -> None:
    body = [f"# {title}", "", f"seed: {cfg.seed}", "", "## Results", ""]
    body += list(lines)
    body += ["", "## Resolved config", "", "```ini", cfg.text(sections).rstrip(), "```", ""]
    path.write_text("\n".join(body))


def _f(v) -> str:
    return repr(float(v))


def load_shape_dir(paths) -> tuple[list[str], np.ndarray]:
    files = []
    for p in paths:
        files += sorted(p.glob("*.pts")) if p.is_dir() else [p]
    if not files:
        raise ShapeDataError(f"no .pts files under {', '.join(map(str, paths))}")
    shapes = [load_point_set(f) for f in files]
    sizes = {s.shape for s in shapes}
    if len(sizes) != 1:
        raise ShapeDataError(f"point files disagree in size: {sorted(sizes)}")
    return [f.stem for f in files], np.stack(shapes)


def box_spec(cfg: RunConfig) -> synthetic.BoxBumpSpec:
    try:
        return synthetic.BoxBumpSpec(bump_height=cfg.float("synth", "bump_height"),
                                     bump_travel=cfg.float("synth", "bump_travel"),
                                     grid_size=cfg.int("synth", "grid_size"), seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(f"[synth] {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    """Box-bump ensemble, volumes, landmarks and (optionally) the side-bump outlier."""
    spec = box_spec(cfg)
    n = cfg.int("synth", "n_shapes")
    if n < 2:
        raise ConfigError("[synth] n_shapes must be at least 2")
    ens, vols, truth = synthetic.generate_box_bump_ensemble(spec, n)
    for sub in ("shapes", "volumes", "landmarks"):
        (out / sub).mkdir(exist_ok=True)
    with (out / "truth.csv").open("w") as fh:
        fh.write("shape,bump_position,bump_center_x\n")
        for i, (pts, vol, lat, lm) in enumerate(zip(ens, vols, truth.latents, truth.landmarks)):
            name = f"shape_{i:03d}"
            save_point_set(out / "shapes" / f"{name}.pts", pts)
            save_volume(out / "volumes" / f"{name}.vol", vol)
            save_landmarks(out / "landmarks" / f"{name}.lm", lm)
            fh.write(f"{name},{_f(lat.s)},{_f(spec.bump_center(lat.s))}\n")
    result = {"n_shapes": n, "n_points": spec.n_points}
    if cfg.bool("synth", "outlier"):
        side = synthetic.SideBump(height=cfg.float("synth", "side_height"))
        pts, vol, tr = synthetic.generate_side_bump_outlier(spec, side, s=cfg.float("synth", "outlier_position"))
        (out / "outlier").mkdir(exist_ok=True)
        save_point_set(out / "outlier" / "outlier.pts", pts)
        save_volume(out / "outlier" / "outlier.vol", vol)
        with (out / "outlier" / "lesion_mask.csv").open("w") as fh:
            fh.write("point,in_lesion\n")
            fh.writelines(f"{i},{int(m)}\n" for i, m in enumerate(tr.lesion_mask))
        result["lesion_points"] = int(tr.lesion_mask.sum())
    write_report(out / "report.md", "synthetic data", cfg, {"synth"},
                 [f"- {k}: {v}" for k, v in result.items()])
    return result


def _aligned(shapes, align):
    return generalized_procrustes(shapes).aligned if align else shapes


def cmd_evaluate(cfg: RunConfig, out: Path) -> dict:
    """Compactness, generalization and specificity curves, one CSV per model."""
    inputs = cfg.paths("evaluate", "input")
    if inputs:
        models = {p.stem: load_shape_dir([p])[1] for p in inputs}
    else:
        models = {"box_bump": synthetic.generate_box_bump_ensemble(
            box_spec(cfg), cfg.int("synth", "n_shapes"), with_volumes=False)[0]}
    rng = cfg.rng("evaluate")
    align = cfg.bool("evaluate", "align")
    frac = cfg.float("evaluate", "variance")
    j = cfg.int("evaluate", "specificity_samples")
    lines, result = [], {}
    for name, shapes in models.items():
        if len(shapes) < 3:
            raise ShapeDataError(f"model {name}: need at least 3 shapes, got {len(shapes)}")
        ens = _aligned(shapes, align)
        sub = fit_pca(ens)
        k_max = cfg.int("evaluate", "k_max") or min(len(ens) - 2, sub.max_modes)
        comp = metrics.compactness(sub, k_max)
        gen = metrics.generalization(ens, k_max, align=align)
        spec = metrics.specificity(sub, ens, k_max, j, rng)
        metrics.write_metrics_csv(out / f"metrics_{name}.csv", comp, gen, spec)
        save_spectrum_csv(out / f"spectrum_{name}.csv", sub)
        save_subspace(out / f"subspace_{name}.txt", sub)
        k_rule = modes_for_variance(sub.eigenvalues, frac)
        ratio = float(sub.eigenvalues[0] / sub.eigenvalues.sum()) if sub.n_modes else 0.0
        result[name] = {"k_variance": k_rule, "first_mode_ratio": ratio}
        lines.append(f"- {name}: N={len(ens)}, modes for {frac:g} variance = {k_rule}, "
                     f"first-mode ratio = {ratio:.6f}")
    write_report(out / "report.md", "shape model evaluation", cfg, {"evaluate", "synth"}, lines)
    return result


def cmd_cluster(cfg: RunConfig, out: Path) -> dict:
    """Elbow over k-means, labels, cluster means and optional k-medoid representatives."""
    rng = cfg.rng("cluster")
    truth = None
    path = cfg.paths("cluster", "input")
    if path:
        names, shapes = load_shape_dir(path)
    else:
        truth_k = cfg.int("cluster", "clusters")
        shapes, truth = synthetic.generate_cluster_population(
            truth_k, cfg.int("cluster", "per_cluster"), rng=cfg.rng("cluster-data"))
        names = [f"shape_{i:03d}" for i in range(len(shapes))]
    ens = generalized_procrustes(shapes).aligned
    k_max = min(cfg.int("cluster", "k_max"), len(ens))
    restarts = cfg.int("cluster", "restarts")
    k_star, curve = clustering.elbow(ens, k_max, rng, restarts)
    with (out / "elbow.csv").open("w") as fh:
        fh.write("k,variance_explained\n")
        fh.writelines(f"{k},{_f(v)}\n" for k, v in enumerate(curve, start=1))
    res = clustering.kmeans(ens, k_star, rng, restarts)
    with (out / "labels.csv").open("w") as fh:
        fh.write("shape,cluster" + (",true_cluster" if truth is not None else "") + "\n")
        for i, name in enumerate(names):
            fh.write(f"{name},{res.labels[i]}" + (f",{truth[i]}" if truth is not None else "") + "\n")
    (out / "cluster_means").mkdir(exist_ok=True)
    for c, mean in enumerate(clustering.cluster_mean_shapes(ens, res.labels)):
        save_point_set(out / "cluster_means" / f"cluster_{c}.pts", mean)
    result = {"k": k_star, "variance_explained": res.variance_explained}
    if truth is not None:
        result["adjusted_rand_index"] = clustering.adjusted_rand_index(res.labels, truth)
    n_rep = cfg.int("cluster", "representatives")
    if n_rep:
        med = clustering.kmedoids(ens, n_rep, rng, restarts)
        with (out / "representatives.csv").open("w") as fh:
            fh.write("rank,shape\n")
            fh.writelines(f"{r},{names[i]}\n" for r, i in enumerate(med.medoids))
    write_report(out / "report.md", "cluster analysis", cfg, {"cluster"},
                 [f"- {k}: {v}" for k, v in result.items()])
    return result


def cmd_infer_landmarks(cfg: RunConfig, out: Path) -> dict:
    """Warp mean-space landmarks into subjects and score them against truth when given."""
    reg = cfg.float("landmarks", "reg")
    use_procrustes = cfg.bool("landmarks", "procrustes")
    mean_path = cfg.path("landmarks", "mean_points")
    if mean_path is not None:
        mean = load_point_set(mean_path)
        lm_path = cfg.path("landmarks", "mean_landmarks")
        if lm_path is None:
            raise ConfigError("[landmarks] mean_landmarks is required with mean_points")
        mean_lm = load_landmarks(lm_path)
        subj_paths = cfg.paths("landmarks", "subject_points")
        if not subj_paths:
            raise ConfigError("[landmarks] subject_points is required with mean_points")
        names, subjects = load_shape_dir(subj_paths)
        truth_dir = cfg.path("landmarks", "truth_landmarks")
        truths = [load_landmarks(truth_dir / f"{n}.lm") for n in names] if truth_dir else None
    else:
        spec = box_spec(cfg)
        subjects, _, tr = synthetic.generate_box_bump_ensemble(spec, cfg.int("synth", "n_shapes"),
                                                               with_volumes=False)
        names = [f"shape_{i:03d}" for i in range(len(subjects))]
        mean = subjects.mean(axis=0)
        truths = tr.landmarks
        mean_lm = morphometry.mean_space_landmarks(mean, subjects, truths, reg)
        save_point_set(out / "mean.pts", mean)
        save_landmarks(out / "mean.lm", mean_lm)
    (out / "predicted").mkdir(exist_ok=True)
    rows, apex_true, apex_pred = [], [], []
    for i, (name, subj) in enumerate(zip(names, subjects)):
        if use_procrustes:
            pred = morphometry.procrustes_fit_landmarks(mean_lm, subj, mean)
        else:
            pred = morphometry.infer_landmarks(mean, mean_lm, subj, reg)
        save_landmarks(out / "predicted" / f"{name}.lm", pred)
        if truths is not None:
            rep = morphometry.landmark_errors(pred, truths[i])
            rows.append((name, rep))
            if "apex" in pred.names:
                apex_true.append(truths[i].curves["apex"][0, 0])
                apex_pred.append(pred.curves["apex"][0, 0])
    result = {"subjects": len(names)}
    if rows:
        curve_names = rows[0][1].curve_errors.keys()
        with (out / "landmark_errors.csv").open("w") as fh:
            fh.write("subject," + ",".join(curve_names) + ",all\n")
            for name, rep in rows:
                fh.write(name + "," + ",".join(_f(rep.curve_errors[c]) for c in curve_names)
                         + f",{_f(rep.mean_error)}\n")
        result["mean_error_mm"] = float(np.mean([r.mean_error for _, r in rows]))
    if len(apex_true) >= 2:
        report = morphometry.measurement_report(apex_true, apex_pred)
        morphometry.write_measurement_csv(out / "apex_x.csv", report, names)
        t = morphometry.paired_t_test(apex_pred, apex_true)
        result.update(apex_x_mean_abs_diff=report.mean_error, t=t.t, df=t.df, p=t.p)
    write_report(out / "report.md", "landmark inference", cfg, {"landmarks", "synth"},
                 [f"- {k}: {v}" for k, v in result.items()])
    return result


def _screen_config(cfg: RunConfig, lam: float) -> screening.ScreeningConfig:
    try:
        return screening.ScreeningConfig(lam=lam, beta=cfg.float("screen", "beta"),
                                         convergence_tol=cfg.float("screen", "tolerance"),
                                         max_iters=cfg.int("screen", "max_iters"))
    except ValueError as exc:
        raise ConfigError(f"[screen] {exc}") from None


def _controls_model(cfg: RunConfig, controls):
    aligned = generalized_procrustes(controls).aligned
    sub = fit_pca(aligned, variance=cfg.float("screen", "variance"))
    raw = cfg.get("screen", "lambda")
    lam = screening.calibrate_lambda(controls, n_modes=sub.n_modes) if raw == "auto" else cfg.float("screen", "lambda")
    return sub, lam


def cmd_screen(cfg: RunConfig, out: Path) -> dict:
    """Sparse-offset projection of one sample onto the controls model."""
    spec = box_spec(cfg)
    thr = cfg.float("screen", "threshold")
    ctrl_paths = cfg.paths("screen", "controls")
    if ctrl_paths:
        controls = load_shape_dir(ctrl_paths)[1]
    else:
        controls = synthetic.generate_box_bump_ensemble(spec, cfg.int("synth", "n_shapes"), with_volumes=False)[0]
    mask = None
    sample_path = cfg.path("screen", "sample")
    if sample_path is not None:
        vol_path = cfg.path("screen", "volume")
        if vol_path is None:
            raise ConfigError("[screen] volume is required with sample")
        sample, vol = load_point_set(sample_path), load_volume(vol_path)
    else:
        side = synthetic.SideBump(height=cfg.float("synth", "side_height"))
        sample, vol, tr = synthetic.generate_side_bump_outlier(spec, side, s=cfg.float("synth", "outlier_position"))
        mask = tr.lesion_mask
    sub, lam = _controls_model(cfg, controls)
    res = screening.screen(sample, vol, sub, _screen_config(cfg, lam))
    th = res.thresholded(thr)
    with (out / "offsets.csv").open("w") as fh:
        fh.write("point,offset,thresholded" + (",in_lesion" if mask is not None else "") + "\n")
        for i, (o, t) in enumerate(zip(res.offsets, th)):
            fh.write(f"{i},{_f(o)},{_f(t)}" + (f",{int(mask[i])}" if mask is not None else "") + "\n")
    with (out / "energy.csv").open("w") as fh:
        fh.write("iteration,energy\n")
        fh.writelines(f"{i},{_f(e)}\n" for i, e in enumerate(res.energy_trace))
    save_point_set(out / "closest_control.pts", res.reconstruction.reshape(-1, 3))
    max_off = float(np.max(np.abs(res.offsets)))
    result = {"lambda": lam, "modes": sub.n_modes, "iterations": res.iterations, "converged": res.converged,
              "max_abs_offset": max_off, "nonzero_offsets": int(np.count_nonzero(th))}
    verdict = (f"control-like: max |dx| < threshold ({thr:g})" if max_off < thr
               else f"abnormal: {result['nonzero_offsets']} offsets beyond threshold ({thr:g})")
    if mask is not None:
        nz = th != 0
        result["nonzero_in_lesion"] = int(np.sum(nz & mask))
    write_report(out / "report.md", "lesion screening", cfg, {"screen", "synth"},
                 [verdict, ""] + [f"- {k}: {v}" for k, v in result.items()])
    if not res.converged:
        raise NumericalFailure(f"screening stopped after {res.iterations} iterations without converging")
    result["verdict"] = verdict
    return result


def _synthetic_offsets(cfg: RunConfig):
    spec = box_spec(cfg)
    rng = cfg.rng("classify-data")
    controls = synthetic.generate_box_bump_ensemble(spec, cfg.int("synth", "n_shapes"), with_volumes=False)[0]
    sub, lam = _controls_model(cfg, controls)
    scfg = _screen_config(cfg, lam)
    feats, labels, stalled = [], [], 0
    for _ in range(cfg.int("classify", "n_controls")):
        pts, vol = synthetic.make_shape(spec, synthetic.ShapeLatent(s=float(rng.uniform())))
        res = screening.screen(pts, vol, sub, scfg)
        stalled += not res.converged
        feats.append(res.offsets)
        labels.append(0)
    for _ in range(cfg.int("classify", "n_lesions")):
        side = synthetic.SideBump(x=float(rng.uniform(-12, -8)), height=float(rng.uniform(2, 4)))
        pts, vol, _ = synthetic.generate_side_bump_outlier(spec, side, s=float(rng.uniform(0.3, 1.0)))
        res = screening.screen(pts, vol, sub, scfg)
        stalled += not res.converged
        feats.append(res.offsets)
        labels.append(1)
    if stalled:
        log.warning("%d screening runs did not converge", stalled)
    return np.array(feats), np.array(labels)


def load_features(path: Path):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ShapeDataError(f"{path}: {exc}") from None
    return data[:, 1:], data[:, 0].astype(int)


def cmd_classify(cfg: RunConfig, out: Path) -> dict:
    """Repeated stratified splits with a three-fold CV grid search on offset features."""
    path = cfg.path("classify", "features")
    if path is not None:
        x, y = load_features(path)
    else:
        x, y = _synthetic_offsets(cfg)
        with (out / "features.csv").open("w") as fh:
            fh.write("label," + ",".join(f"p{i}" for i in range(x.shape[1])) + "\n")
            for row, lab in zip(x, y):
                fh.write(f"{lab}," + ",".join(_f(v) for v in row) + "\n")
    grid = clf.default_grid(epochs=cfg.int("classify", "epochs"))
    rep = clf.repeated_split_experiment(x, y, cfg.int("classify", "repeats"),
                                        cfg.float("classify", "test_fraction"), grid,
                                        cfg.rng("classify"), folds=cfg.int("classify", "folds"))
    clf.write_report_csv(out / "classification.csv", {"offsets": rep})
    lines = [f"- {split} {m}: {rep_m:.4f} +- {rep_s:.4f}" for _, split, m, rep_m, rep_s in rep.rows()]
    if rep.std_by_convention:
        lines.append("- single repeat: std reported as 0 by convention")
    if rep.auc_missing:
        lines.append(f"- AUC absent in {rep.auc_missing} single-class test sets")
    write_report(out / "report.md", "offset classification", cfg, {"classify", "screen", "synth"}, lines)
    return {"test_accuracy": rep.test["accuracy"][0], "test_auc": rep.test["auc"][0]}


def cmd_repro(cfg: RunConfig, out: Path) -> dict:
    """Every stage on synthetic data, each in its own subdirectory, plus a summary bundle."""
    summary = {}
    for name, fn in STAGES:
        log.info("repro stage %s", name)
        sub = out / name
        sub.mkdir(exist_ok=True)
        summary[name] = fn(cfg, sub)
    with (out / "summary.csv").open("w") as fh:
        fh.write("stage,key,value\n")
        for stage, res in summary.items():
            for key, val in _flat(res):
                fh.write(f"{stage},{key},{val}\n")
    write_report(out / "report.md", "reproduction bundle", cfg, None,
                 [f"- {s}/{k}: {v}" for s, res in summary.items() for k, v in _flat(res)])
    return summary


def _flat(res, prefix=""):
    for k, v in res.items():
        if isinstance(v, dict):
            yield from _flat(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}", (repr(float(v)) if isinstance(v, (float, np.floating)) else v)


STAGES = [("synth", cmd_synth), ("evaluate", cmd_evaluate), ("cluster", cmd_cluster),
          ("landmarks", cmd_infer_landmarks), ("screen", cmd_screen), ("classify", cmd_classify)]

COMMANDS = {
    "synth": (cmd_synth, {"synth"}),
    "evaluate": (cmd_evaluate, {"evaluate", "synth"}),
    "cluster": (cmd_cluster, {"cluster"}),
    "infer-landmarks": (cmd_infer_landmarks, {"landmarks", "synth"}),
    "screen": (cmd_screen, {"screen", "synth"}),
    "classify": (cmd_classify, {"classify", "screen", "synth"}),
    "repro": (cmd_repro, set(DEFAULTS)),
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssm-bench", description="Statistical shape model benchmarking on point correspondences.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
    p.add_argument("--out", help="output directory (overrides [run] out)")
    return p


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logger = logging.getLogger("ssmbench")
    logger.setLevel(logging.DEBUG)
    if not any(isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
               for h in logger.handlers):
        h = logging.StreamHandler(sys.stderr)
        h.setLevel(getattr(logging, level, logging.WARNING))
        h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        logger.addHandler(h)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    fn, sections = COMMANDS[args.command]
    run = None
    try:
        cfg = RunConfig.load(args.config, args.seed, args.out)
        cfg.validate(sections)
        run = Run(cfg.out, args.command)
        start = time.monotonic()
        log.info("%s seed=%d out=%s", args.command, cfg.seed, cfg.out)
        fn(cfg, cfg.out)
        manifest = run.finish()
        log.info("%s finished in %.1f s", args.command, time.monotonic() - start)
        run = None
        sys.stdout.write(manifest.read_text())
        return EXIT_OK
    except ConfigError as exc:
        print(f"ssm-bench: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        if run is not None:
            write_manifest(run.out)
        print(f"ssm-bench: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"ssm-bench: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ShapeDataError, SingularConfigurationError, OSError, ValueError) as exc:
        print(f"ssm-bench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if run is not None:
            run.close()


if __name__ == "__main__":
    sys.exit(main())
