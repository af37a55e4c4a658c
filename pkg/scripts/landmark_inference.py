"""Landmark transfer by thin-plate spline versus a plain similarity fit.

Sweeps the spline regularization and reports the mean landmark error and the
paired t-test on the apex x coordinate.

    python3 scripts/landmark_inference.py --regs "0,0.1,1,10"
"""
from dataclasses import dataclass

import numpy as np

from _common import parse_config, write_rows
from ssmbench import morphometry, synthetic


@dataclass
class Config:
    n_shapes: int = 20
    regs: str = "0,0.01,0.1,1,10"
    out: str = "results/landmarks"


def score(subjects, truths, predict):
    errs, apex_t, apex_p = [], [], []
    for subj, truth in zip(subjects, truths):
        pred = predict(subj)
        errs.append(morphometry.landmark_errors(pred, truth).mean_error)
        apex_t.append(truth.curves["apex"][0, 0])
        apex_p.append(pred.curves["apex"][0, 0])
    return float(np.mean(errs)), morphometry.paired_t_test(apex_p, apex_t)


def main(cfg: Config):
    spec = synthetic.BoxBumpSpec()
    subjects, _, tr = synthetic.generate_box_bump_ensemble(spec, cfg.n_shapes, with_volumes=False)
    mean = subjects.mean(axis=0)
    rows = []
    for reg in (float(r) for r in cfg.regs.split(",")):
        mean_lm = morphometry.mean_space_landmarks(mean, subjects, tr.landmarks, reg)
        err, t = score(subjects, tr.landmarks, lambda s: morphometry.infer_landmarks(mean, mean_lm, s, reg))
        rows.append((f"tps reg={reg:g}", f"{err:.4f}", f"{t.t:.4f}", f"{t.p:.4g}"))
    mean_lm = morphometry.mean_space_landmarks(mean, subjects, tr.landmarks)
    err, t = score(subjects, tr.landmarks, lambda s: morphometry.procrustes_fit_landmarks(mean_lm, s, mean))
    rows.append(("similarity", f"{err:.4f}", f"{t.t:.4f}", f"{t.p:.4g}"))
    for r in rows:
        print(f"{r[0]:>16}  mean error {r[1]} mm  apex t={r[2]} p={r[3]}")
    write_rows(f"{cfg.out}/landmarks.csv", ["method", "mean_error_mm", "apex_t", "apex_p"], rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
