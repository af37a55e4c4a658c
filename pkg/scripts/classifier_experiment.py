"""Control-vs-lesion classification from screening offsets.

Offsets of synthetic controls and side-bump outliers feed the MLP with a
cross-validated grid search inside every repeated random split.

    python3 scripts/classifier_experiment.py --repeats 10
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from _common import parse_config
from ssmbench import classifier, screening, synthetic
from ssmbench.shape_space import fit_pca
from ssmbench.shapes import generalized_procrustes


@dataclass
class Config:
    n_controls: int = 20
    n_lesions: int = 20
    repeats: int = 10
    test_fraction: float = 1 / 3
    folds: int = 3
    epochs: int = 100
    min_height: float = 2.0
    max_height: float = 4.0
    threshold_features: bool = False
    seed: int = 0
    out: str = "results/classifier"


def offsets(cfg: Config, rng):
    spec = synthetic.BoxBumpSpec()
    ens, _, _ = synthetic.generate_box_bump_ensemble(spec, 20, with_volumes=False)
    sub = fit_pca(generalized_procrustes(ens).aligned, variance=0.97)
    scfg = screening.ScreeningConfig(lam=screening.calibrate_lambda(ens, n_modes=sub.n_modes))
    feats, labels = [], []
    for _ in range(cfg.n_controls):
        pts, vol = synthetic.make_shape(spec, synthetic.ShapeLatent(s=float(rng.uniform())))
        feats.append(screening.screen(pts, vol, sub, scfg).offsets)
        labels.append(0)
    for _ in range(cfg.n_lesions):
        side = synthetic.SideBump(x=float(rng.uniform(-12, -8)),
                                  height=float(rng.uniform(cfg.min_height, cfg.max_height)))
        pts, vol, _ = synthetic.generate_side_bump_outlier(spec, side, s=float(rng.uniform(0.3, 1.0)))
        feats.append(screening.screen(pts, vol, sub, scfg).offsets)
        labels.append(1)
    x = np.array(feats)
    if cfg.threshold_features:
        x = screening.threshold_offsets(x)
    return x, np.array(labels)


def main(cfg: Config):
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    x, y = offsets(cfg, rng)
    rep = classifier.repeated_split_experiment(x, y, cfg.repeats, cfg.test_fraction,
                                               classifier.default_grid(epochs=cfg.epochs), rng, folds=cfg.folds)
    for split, scores in (("train", rep.train), ("test", rep.test)):
        print(split, "  ".join(f"{m}={v[0]:.3f}+-{v[1]:.3f}" for m, v in scores.items()))
    classifier.write_report_csv(f"{cfg.out}/classification.csv", {"synthetic": rep})
    print(f"wrote {cfg.out}/classification.csv")


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
