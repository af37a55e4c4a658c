"""Compactness, generalization and specificity curves as functions of mode count."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .shape_space import PcaSubspace, fit_pca, sample_random
from .shapes import as_ensemble, rigid_align, unflatten, flatten


@dataclass(frozen=True)
class MetricCurve:
    """Metric value for ``K = 1 .. len(values)``."""

    name: str
    values: np.ndarray
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("a metric curve needs at least one value")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError(f"{self.name}: values must be finite and nonnegative")
        object.__setattr__(self, "values", vals)

    @property
    def ks(self) -> np.ndarray:
        return np.arange(1, self.values.size + 1)

    def __getitem__(self, k: int) -> float:
        """Value at mode count ``k`` (1-based)."""
        if not 1 <= k <= self.values.size:
            raise IndexError(f"K={k} outside 1..{self.values.size}")
        return float(self.values[k - 1])

    def rms_per_point(self, n_points: int) -> np.ndarray:
        """sqrt(value / M): squared-distance curves as a per-point RMS in mm."""
        return np.sqrt(self.values / n_points)


def compactness(sub: PcaSubspace, k_max: int) -> MetricCurve:
    """Cumulative eigenvalue sum; trailing zero-variance modes contribute 0."""
    if not 1 <= k_max <= sub.max_modes:
        raise ValueError(f"k_max={k_max} outside 1..{sub.max_modes}")
    lam = np.zeros(k_max)
    k = min(k_max, sub.n_modes)
    lam[:k] = sub.eigenvalues[:k]
    return MetricCurve("compactness", np.cumsum(lam))


def _reconstruct_k(sub: PcaSubspace, x: np.ndarray, k: int) -> np.ndarray:
    k = min(k, sub.n_modes)
    u = sub.modes[:, :k]
    return sub.mean + u @ (u.T @ (x - sub.mean))


def generalization(shapes, k_max: int, align: bool = False, allow_scale: bool = False) -> MetricCurve:
    """Leave-one-out mean squared reconstruction error.

    For each shape a model is fitted to the remaining ``N - 1`` and the
    left-out shape is reconstructed with ``K`` modes. With ``align`` the
    left-out shape is first Procrustes-aligned to that model's mean (use it
    when the ensemble has been aligned as a whole beforehand).
    """
    ens = as_ensemble(shapes, min_shapes=3)
    n, m, d = ens.shape
    if not 1 <= k_max <= n - 2:
        raise ValueError(f"k_max={k_max} outside 1..{n - 2} (leave-one-out rank)")
    err = np.zeros((n, k_max))
    for i in range(n):
        rest = np.delete(ens, i, axis=0)
        sub = fit_pca(rest)
        shape = ens[i]
        if align:
            shape = rigid_align(shape, unflatten(sub.mean, d), allow_scale).apply(shape)
        x = flatten(shape)
        for k in range(1, k_max + 1):
            r = _reconstruct_k(sub, x, k) - x
            err[i, k - 1] = r @ r
    return MetricCurve("generalization", err.mean(axis=0), err.std(axis=0, ddof=1) / np.sqrt(n))


def specificity(sub: PcaSubspace, train, k_max: int, n_samples: int = 1000,
                rng: np.random.Generator | None = None, seed: int | None = None) -> MetricCurve:
    """Mean squared distance from model samples to their nearest training shape.

    For each K, ``n_samples`` shapes are drawn with the first K modes
    (``rng.standard_normal((J, K))``, K ascending).
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    train = as_ensemble(train)
    tv = train.reshape(train.shape[0], -1)
    if tv.shape[1] != sub.mean.size:
        raise ValueError("training shapes do not match the subspace dimension")
    if not 1 <= k_max <= sub.max_modes:
        raise ValueError(f"k_max={k_max} outside 1..{sub.max_modes}")
    if rng is None:
        rng = np.random.default_rng(seed)
    tn = np.sum(tv * tv, axis=1)
    vals, ses = np.zeros(k_max), np.zeros(k_max)
    for k in range(1, k_max + 1):
        kk = min(k, sub.n_modes)
        z = np.atleast_2d(sample_random(sub, kk, rng, size=n_samples))
        if kk < k:
            # zero-variance modes still consume draws so curves stay seed-aligned
            rng.standard_normal((n_samples, k - kk))
        d2 = np.sum(z * z, axis=1)[:, None] - 2 * z @ tv.T + tn[None, :]
        best = np.maximum(d2.min(axis=1), 0.0)
        vals[k - 1] = best.mean()
        ses[k - 1] = best.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else 0.0
    return MetricCurve("specificity", vals, ses, {"n_samples": n_samples, "seed": seed})


def compare_curves(a: MetricCurve, b: MetricCurve) -> list[dict]:
    """Per-K comparison of two models' curves of the same metric.

    Both orderings are reported: ``a_lower`` (the smaller-is-better reading
    used for generalization/specificity and the formula-based compactness
    ordering) and ``a_higher`` (the cumulative-variance reading of
    compactness plots).
    """
    if a.name != b.name:
        raise ValueError(f"cannot compare {a.name} with {b.name}")
    k = min(a.values.size, b.values.size)
    return [{"K": j + 1, "a": float(a.values[j]), "b": float(b.values[j]),
             "a_lower": bool(a.values[j] < b.values[j]),
             "a_higher": bool(a.values[j] > b.values[j])} for j in range(k)]


def write_metrics_csv(path, comp: MetricCurve, gen: MetricCurve, spec: MetricCurve) -> None:
    """Columns ``K, compactness, generalization, specificity, specificity_stderr``."""
    k = min(comp.values.size, gen.values.size, spec.values.size)
    se = spec.stderr if spec.stderr is not None else np.zeros(spec.values.size)
    with Path(path).open("w") as fh:
        fh.write("K,compactness,generalization,specificity,specificity_stderr\n")
        for j in range(k):
            row = (comp.values[j], gen.values[j], spec.values[j], se[j])
            fh.write(f"{j + 1}," + ",".join(repr(float(v)) for v in row) + "\n")
