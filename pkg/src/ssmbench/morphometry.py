"""Landmark transfer between mean and subject space, ring diameters and error statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .shapes import LandmarkSet, SingularConfigurationError, as_point_set, rigid_align


# ---------------------------------------------------------------------------
# thin plate splines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TpsWarp:
    """3-D thin plate spline with kernel ``U(r) = r``.

    ``f(p) = [1, p] @ affine + sum_i weights[i] * |p - source[i]|``.
    """

    source: np.ndarray
    target: np.ndarray
    weights: np.ndarray
    affine: np.ndarray
    reg: float = 0.0

    def __call__(self, points) -> np.ndarray:
        return warp(self, points)


def _kernel(a, b):
    return np.sqrt(np.maximum(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1), 0.0))


def fit_tps(source, target, reg: float = 0.0) -> TpsWarp:
    """Fit the spline taking ``source`` control points onto ``target``.

    With ``reg = 0`` the controls are interpolated exactly. ``reg > 0``
    (mm^2) trades fidelity for smoothness: it is added to the diagonal of the
    conditionally positive definite form ``-U``, which shrinks the kernel
    weights monotonically.
    """
    src = as_point_set(source, dim=3)
    tgt = as_point_set(target, dim=3)
    if src.shape != tgt.shape:
        raise ValueError(f"source {src.shape} and target {tgt.shape} differ")
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    n = len(src)
    if n < 4:
        raise SingularConfigurationError(f"need at least 4 control points, got {n}")
    k = _kernel(src, src)
    scale = max(float(np.max(k)), 1e-300)
    dup = np.argwhere(np.triu(k < 1e-12 * scale, 1))
    if dup.size:
        raise SingularConfigurationError(
            "duplicate control points: " + ", ".join(f"{i}={j}" for i, j in dup[:5]))
    p = np.hstack([np.ones((n, 1)), src])
    centred = src - src.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise SingularConfigurationError(f"control points 0..{n - 1} are coplanar")
    lhs = np.zeros((n + 4, n + 4))
    lhs[:n, :n] = k - reg * np.eye(n)
    lhs[:n, n:] = p
    lhs[n:, :n] = p.T
    rhs = np.zeros((n + 4, 3))
    rhs[:n] = tgt
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        raise SingularConfigurationError("thin plate spline system is singular") from None
    return TpsWarp(src, tgt, sol[:n], sol[n:], float(reg))


def warp(w: TpsWarp, points) -> np.ndarray:
    pts = as_point_set(points, dim=3)
    return np.hstack([np.ones((len(pts), 1)), pts]) @ w.affine + _kernel(pts, w.source) @ w.weights


def infer_landmarks(mean_correspondences, mean_landmarks: LandmarkSet, subject_correspondences,
                    reg: float = 0.0) -> LandmarkSet:
    """Carry mean-space landmarks into a subject via a correspondence-driven TPS."""
    mc = as_point_set(mean_correspondences, dim=3)
    sc = as_point_set(subject_correspondences, dim=3)
    if mc.shape != sc.shape:
        raise ValueError(f"mean has {len(mc)} correspondences, subject has {len(sc)}")
    w = fit_tps(mc, sc, reg)
    return mean_landmarks.map(lambda pts: warp(w, pts))


def mean_space_landmarks(mean_correspondences, subject_correspondences, subject_landmarks,
                         reg: float = 0.0) -> LandmarkSet:
    """Average of every subject's landmarks warped into mean space."""
    mc = as_point_set(mean_correspondences, dim=3)
    warped = []
    for sc, lm in zip(subject_correspondences, subject_landmarks):
        w = fit_tps(sc, mc, reg)
        warped.append(lm.map(lambda pts, w=w: warp(w, pts)))
    if not warped:
        raise ValueError("no subjects given")
    names = warped[0].names
    return LandmarkSet({n: np.mean([lm.curves[n] for lm in warped], axis=0) for n in names})


def procrustes_fit_landmarks(predicted: LandmarkSet, subject_correspondences, mean_correspondences,
                             allow_scale: bool = True) -> LandmarkSet:
    """Move landmarks with the similarity transform that takes mean onto subject correspondences."""
    t = rigid_align(mean_correspondences, subject_correspondences, allow_scale)
    return predicted.map(t.apply)


# ---------------------------------------------------------------------------
# ellipse diameters
# ---------------------------------------------------------------------------

def _fit_conic(xy):
    """Direct least-squares ellipse (Halir & Flusser's stable form of Fitzgibbon's fit)."""
    x, y = xy[:, 0], xy[:, 1]
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1, s2, s3 = d1.T @ d1, d1.T @ d2, d2.T @ d2
    t = -np.linalg.solve(s3, s2.T)
    m = s1 + s2 @ t
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    _, vecs = np.linalg.eig(m)
    vecs = np.real(vecs)
    cond = 4 * vecs[0] * vecs[2] - vecs[1] ** 2
    ok = np.flatnonzero(cond > 0)
    if ok.size == 0:
        raise ValueError("conic fit did not produce an ellipse")
    a1 = vecs[:, ok[np.argmax(cond[ok])]]
    return np.concatenate([a1, t @ a1])


def _conic_axes(c):
    a, b, cc, d, e, f = c
    q = np.array([[a, b / 2], [b / 2, cc]])
    centre = np.linalg.solve(q, -0.5 * np.array([d, e]))
    f0 = f + 0.5 * (d * centre[0] + e * centre[1])
    mu = np.linalg.eigvalsh(q)
    semi = -f0 / mu
    if np.any(semi <= 0):
        raise ValueError("conic fit did not produce an ellipse")
    return np.sort(np.sqrt(semi))[::-1], centre


def fit_ellipse_diameters(ring) -> tuple[float, float]:
    """(max, min) diameter of the best-fit ellipse through an approximately planar ring."""
    pts = np.asarray(ring, dtype=float)
    if pts.ndim != 2 or len(pts) < 5:
        raise ValueError(f"need at least 5 ring points, got {len(pts)}")
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    xy = (pts - c) @ vt[:2].T
    scale = np.sqrt(np.mean(np.sum(xy * xy, axis=1)))
    if scale <= 0:
        raise ValueError("ring points are coincident")
    axes, _ = _conic_axes(_fit_conic(xy / scale))
    return float(2 * axes[0] * scale), float(2 * axes[1] * scale)


# ---------------------------------------------------------------------------
# errors and statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementReport:
    curve_errors: dict
    mean_error: float
    point_errors: dict = field(default_factory=dict)
    truth: np.ndarray | None = None
    predicted: np.ndarray | None = None

    @property
    def abs_differences(self) -> np.ndarray | None:
        if self.truth is None:
            return None
        return np.abs(self.predicted - self.truth)


def landmark_errors(predicted: LandmarkSet, truth: LandmarkSet) -> MeasurementReport:
    """Mean point-to-point Euclidean distance per curve, plus the mean over all points."""
    if predicted.names != truth.names:
        raise ValueError(f"curves differ: {predicted.names} vs {truth.names}")
    per_curve, per_point = {}, {}
    for name in truth.names:
        p, t = predicted.curves[name], truth.curves[name]
        if p.shape != t.shape:
            raise ValueError(f"curve {name!r}: {len(p)} predicted vs {len(t)} true points")
        d = np.linalg.norm(p - t, axis=1)
        per_point[name] = d
        per_curve[name] = float(d.mean())
    overall = float(np.mean(np.concatenate(list(per_point.values()))))
    return MeasurementReport(per_curve, overall, per_point)


def measurement_report(truth, predicted) -> MeasurementReport:
    """Per-sample measurement comparison (absolute differences in mm)."""
    t = np.asarray(truth, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if t.shape != p.shape:
        raise ValueError("truth and predictions differ in length")
    return MeasurementReport({}, float(np.mean(np.abs(p - t))), {}, t, p)


def write_measurement_csv(path, report: MeasurementReport, sample_ids=None) -> None:
    ids = sample_ids if sample_ids is not None else range(len(report.truth))
    with Path(path).open("w") as fh:
        fh.write("sample,truth,predicted,abs_difference\n")
        for i, t, p in zip(ids, report.truth, report.predicted):
            fh.write(f"{i},{float(t)!r},{float(p)!r},{abs(float(p) - float(t))!r}\n")


def write_curve_errors_csv(path, report: MeasurementReport) -> None:
    with Path(path).open("w") as fh:
        fh.write("curve,mean_error_mm\n")
        for name, err in report.curve_errors.items():
            fh.write(f"{name},{err!r}\n")
        fh.write(f"ALL,{report.mean_error!r}\n")


def _betacf(a, b, x, max_iter=300, eps=3e-16):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t."""
    if math.isinf(t):
        return 0.0
    return betainc_reg(0.5 * df, 0.5, df / (df + t * t))


class TTestResult(NamedTuple):
    t: float
    df: int
    p: float
    degenerate: bool = False


def paired_t_test(a, b) -> TTestResult:
    """Paired-sample t-test on ``a - b`` (a difference test, not an equivalence test).

    A zero-variance, nonzero-mean difference gives ``t = +-inf``, ``p = 0``
    and ``degenerate=True``; identical inputs give ``t = 0``, ``p = 1``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, n - 1, 1.0, True)
        return TTestResult(math.copysign(math.inf, mean), n - 1, 0.0, True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, t_two_sided_p(t, n - 1))
