"""Lesion screening by nonorthogonal projection with sparse surface offsets.

A sample ``x~`` is explained as ``x(alpha) + offsets * normals`` where
``x(alpha) = U alpha + mu`` lives in a controls PCA subspace and each
correspondence carries one signed offset along its outward surface normal.
The energy

    E = sum_i |x~_i - x_i(alpha) - dx_i n_i(alpha)|^2 + lam * sum_i L1s(dx_i)

is minimised by alternating accept-if-decrease gradient steps on ``alpha``
and on the per-point offsets, with normals re-read from the sample's
distance volume after every coefficient update. ``L1s`` is the
sigmoid-integral smoothing of ``|y|``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .shape_space import PcaSubspace, fit_pca, project, reconstruct
from .shapes import (OutOfBoundsError, ScalarVolume, SimilarityTransform, as_ensemble,
                     rigid_align, sdt_normals, unflatten)

log = logging.getLogger(__name__)

FD_GUARD = 1e-12
LN2 = np.log(2.0)


# ---------------------------------------------------------------------------
# smooth L1
# ---------------------------------------------------------------------------

def smooth_l1(y, beta: float = 1e6):
    """``(log(1 + e^{-beta y}) + log(1 + e^{beta y})) / beta``, evaluated without overflow."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    a = np.abs(np.asarray(y, dtype=float))
    return a + (2.0 / beta) * np.log1p(np.exp(-beta * a))


def grad_smooth_l1(y, beta: float = 1e6):
    """Derivative of :func:`smooth_l1`: ``sigmoid(beta y) - sigmoid(-beta y) = tanh(beta y / 2)``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return np.tanh(0.5 * beta * np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# configuration and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScreeningConfig:
    """Optimiser settings.

    ``alpha_rate`` and ``offset_rate`` default (``None``) to
    ``1e-2 * sqrt(lambda_1)`` and ``1e-2 *`` mean nearest-neighbour spacing
    of the model mean. ``normal_jacobian`` selects how the change of the
    normals with ``alpha`` enters the coefficient gradient: ``"columnwise"``
    (per-mode finite difference across iterations), ``"secant"`` (rank-one
    secant estimate) or ``"none"``.
    """

    lam: float = 0.0
    beta: float = 1e6
    initial_offset: float = 1e-6
    convergence_tol: float = 1e-6
    max_iters: int = 3000
    alpha_rate: float | None = None
    offset_rate: float | None = None
    rate_growth: float = 1.1
    rate_backoff: float = 2.0
    max_rejections: int = 100
    normal_jacobian: str = "columnwise"
    freeze_offsets: bool = False
    align: bool = True
    allow_scale: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.beta < 1:
            raise ValueError("beta must be at least 1")
        if self.convergence_tol <= 0 or self.max_iters < 1:
            raise ValueError("tolerance and max_iters must be positive")
        for name in ("alpha_rate", "offset_rate"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rate_growth < 1 or self.rate_backoff <= 1:
            raise ValueError("rate_growth must be >= 1 and rate_backoff > 1")
        if self.normal_jacobian not in ("columnwise", "secant", "none"):
            raise ValueError(f"unknown normal_jacobian {self.normal_jacobian!r}")


@dataclass
class ScreeningState:
    alpha: np.ndarray
    offsets: np.ndarray
    normals: np.ndarray
    prev_alpha: np.ndarray | None = None
    prev_normals: np.ndarray | None = None


@dataclass(frozen=True)
class ScreeningResult:
    alpha: np.ndarray
    offsets: np.ndarray
    reconstruction: np.ndarray
    energy_trace: np.ndarray
    iterations: int
    converged: bool
    lam: float
    transform: SimilarityTransform | None = None
    orthogonal_alpha: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def closest_control(self) -> np.ndarray:
        return self.reconstruction

    def thresholded(self, half_width: float = 0.005) -> np.ndarray:
        return threshold_offsets(self.offsets, half_width)


# ---------------------------------------------------------------------------
# energy and gradients (model frame)
# ---------------------------------------------------------------------------

def _points(sub: PcaSubspace, v) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(-1, sub.dim)


def residual(sample, state: ScreeningState, sub: PcaSubspace) -> np.ndarray:
    """``x~_i - x_i(alpha) - dx_i n_i`` as an ``(M, d)`` array."""
    x = _points(sub, reconstruct(sub, state.alpha))
    return _points(sub, sample) - x - state.offsets[:, None] * state.normals


def energy(sample, state: ScreeningState, sub: PcaSubspace, cfg: ScreeningConfig) -> float:
    r = residual(sample, state, sub)
    return float(np.sum(r * r) + cfg.lam * np.sum(smooth_l1(state.offsets, cfg.beta)))


def _point_energy(r, offsets, cfg):
    return np.sum(r * r, axis=1) + cfg.lam * smooth_l1(offsets, cfg.beta)


def normal_jacobian(state: ScreeningState, mode: str = "columnwise") -> np.ndarray | None:
    """Finite-difference estimate of d(normals)/d(alpha), shape ``(M * d, K)``.

    ``columnwise``: column k is ``(n_t - n_{t-1}) / (alpha_k,t - alpha_k,t-1)``,
    zeroed where the coefficient moved less than 1e-12.
    """
    if mode == "none" or state.prev_alpha is None or state.prev_normals is None:
        return None
    dn = (state.normals - state.prev_normals).reshape(-1)
    da = state.alpha - state.prev_alpha
    if mode == "secant":
        nrm = da @ da
        if nrm < FD_GUARD ** 2:
            return None
        return np.outer(dn, da / nrm)
    jac = np.zeros((dn.size, da.size))
    ok = np.abs(da) >= FD_GUARD
    jac[:, ok] = dn[:, None] / da[ok]
    return jac


def grad_alpha(sample, state: ScreeningState, sub: PcaSubspace, cfg: ScreeningConfig) -> np.ndarray:
    """Coefficient gradient with the offsets held fixed.

    ``-2 (U + dx o dn/dalpha)^T r``; the normal term is dropped when no
    previous iterate exists.
    """
    r = residual(sample, state, sub).reshape(-1)
    jac = sub.modes
    jn = normal_jacobian(state, cfg.normal_jacobian)
    if jn is not None:
        jac = jac + np.repeat(state.offsets, sub.dim)[:, None] * jn
    return -2.0 * jac.T @ r


def grad_offsets(sample, state: ScreeningState, sub: PcaSubspace, cfg: ScreeningConfig) -> np.ndarray:
    """Per-point offset gradient ``-2 r_i . n_i + lam * L1s'(dx_i)``."""
    r = residual(sample, state, sub)
    return -2.0 * np.sum(r * state.normals, axis=1) + cfg.lam * grad_smooth_l1(state.offsets, cfg.beta)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

class _NormalField:
    """Normals of the sample's volume evaluated at model-frame points."""

    def __init__(self, sdt: ScalarVolume, to_model: SimilarityTransform | None, dim: int):
        if dim != 3:
            raise ValueError("screening needs 3-D shapes")
        self.sdt = sdt
        self.to_model = to_model
        self.to_sample = to_model.inverse() if to_model is not None else None

    def __call__(self, pts_model: np.ndarray) -> np.ndarray:
        if self.to_sample is None:
            return sdt_normals(self.sdt, pts_model)
        n = sdt_normals(self.sdt, self.to_sample.apply(pts_model))
        return self.to_model.apply_vectors(n)


def mean_spacing(points: np.ndarray) -> float:
    """Mean nearest-neighbour distance."""
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.mean(np.sqrt(d2.min(axis=1))))


def _rel(change, ref):
    return float(np.linalg.norm(change) / max(np.linalg.norm(ref), 1e-12))


def screen(sample, sdt: ScalarVolume, sub: PcaSubspace, cfg: ScreeningConfig = ScreeningConfig()) -> ScreeningResult:
    """Project ``sample`` onto the controls subspace with sparse normal offsets.

    ``sample`` is an ``(M, 3)`` point set (or its flattened vector) and
    ``sdt`` its distance volume. With ``cfg.align`` the sample is first
    aligned to the model mean; normals are then read from the volume at the
    back-transformed points and rotated into the model frame.

    Iteration: a coefficient step (kept only if the energy drops, else the
    rate is cut), normals re-evaluated at the reconstruction, then per-point
    offset steps under the same rule. Stops when the relative size of both
    proposed updates falls below ``cfg.convergence_tol``. A trial step that
    leaves the volume is treated as a rejected step; an initial
    reconstruction outside the volume raises :class:`OutOfBoundsError`.
    """
    d = sub.dim
    pts = np.asarray(sample, dtype=float).reshape(-1, d)
    if pts.shape[0] != sub.n_points:
        raise ValueError(f"sample has {pts.shape[0]} points, model has {sub.n_points}")
    to_model = None
    if cfg.align:
        to_model = rigid_align(pts, unflatten(sub.mean, d), cfg.allow_scale)
        pts = to_model.apply(pts)
    target = pts.reshape(-1)
    normals_at = _NormalField(sdt, to_model, d)

    alpha = project(sub, target)
    alpha_orth = alpha.copy()
    x = reconstruct(sub, alpha).reshape(-1, d)
    try:
        normals = normals_at(x)
    except OutOfBoundsError as exc:
        raise OutOfBoundsError(f"initial reconstruction: {exc}") from None
    m = x.shape[0]
    offsets = np.zeros(m) if cfg.freeze_offsets else np.full(m, cfg.initial_offset)
    state = ScreeningState(alpha, offsets, normals)

    lam1 = sub.eigenvalues[0] if sub.n_modes else 1.0
    omega = cfg.alpha_rate if cfg.alpha_rate is not None else 1e-2 * np.sqrt(max(lam1, 1e-12))
    gamma0 = cfg.offset_rate if cfg.offset_rate is not None else 1e-2 * mean_spacing(unflatten(sub.mean, d))
    gamma = np.full(m, gamma0)

    e = energy(target, state, sub, cfg)
    trace = [e]
    converged = False
    rejected_run = 0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        any_accept = False

        # coefficient step
        da = np.zeros_like(state.alpha)
        if sub.n_modes:
            g = grad_alpha(target, state, sub, cfg)
            da = -omega * g
            cand = state.alpha + da
            try:
                n_new = normals_at(reconstruct(sub, cand).reshape(-1, d))
                trial = ScreeningState(cand, state.offsets, n_new, state.alpha, state.normals)
                e_new = energy(target, trial, sub, cfg)
            except OutOfBoundsError:
                e_new = np.inf
            if e_new < e:
                state, e = trial, e_new
                omega *= cfg.rate_growth
                any_accept = True
            else:
                omega /= cfg.rate_backoff

        # offset step, accepted point by point
        dx = np.zeros(m)
        if not cfg.freeze_offsets:
            g = grad_offsets(target, state, sub, cfg)
            dx = -gamma * g
            r = residual(target, state, sub)
            before = _point_energy(r, state.offsets, cfg)
            cand = state.offsets + dx
            r_new = r - dx[:, None] * state.normals
            after = _point_energy(r_new, cand, cfg)
            ok = after < before
            if np.any(ok):
                keep = state.offsets
                state.offsets = np.where(ok, cand, keep)
                e_new = energy(target, state, sub, cfg)
                if e_new < e:
                    e = e_new
                    any_accept = True
                else:
                    # per-point gains lost to rounding in the total
                    state.offsets = keep
                    ok[:] = False
            gamma = np.where(ok, gamma * cfg.rate_growth, gamma / cfg.rate_backoff)

        trace.append(e)
        rejected_run = 0 if any_accept else rejected_run + 1
        if _rel(da, state.alpha) < cfg.convergence_tol and (
                cfg.freeze_offsets or _rel(dx, state.offsets) < cfg.convergence_tol):
            converged = True
            break
        if rejected_run >= cfg.max_rejections:
            log.warning("screening stalled after %d rejected iterations", rejected_run)
            break

    recon = reconstruct(sub, state.alpha)
    return ScreeningResult(state.alpha, state.offsets.copy(), recon, np.array(trace), it, converged,
                           cfg.lam, to_model, alpha_orth,
                           {"alpha_rate": float(omega), "offset_rate_median": float(np.median(gamma))})


# ---------------------------------------------------------------------------
# regularisation weight
# ---------------------------------------------------------------------------

def lambda_from_initial_gradient(sample, sdt: ScalarVolume, sub: PcaSubspace, fraction: float = 0.1,
                                 cfg: ScreeningConfig = ScreeningConfig()) -> float:
    """``fraction`` times the median per-point data-gradient magnitude at the orthogonal projection."""
    d = sub.dim
    pts = np.asarray(sample, dtype=float).reshape(-1, d)
    to_model = rigid_align(pts, unflatten(sub.mean, d), cfg.allow_scale) if cfg.align else None
    if to_model is not None:
        pts = to_model.apply(pts)
    alpha = project(sub, pts)
    normals = _NormalField(sdt, to_model, d)(reconstruct(sub, alpha).reshape(-1, d))
    state = ScreeningState(alpha, np.full(len(pts), cfg.initial_offset), normals)
    r = residual(pts.reshape(-1), state, sub)
    return float(fraction * np.median(np.abs(2.0 * np.sum(r * normals, axis=1))))


def calibrate_lambda(controls, n_modes: int | None = None, variance: float | None = 0.97,
                     margin: float = 1.5, align: bool = True) -> float:
    """Sparsity weight from leave-one-out residuals of held-in controls.

    At the optimum a point's offset is nonzero only when its normal residual
    exceeds ``lam / 2``. Setting ``lam = 2 * margin * max |r_i|`` over every
    control's leave-one-out reconstruction keeps offsets at zero wherever
    the residual is of the size the controls model already leaves behind.
    """
    ens = as_ensemble(controls, min_shapes=3)
    if align:
        from .shapes import generalized_procrustes
        ens = generalized_procrustes(ens).aligned
    worst = 0.0
    for i in range(len(ens)):
        rest = np.delete(ens, i, axis=0)
        kw = {"n_modes": n_modes} if n_modes is not None else {"variance": variance}
        sub = fit_pca(rest, **kw)
        shape = ens[i]
        if align:
            shape = rigid_align(shape, unflatten(sub.mean, sub.dim)).apply(shape)
        r = shape.reshape(-1) - reconstruct(sub, project(sub, shape))
        worst = max(worst, float(np.max(np.linalg.norm(r.reshape(-1, sub.dim), axis=1))))
    return 2.0 * margin * worst


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def threshold_offsets(offsets, half_width: float = 0.005) -> np.ndarray:
    """Zero every offset with ``|dx| <= half_width``."""
    if half_width < 0:
        raise ValueError("half_width must be nonnegative")
    off = np.asarray(offsets, dtype=float)
    return np.where(np.abs(off) <= half_width, 0.0, off)


def group_difference(group_a, group_b):
    """Per-correspondence ``mean(a) - mean(b)`` and its magnitude.

    Groups are ``(N, M, d)`` ensembles (or single ``(M, d)`` shapes).
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    a = a[None] if a.ndim == 2 else a
    b = b[None] if b.ndim == 2 else b
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"groups have shapes {a.shape[1:]} and {b.shape[1:]}")
    diff = a.mean(axis=0) - b.mean(axis=0)
    return diff, np.linalg.norm(diff, axis=1)


def offset_histograms(offset_sets, bins) -> np.ndarray:
    """Histogram every sample's offsets on shared bin edges; returns ``(S, B)`` counts."""
    edges = np.asarray(bins, dtype=float)
    return np.stack([np.histogram(np.asarray(o, dtype=float), bins=edges)[0] for o in offset_sets]).astype(float)


def offset_quantile_curves(curves, quantiles=(0.25, 0.5, 0.75), whisker: float = 1.5) -> dict:
    """Pointwise quantiles across samples plus a median +- whisker*IQR envelope.

    ``curves`` is an ``(S, B)`` array of per-sample histograms (or any
    functional data on a shared grid). Returns a dict with one entry per
    quantile and ``lower``/``upper`` envelope curves.
    """
    c = np.asarray(curves, dtype=float)
    if c.ndim != 2 or c.shape[0] == 0:
        raise ValueError("need a nonempty (samples, bins) array")
    out = {float(q): np.quantile(c, q, axis=0) for q in quantiles}
    q1, med, q3 = np.quantile(c, [0.25, 0.5, 0.75], axis=0)
    iqr = q3 - q1
    out["lower"] = med - whisker * iqr
    out["upper"] = med + whisker * iqr
    return out


def with_lambda(cfg: ScreeningConfig, lam: float) -> ScreeningConfig:
    return replace(cfg, lam=float(lam))
