"""PCA shape space: fit, project, reconstruct and sample."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .shapes import as_ensemble

# modes whose eigenvalue falls below this fraction of the largest are noise
EIG_RELATIVE_FLOOR = 1e-12
# ... as are modes with standard deviation below this fraction of the coordinate scale
EIG_ABSOLUTE_SCALE = 1e-12


class RankError(ValueError):
    """Requested more modes than the data support."""


@dataclass(frozen=True)
class PcaSubspace:
    """Mean shape vector, orthonormal modes (columns) and their variances.

    ``max_modes`` is ``min(N - 1, dM)`` of the training data, i.e. the mode
    count a metric may ask for even when trailing eigenvalues are zero.
    """

    mean: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float
    dim: int
    n_samples: int

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    @property
    def n_points(self) -> int:
        return self.mean.size // self.dim

    @property
    def max_modes(self) -> int:
        return min(self.n_samples - 1, self.mean.size)

    def truncate(self, k: int) -> "PcaSubspace":
        if not 0 <= k <= self.n_modes:
            raise RankError(f"cannot keep {k} of {self.n_modes} modes")
        return PcaSubspace(self.mean, self.modes[:, :k], self.eigenvalues[:k],
                           self.total_variance, self.dim, self.n_samples)

    def explained_fraction(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros(self.n_modes)
        return np.cumsum(self.eigenvalues) / self.total_variance


def modes_for_variance(eigenvalues, fraction: float) -> int:
    """Smallest K whose leading eigenvalues explain at least ``fraction`` of the total."""
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if total <= 0:
        return 0
    cum = np.cumsum(lam) / total
    # small slack so a spectrum that hits the fraction exactly is not pushed one mode further
    return int(np.searchsorted(cum, fraction - 1e-12) + 1)


def fit_pca(shapes, n_modes: int | None = None, variance: float | None = None) -> PcaSubspace:
    """Principal components of an ``(N, M, d)`` ensemble.

    Pass at most one of ``n_modes`` (fixed K) or ``variance`` (fraction of
    total variance to explain). With neither, every non-negligible mode is
    kept. Covariance uses the ``N - 1`` divisor; when ``N < dM`` the
    decomposition runs on the ``N x N`` Gram matrix.
    """
    if n_modes is not None and variance is not None:
        raise ValueError("give either n_modes or variance, not both")
    ens = as_ensemble(shapes, min_shapes=2)
    n, m, d = ens.shape
    x = ens.reshape(n, m * d)
    mean = x.mean(axis=0)
    xc = x - mean
    floor = (EIG_ABSOLUTE_SCALE * max(1.0, float(np.max(np.abs(x))))) ** 2

    if n < m * d:
        gram = xc @ xc.T / (n - 1)
        w, v = np.linalg.eigh(gram)
        order = np.argsort(w)[::-1]
        w, v = np.clip(w[order], 0.0, None), v[:, order]
        keep = w > max(EIG_RELATIVE_FLOOR * w[0], floor)
        w, v = w[keep], v[:, keep]
        modes = xc.T @ v / np.sqrt((n - 1) * w)
    else:
        cov = xc.T @ xc / (n - 1)
        w, modes = np.linalg.eigh(cov)
        order = np.argsort(w)[::-1]
        w, modes = np.clip(w[order], 0.0, None), modes[:, order]
        keep = w > max(EIG_RELATIVE_FLOOR * w[0], floor)
        w, modes = w[keep], modes[:, keep]

    if modes.shape[1]:
        # re-orthonormalise (Gram route loses a little precision) and fix signs
        q, r = np.linalg.qr(modes)
        modes = q * np.sign(np.diag(r))
        pivot = np.argmax(np.abs(modes), axis=0)
        modes = modes * np.sign(modes[pivot, np.arange(modes.shape[1])])

    total = float(np.sum(xc * xc) / (n - 1)) if w.size else 0.0
    sub = PcaSubspace(mean, modes, w, total, d, n)

    if variance is not None:
        if not 0.0 < variance <= 1.0:
            raise ValueError(f"variance fraction must be in (0, 1], got {variance}")
        return sub.truncate(min(modes_for_variance(w, variance), sub.n_modes))
    if n_modes is not None:
        if n_modes < 0 or n_modes > min(n - 1, m * d):
            raise RankError(f"n_modes={n_modes} outside [0, {min(n - 1, m * d)}]")
        if n_modes > sub.n_modes:
            raise RankError(f"requested {n_modes} modes but the data have rank {sub.n_modes}")
        return sub.truncate(n_modes)
    return sub


def _check_vector(sub: PcaSubspace, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x.reshape(-1)
    if x.shape != sub.mean.shape:
        raise ValueError(f"shape vector has length {x.size}, subspace expects {sub.mean.size}")
    return x


def project(sub: PcaSubspace, x) -> np.ndarray:
    """Orthogonal projection coefficients ``U^T (x - mu)``; accepts a vector or an (M, d) array."""
    return sub.modes.T @ (_check_vector(sub, x) - sub.mean)


def reconstruct(sub: PcaSubspace, alpha) -> np.ndarray:
    """``U alpha + mu``."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size != sub.n_modes:
        raise ValueError(f"got {alpha.size} coefficients for {sub.n_modes} modes")
    return sub.modes @ alpha + sub.mean


def sample_mode(sub: PcaSubspace, k: int, t: float) -> np.ndarray:
    """Shape ``t`` standard deviations along mode ``k`` (1-based)."""
    if not 1 <= k <= sub.n_modes:
        raise IndexError(f"mode {k} outside 1..{sub.n_modes}")
    return sub.mean + t * np.sqrt(sub.eigenvalues[k - 1]) * sub.modes[:, k - 1]


def sample_random(sub: PcaSubspace, n_use: int, rng: np.random.Generator, size: int | None = None):
    """Draw shapes from the Gaussian model restricted to the first ``n_use`` modes.

    Returns one vector, or a ``(size, dM)`` array when ``size`` is given.
    Consumes ``size * n_use`` standard normals from ``rng`` in row order.
    """
    if not 0 <= n_use <= sub.n_modes:
        raise IndexError(f"n_use={n_use} outside 0..{sub.n_modes}")
    rows = 1 if size is None else size
    z = rng.standard_normal((rows, n_use))
    out = sub.mean + (z * np.sqrt(sub.eigenvalues[:n_use])) @ sub.modes[:, :n_use].T
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def save_subspace(path, sub: PcaSubspace) -> None:
    """Text format: header line, mean row, eigenvalue row, then one row per mode."""
    with Path(path).open("w") as fh:
        fh.write(f"PCASUB1 {sub.dim} {sub.n_samples} {sub.n_modes} {sub.mean.size} {sub.total_variance!r}\n")
        fh.write(" ".join(repr(float(v)) for v in sub.mean) + "\n")
        fh.write(" ".join(repr(float(v)) for v in sub.eigenvalues) + "\n")
        for j in range(sub.n_modes):
            fh.write(" ".join(repr(float(v)) for v in sub.modes[:, j]) + "\n")


def load_subspace(path) -> PcaSubspace:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split()
    if head[0] != "PCASUB1":
        raise ValueError(f"{path}: not a subspace file")
    dim, n_samples, k, length = (int(v) for v in head[1:5])
    total = float(head[5])
    mean = np.array(lines[1].split(), dtype=float)
    eig = np.array(lines[2].split(), dtype=float) if k else np.zeros(0)
    modes = np.array([ln.split() for ln in lines[3:3 + k]], dtype=float).T if k else np.zeros((length, 0))
    return PcaSubspace(mean, modes.reshape(length, k), eig, total, dim, n_samples)


def save_spectrum_csv(path, sub: PcaSubspace) -> None:
    frac = sub.explained_fraction()
    with Path(path).open("w") as fh:
        fh.write("mode,eigenvalue,cumulative_fraction\n")
        for j, (lam, f) in enumerate(zip(sub.eigenvalues, frac), start=1):
            fh.write(f"{j},{float(lam)!r},{float(f)!r}\n")
