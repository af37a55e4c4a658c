"""Geometric value types, file I/O and alignment shared across the package.

Point sets are plain ``(M, d)`` float arrays and ensembles are ``(N, M, d)``
arrays; ordering of points implies correspondence. The helpers here validate
and convert, they do not wrap arrays in container classes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


class ShapeDataError(ValueError):
    """Malformed or inconsistent shape data."""


class SingularConfigurationError(ShapeDataError):
    """Geometry too degenerate for the requested operation."""


class OutOfBoundsError(ShapeDataError):
    """A query point falls outside the valid region of a volume."""


class DegenerateNormalError(ShapeDataError):
    """Gradient of a distance field vanished at a query point."""


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

def as_point_set(points, dim: int | None = None) -> np.ndarray:
    """Validate ``points`` as an ``(M, d)`` array of finite coordinates."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ShapeDataError(f"point set must be (M, d) with M >= 1, got shape {pts.shape}")
    if pts.shape[1] not in (2, 3):
        raise ShapeDataError(f"point dimension must be 2 or 3, got {pts.shape[1]}")
    if dim is not None and pts.shape[1] != dim:
        raise ShapeDataError(f"expected {dim}-D points, got {pts.shape[1]}-D")
    if not np.all(np.isfinite(pts)):
        raise ShapeDataError("point set contains non-finite coordinates")
    return pts


def as_ensemble(shapes, min_shapes: int = 1) -> np.ndarray:
    """Stack a sequence of point sets into an ``(N, M, d)`` ensemble."""
    if isinstance(shapes, np.ndarray) and shapes.ndim == 3:
        ens = np.asarray(shapes, dtype=float)
    else:
        shapes = [as_point_set(s) for s in shapes]
        if not shapes:
            raise ShapeDataError("empty ensemble")
        ref = shapes[0].shape
        for n, s in enumerate(shapes):
            if s.shape != ref:
                raise ShapeDataError(f"shape {n} has {s.shape}, expected {ref} like shape 0")
        ens = np.stack(shapes)
    if ens.shape[0] < min_shapes:
        raise ShapeDataError(f"need at least {min_shapes} shapes, got {ens.shape[0]}")
    if ens.shape[2] not in (2, 3):
        raise ShapeDataError(f"point dimension must be 2 or 3, got {ens.shape[2]}")
    if not np.all(np.isfinite(ens)):
        raise ShapeDataError("ensemble contains non-finite coordinates")
    return ens


def flatten(points) -> np.ndarray:
    """Interleave an ``(M, d)`` point set into a shape vector ``x1, y1, z1, x2, ...``."""
    return as_point_set(points).reshape(-1).copy()


def unflatten(vector, dim: int) -> np.ndarray:
    """Inverse of :func:`flatten`."""
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.size == 0 or v.size % dim:
        raise ShapeDataError(f"vector of length {v.size} is not divisible by dimension {dim}")
    return v.reshape(-1, dim).copy()


def mirror(points, axis: int = 0) -> np.ndarray:
    """Flip coordinates along ``axis`` (used for left/right anatomy pooling)."""
    out = np.array(points, dtype=float)
    out[..., axis] *= -1.0
    return out


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        d = r.shape[0]
        if r.shape != (d, d) or not np.allclose(r.T @ r, np.eye(d), atol=1e-10):
            raise ShapeDataError("rotation must be orthonormal")
        if np.linalg.det(r) < 0:
            raise ShapeDataError("rotation must be proper (det = +1)")
        if not self.scale > 0:
            raise ShapeDataError("scale must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(d))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls, dim: int = 3) -> "SimilarityTransform":
        return cls(np.eye(dim), np.zeros(dim), 1.0)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        """Rotate direction vectors (no translation, no scale)."""
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(rt, -(rt @ self.translation) / self.scale, 1.0 / self.scale)


@dataclass(frozen=True)
class LandmarkSet:
    """Named curves of ordered 3-D landmarks, in insertion order."""

    curves: dict

    def __post_init__(self):
        clean = {}
        for name, pts in dict(self.curves).items():
            name = str(name)
            if not name or any(c.isspace() for c in name):
                raise ShapeDataError(f"curve name {name!r} must be non-empty without whitespace")
            arr = np.asarray(pts, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            if arr.shape[0] < 1 or arr.shape[1] != 3:
                raise ShapeDataError(f"curve {name!r} must be a nonempty (n, 3) array")
            if not np.all(np.isfinite(arr)):
                raise ShapeDataError(f"curve {name!r} has non-finite coordinates")
            clean[name] = arr
        if not clean:
            raise ShapeDataError("landmark set has no curves")
        object.__setattr__(self, "curves", clean)

    @property
    def names(self) -> list[str]:
        return list(self.curves)

    def stacked(self) -> np.ndarray:
        return np.concatenate(list(self.curves.values()))

    def map(self, fn) -> "LandmarkSet":
        """Apply ``fn`` to all landmarks at once, keeping curve names and order."""
        flat = np.asarray(fn(self.stacked()), dtype=float)
        out, start = {}, 0
        for name, pts in self.curves.items():
            out[name] = flat[start:start + len(pts)]
            start += len(pts)
        return LandmarkSet(out)


@dataclass(frozen=True)
class ScalarVolume:
    """Regular 3-D grid of scalar samples; ``values[i, j, k]`` sits at ``origin + (i, j, k) * spacing``."""

    values: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3 or min(vals.shape) < 1:
            raise ShapeDataError(f"volume values must be a nonempty 3-D grid, got {vals.shape}")
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        spacing = np.asarray(self.spacing, dtype=float).reshape(3)
        if np.any(spacing <= 0):
            raise ShapeDataError("volume spacing must be positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    def grid_points(self) -> np.ndarray:
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @classmethod
    def from_function(cls, fn, origin, spacing, dims) -> "ScalarVolume":
        """Sample ``fn((..., 3) points) -> (...)`` on a grid."""
        origin = np.asarray(origin, dtype=float)
        spacing = np.asarray(spacing, dtype=float)
        axes = [origin[a] + spacing[a] * np.arange(dims[a]) for a in range(3)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(fn(pts), dtype=float)
        if vals.shape != tuple(dims):
            raise ShapeDataError(f"field returned shape {vals.shape} for a {tuple(dims)} grid")
        return cls(vals, origin, spacing)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_rows(path: Path, skip_first_column: bool = False):
    path = Path(path)
    if not path.is_file():
        raise ShapeDataError(f"{path}: no such file")
    rows = []
    width = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            label = None
            if skip_first_column:
                label, tokens = tokens[0], tokens[1:]
            try:
                vals = [float(t) for t in tokens]
            except ValueError as exc:
                raise ShapeDataError(f"{path}:{lineno}: non-numeric token ({exc})") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ShapeDataError(
                    f"{path}:{lineno}: inconsistent dimension, {len(vals)} values where {width} expected")
            rows.append((label, vals))
    if not rows:
        raise ShapeDataError(f"{path}: no points")
    return rows


def load_point_set(path) -> np.ndarray:
    """Read a whitespace-separated point file, one point per row."""
    rows = _parse_rows(Path(path))
    try:
        return as_point_set([r[1] for r in rows])
    except ShapeDataError as exc:
        raise ShapeDataError(f"{path}: {exc}") from None


def save_point_set(path, points) -> None:
    pts = as_point_set(points)
    with Path(path).open("w") as fh:
        for p in pts:
            fh.write(" ".join(_fmt(v) for v in p) + "\n")


def load_landmarks(path) -> LandmarkSet:
    """Read a landmark file: ``curve_name x y z`` per row, rows grouped by curve."""
    rows = _parse_rows(Path(path), skip_first_column=True)
    curves: dict[str, list] = {}
    for label, vals in rows:
        if len(vals) != 3:
            raise ShapeDataError(f"{path}: landmark rows need 3 coordinates, got {len(vals)}")
        curves.setdefault(label, []).append(vals)
    return LandmarkSet(curves)


def save_landmarks(path, landmarks: LandmarkSet) -> None:
    with Path(path).open("w") as fh:
        for name, pts in landmarks.curves.items():
            for p in pts:
                fh.write(name + " " + " ".join(_fmt(v) for v in p) + "\n")


VOLUME_MAGIC = "SDTVOL1"


def save_volume(path, vol: ScalarVolume) -> None:
    """Write the text volume format: magic line, header, then values in row-major order."""
    with Path(path).open("w") as fh:
        fh.write(VOLUME_MAGIC + "\n")
        fh.write("dims: " + " ".join(str(n) for n in vol.dims) + "\n")
        fh.write("origin: " + " ".join(_fmt(v) for v in vol.origin) + "\n")
        fh.write("spacing: " + " ".join(_fmt(v) for v in vol.spacing) + "\n")
        for v in vol.values.reshape(-1):
            fh.write(_fmt(v) + "\n")


def load_volume(path) -> ScalarVolume:
    path = Path(path)
    if not path.is_file():
        raise ShapeDataError(f"{path}: no such file")
    with path.open() as fh:
        magic = fh.readline().strip()
        if magic != VOLUME_MAGIC:
            raise ShapeDataError(f"{path}:1: expected magic {VOLUME_MAGIC!r}, got {magic!r}")
        header = {}
        for lineno, key in enumerate(("dims", "origin", "spacing"), start=2):
            line = fh.readline()
            name, _, rest = line.partition(":")
            if name.strip() != key:
                raise ShapeDataError(f"{path}:{lineno}: expected '{key}:' header")
            try:
                header[key] = [float(t) for t in rest.split()]
            except ValueError:
                raise ShapeDataError(f"{path}:{lineno}: non-numeric header value") from None
            if len(header[key]) != 3:
                raise ShapeDataError(f"{path}:{lineno}: '{key}' needs 3 values")
        dims = tuple(int(v) for v in header["dims"])
        try:
            values = np.array([float(t) for t in fh.read().split()])
        except ValueError:
            raise ShapeDataError(f"{path}: non-numeric volume value") from None
    if values.size != int(np.prod(dims)):
        raise ShapeDataError(f"{path}: {values.size} values for dims {dims}")
    return ScalarVolume(values.reshape(dims), header["origin"], header["spacing"])


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def rigid_align(source, target, allow_scale: bool = False) -> SimilarityTransform:
    """Least-squares rigid (or similarity) transform mapping ``source`` onto ``target``.

    Closed-form SVD solution with reflection correction (Umeyama).
    """
    src = as_point_set(source)
    tgt = as_point_set(target, dim=src.shape[1])
    if src.shape != tgt.shape:
        raise ShapeDataError(f"source {src.shape} and target {tgt.shape} differ")
    d = src.shape[1]
    mu_s, mu_t = src.mean(axis=0), tgt.mean(axis=0)
    a, b = src - mu_s, tgt - mu_t
    var_s = np.sum(a * a)
    if var_s <= 1e-24 * max(1.0, np.sum(b * b)):
        raise SingularConfigurationError("source points are all coincident")
    h = a.T @ b
    u, s, vt = np.linalg.svd(h)
    sign = np.ones(d)
    if np.linalg.det(vt.T @ u.T) < 0:
        sign[-1] = -1.0
    rot = (vt.T * sign) @ u.T
    scale = float(np.sum(s * sign) / var_s) if allow_scale else 1.0
    trans = mu_t - scale * rot @ mu_s
    return SimilarityTransform(rot, trans, scale)


class ProcrustesResult(NamedTuple):
    aligned: np.ndarray
    transforms: list
    mean: np.ndarray
    converged: bool
    iterations: int


def generalized_procrustes(shapes, allow_scale: bool = False, tol: float = 1e-10,
                           max_iters: int = 100) -> ProcrustesResult:
    """Iteratively align every shape to the evolving ensemble mean.

    The reference starts as the mean of the centred inputs, so an ensemble
    that is already mutually aligned is returned untouched.
    """
    ens = as_ensemble(shapes, min_shapes=2)
    centred = ens - ens.mean(axis=1, keepdims=True)
    mean = centred.mean(axis=0)
    if np.sum(mean ** 2) < 1e-12 * np.sum(centred[0] ** 2):
        mean = centred[0].copy()
    ref_size = np.sqrt(np.sum(mean ** 2))

    converged = False
    transforms = []
    aligned = ens
    it = 0
    for it in range(1, max_iters + 1):
        transforms = [rigid_align(s, mean, allow_scale) for s in ens]
        aligned = np.stack([t.apply(s) for t, s in zip(transforms, ens)])
        new_mean = aligned.mean(axis=0)
        new_mean -= new_mean.mean(axis=0)
        if allow_scale:
            new_mean *= ref_size / np.sqrt(np.sum(new_mean ** 2))
        change = np.sqrt(np.sum((new_mean - mean) ** 2))
        mean = new_mean
        if change < tol:
            converged = True
            break
    return ProcrustesResult(aligned, transforms, mean, converged, it)


# ---------------------------------------------------------------------------
# signed distance volumes
# ---------------------------------------------------------------------------

def trilinear(vol: ScalarVolume, points) -> np.ndarray:
    """Trilinear interpolation of ``vol`` at ``(P, 3)`` points (no bounds checks)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = (pts - vol.origin) / vol.spacing
    dims = np.array(vol.dims)
    i0 = np.clip(np.floor(g).astype(int), 0, np.maximum(dims - 2, 0))
    f = g - i0
    v = vol.values
    out = np.zeros(len(pts))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        ix = np.minimum(i0[:, 0] + dx, dims[0] - 1)
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            iy = np.minimum(i0[:, 1] + dy, dims[1] - 1)
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                iz = np.minimum(i0[:, 2] + dz, dims[2] - 1)
                out += wx * wy * wz * v[ix, iy, iz]
    return out


def sdt_normals(vol: ScalarVolume, points) -> np.ndarray:
    """Unit outward normals from central differences of the interpolated field.

    The difference step is half a voxel along each axis. Points must lie at
    least one voxel inside the grid.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo = vol.origin + vol.spacing
    hi = vol.origin + (np.array(vol.dims) - 2) * vol.spacing
    bad = np.flatnonzero(np.any((pts < lo) | (pts > hi), axis=1))
    if bad.size:
        raise OutOfBoundsError(f"point {bad[0]} at {pts[bad[0]]} lies outside the valid volume region")
    grad = np.empty_like(pts)
    for a in range(3):
        step = np.zeros(3)
        step[a] = 0.5 * vol.spacing[a]
        grad[:, a] = (trilinear(vol, pts + step) - trilinear(vol, pts - step)) / (2 * step[a])
    norm = np.linalg.norm(grad, axis=1)
    bad = np.flatnonzero(norm < 1e-12)
    if bad.size:
        raise DegenerateNormalError(f"zero field gradient at point {bad[0]}")
    return grad / norm[:, None]


def sdt_normal(vol: ScalarVolume, p) -> np.ndarray:
    """Unit normal at a single point, see :func:`sdt_normals`."""
    return sdt_normals(vol, np.asarray(p, dtype=float).reshape(1, 3))[0]


# ---------------------------------------------------------------------------
# data splits
# ---------------------------------------------------------------------------

def stratified_split(labels: Sequence, train_fraction: float, rng: np.random.Generator):
    """Sample ``round(fraction * size)`` training members from every cluster.

    Each cluster keeps at least one training and one test member. Returns
    sorted ``(train, test)`` index arrays.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    labels = np.asarray(labels)
    train, test = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < 2:
            raise ShapeDataError(f"cluster {c!r} has a single member; cannot split")
        n_train = int(np.floor(train_fraction * members.size + 0.5))
        n_train = min(max(n_train, 1), members.size - 1)
        perm = rng.permutation(members)
        train.extend(perm[:n_train])
        test.extend(perm[n_train:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))
