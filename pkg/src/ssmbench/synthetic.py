"""Box-bump shape populations with exact correspondences and implicit surfaces.

Every shape is a rounded box whose top face carries a Gaussian bump; an
optional second bump sits on the +y side face. Surfaces are images of the
same base box under a closed-form, invertible deformation, so correspondence
``k`` always comes from the same base-surface point, and the volume field
``sdf_box(deform^-1(p))`` is exactly zero on every correspondence.

The field is a signed distance to the *base* box pulled back through the
deformation: negative inside, zero on the surface, gradient pointing
outward. It is not a true Euclidean distance away from the surface.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .shapes import LandmarkSet, ScalarVolume, as_ensemble


@dataclass(frozen=True)
class BoxBumpSpec:
    """Geometry and sampling of the box-bump family (lengths in mm).

    ``face_grid`` is the number of surface samples along x, y and z; the top
    and bottom faces get ``nx * ny`` points, the +-y faces ``nx * nz`` and
    the +-x faces ``ny * nz``.
    """

    extents: tuple = (40.0, 28.0, 16.0)
    face_grid: tuple = (11, 7, 3)
    face_margin: float = 2.0
    bump_height: float = 4.0
    bump_width: float = 6.0
    bump_travel: float = 5.0
    grid_size: int = 64
    grid_half_width: float = 26.0
    corner_radius_voxels: float = 2.0
    seed: int = 0

    def __post_init__(self):
        ext = np.asarray(self.extents, dtype=float)
        if ext.shape != (3,) or np.any(ext <= 0):
            raise ValueError("extents must be three positive lengths")
        if any(int(n) < 1 for n in self.face_grid) or len(self.face_grid) != 3:
            raise ValueError("face_grid needs three positive counts")
        if not 0 < self.bump_width < ext[0] / 2:
            raise ValueError("bump width must be positive and below half the box length")
        if self.grid_size < 8:
            raise ValueError("grid_size must be at least 8")
        if self.bump_travel < 0 or self.bump_travel >= ext[0] / 2:
            raise ValueError("bump travel must lie inside the top face")
        if self.face_margin < self.corner_radius:
            raise ValueError("face margin must clear the rounded edges")
        if np.any(ext / 2 + abs(self.bump_height) + 2 * self.spacing > self.grid_half_width):
            raise ValueError("volume grid does not cover the box")

    @property
    def spacing(self) -> float:
        return 2.0 * self.grid_half_width / (self.grid_size - 1)

    @property
    def corner_radius(self) -> float:
        return self.corner_radius_voxels * self.spacing

    @property
    def n_points(self) -> int:
        nx, ny, nz = self.face_grid
        return 2 * (nx * ny + nx * nz + ny * nz)

    def bump_center(self, s: float) -> float:
        """x coordinate of the top bump for position parameter ``s`` in [0, 1]."""
        return (2.0 * s - 1.0) * self.bump_travel


@dataclass(frozen=True)
class SideBump:
    """Gaussian bump on the +y face centred at (x, z); negative height dents.

    The displacement fades linearly to zero over ``depth`` mm below the face.
    """

    x: float = -10.0
    z: float = -1.0
    height: float = 3.0
    width: float = 3.5
    depth: float = 8.0


@dataclass(frozen=True)
class ShapeLatent:
    s: float = 0.5
    height: float | None = None
    width: float | None = None
    side: SideBump | None = None


@dataclass(frozen=True)
class SyntheticTruth:
    latents: list
    lesion_mask: np.ndarray
    landmarks: list
    lesion_sign: int = 0
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def base_surface(spec: BoxBumpSpec) -> np.ndarray:
    """Fixed ``(M, 3)`` parameterisation of the undeformed box surface."""
    hx, hy, hz = np.asarray(spec.extents) / 2
    nx, ny, nz = spec.face_grid
    m = spec.face_margin

    def axis(half, n):
        return np.zeros(1) if n == 1 else np.linspace(-half + m, half - m, n)

    xs, ys, zs = axis(hx, nx), axis(hy, ny), axis(hz, nz)
    faces = []
    for z in (hz, -hz):
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        faces.append(np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)]))
    for y in (hy, -hy):
        gx, gz = np.meshgrid(xs, zs, indexing="ij")
        faces.append(np.column_stack([gx.ravel(), np.full(gx.size, y), gz.ravel()]))
    for x in (hx, -hx):
        gy, gz = np.meshgrid(ys, zs, indexing="ij")
        faces.append(np.column_stack([np.full(gy.size, x), gy.ravel(), gz.ravel()]))
    return np.concatenate(faces)


def _gauss(a, b, a0, b0, width):
    return np.exp(-((a - a0) ** 2 + (b - b0) ** 2) / (2.0 * width ** 2))


def _ramp(t, lo, hi):
    return np.clip((t - lo) / (hi - lo), 0.0, 1.0)


def _push(t, c, lo, hi):
    """Forward map ``t -> t + c * ramp(t)``."""
    return t + c * _ramp(t, lo, hi)


def _pull(t, c, lo, hi):
    """Inverse of :func:`_push`; valid while ``c > -(hi - lo)``."""
    span = hi - lo
    mid = (t + c * lo / span) / (1.0 + c / span)
    return np.where(t <= lo, t, np.where(t >= hi + c, t - c, mid))


def _top_params(spec, lat):
    h = spec.bump_height if lat.height is None else lat.height
    w = spec.bump_width if lat.width is None else lat.width
    return spec.bump_center(lat.s), h, w


def displacement(spec: BoxBumpSpec, lat: ShapeLatent, base: np.ndarray) -> np.ndarray:
    """Closed-form displacement of base-surface points for one shape."""
    return deform(spec, lat, base) - base


def deform(spec: BoxBumpSpec, lat: ShapeLatent, q: np.ndarray) -> np.ndarray:
    hx, hy, hz = np.asarray(spec.extents) / 2
    p = np.array(q, dtype=float)
    if lat.side is not None and lat.side.height != 0:
        sb = lat.side
        c = sb.height * _gauss(p[..., 0], p[..., 2], sb.x, sb.z, sb.width)
        p[..., 1] = _push(p[..., 1], c, hy - sb.depth, hy)
    xc, h, w = _top_params(spec, lat)
    c = h * _gauss(p[..., 0], p[..., 1], xc, 0.0, w)
    p[..., 2] = _push(p[..., 2], c, -hz, hz)
    return p


def undeform(spec: BoxBumpSpec, lat: ShapeLatent, p: np.ndarray) -> np.ndarray:
    hx, hy, hz = np.asarray(spec.extents) / 2
    q = np.array(p, dtype=float)
    xc, h, w = _top_params(spec, lat)
    c = h * _gauss(q[..., 0], q[..., 1], xc, 0.0, w)
    q[..., 2] = _pull(q[..., 2], c, -hz, hz)
    if lat.side is not None and lat.side.height != 0:
        sb = lat.side
        c = sb.height * _gauss(q[..., 0], q[..., 2], sb.x, sb.z, sb.width)
        q[..., 1] = _pull(q[..., 1], c, hy - sb.depth, hy)
    return q


def rounded_box_sdf(spec: BoxBumpSpec, q: np.ndarray) -> np.ndarray:
    half = np.asarray(spec.extents) / 2
    r = spec.corner_radius
    d = np.abs(q) - (half - r)
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside - r


def implicit_field(spec: BoxBumpSpec, lat: ShapeLatent, p: np.ndarray) -> np.ndarray:
    """Analytic field value at ``(..., 3)`` points."""
    return rounded_box_sdf(spec, undeform(spec, lat, p))


def volume_for(spec: BoxBumpSpec, lat: ShapeLatent) -> ScalarVolume:
    g = spec.grid_half_width
    return ScalarVolume.from_function(lambda pts: implicit_field(spec, lat, pts),
                                      origin=(-g, -g, -g), spacing=(spec.spacing,) * 3,
                                      dims=(spec.grid_size,) * 3)


def landmarks_for(spec: BoxBumpSpec, lat: ShapeLatent) -> LandmarkSet:
    """Bump apex plus the eight nominal box corners, in shape space."""
    hx, hy, hz = np.asarray(spec.extents) / 2
    xc, h, _ = _top_params(spec, lat)
    apex = deform(spec, lat, np.array([[xc, 0.0, hz]]))
    corners = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return LandmarkSet({"apex": apex, "corners": deform(spec, lat, corners)})


def make_shape(spec: BoxBumpSpec, lat: ShapeLatent, with_volume: bool = True):
    base = base_surface(spec)
    pts = deform(spec, lat, base)
    vol = volume_for(spec, lat) if with_volume else None
    return pts, vol


# ---------------------------------------------------------------------------
# populations
# ---------------------------------------------------------------------------

def generate_box_bump_ensemble(spec: BoxBumpSpec, n: int, positions=None, with_volumes: bool = True):
    """``n`` box-bump shapes differing only in bump position.

    Positions default to evenly spaced values of ``s`` over [0, 1]. Returns
    ``(ensemble, volumes, truth)``; ``volumes`` is empty when
    ``with_volumes`` is false.
    """
    if n < 2:
        raise ValueError("an ensemble needs at least two shapes")
    s = np.linspace(0.0, 1.0, n) if positions is None else np.asarray(positions, dtype=float)
    if s.shape != (n,) or np.any((s < 0) | (s > 1)):
        raise ValueError("positions must be n values in [0, 1]")
    lats = [ShapeLatent(s=float(v)) for v in s]
    shapes, vols = [], []
    for lat in lats:
        pts, vol = make_shape(spec, lat, with_volumes)
        shapes.append(pts)
        if with_volumes:
            vols.append(vol)
    truth = SyntheticTruth(lats, np.zeros(spec.n_points, dtype=bool),
                           [landmarks_for(spec, lat) for lat in lats])
    return np.stack(shapes), vols, truth


def random_positions(spec: BoxBumpSpec, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    return rng.uniform(0.0, 1.0, n)


def side_bump_support(spec: BoxBumpSpec, side: SideBump, threshold: float = 0.1) -> np.ndarray:
    """Points the side bump moves by more than ``threshold * |height|``."""
    base = base_surface(spec)
    plain = deform(spec, ShapeLatent(s=0.5), base)
    bumped = deform(spec, ShapeLatent(s=0.5, side=side), base)
    moved = np.linalg.norm(bumped - plain, axis=1)
    return moved > threshold * abs(side.height) if side.height != 0 else np.zeros(len(base), bool)


def _top_support(spec: BoxBumpSpec, s: float, threshold: float = 0.1) -> np.ndarray:
    base = base_surface(spec)
    flat = deform(spec, ShapeLatent(s=s, height=0.0), base)
    bumped = deform(spec, ShapeLatent(s=s), base)
    return np.linalg.norm(bumped - flat, axis=1) > threshold * abs(spec.bump_height)


def generate_side_bump_outlier(spec: BoxBumpSpec, side: SideBump = SideBump(), s: float = 0.5,
                               with_volume: bool = True):
    """A regular ensemble member with an extra bump on the +y face.

    Returns ``(points, volume, truth)``; ``truth.lesion_mask`` flags points
    displaced by more than 10% of the side-bump height and
    ``truth.lesion_sign`` is +1 for growth, -1 for a dent.
    """
    if side.height <= -side.depth or not 0 < side.depth <= spec.extents[1]:
        raise ValueError("side bump dent must be shallower than its depth, which must fit in the box")
    mask = side_bump_support(spec, side)
    if side.height != 0:
        for s_any in (0.0, 0.5, 1.0, s):
            if np.any(mask & _top_support(spec, s_any)):
                raise ValueError("side bump overlaps the top bump support")
    lat = ShapeLatent(s=s, side=side)
    pts, vol = make_shape(spec, lat, with_volume)
    truth = SyntheticTruth([lat], mask, [landmarks_for(spec, lat)], int(np.sign(side.height)))
    return pts, vol, truth


def default_cluster_archetypes(k: int) -> list:
    """``k`` bump placements far enough apart that their shapes are nearly equidistant."""
    return [ShapeLatent(s=float(s), height=4.0, width=3.0) for s in np.linspace(0.0, 1.0, k)]


def generate_cluster_population(k: int, n_per_cluster: int, spec: BoxBumpSpec | None = None,
                                rng: np.random.Generator | None = None, archetypes=None,
                                jitter: float = 0.05, min_separation: float = 5.0):
    """``k`` families of box-bump shapes around archetype latents.

    Members perturb the archetype's position, height and width by Gaussian
    jitter (``jitter`` times 1/(2k) in ``s`` and times the archetype value
    for height and width). Raises when clusters are not separated by at
    least ``min_separation`` times the within-cluster spread.
    """
    if k < 2:
        raise ValueError("need at least two clusters")
    if spec is None:
        spec = BoxBumpSpec(bump_travel=15.0)
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    archetypes = default_cluster_archetypes(k) if archetypes is None else list(archetypes)
    if len(archetypes) != k:
        raise ValueError(f"{len(archetypes)} archetypes for {k} clusters")
    base = base_surface(spec)
    shapes, labels = [], []
    for c, arch in enumerate(archetypes):
        h = spec.bump_height if arch.height is None else arch.height
        w = spec.bump_width if arch.width is None else arch.width
        for _ in range(n_per_cluster):
            ds, dh, dw = rng.standard_normal(3) * jitter
            lat = ShapeLatent(s=float(np.clip(arch.s + ds / (2 * k), 0.0, 1.0)),
                              height=h * (1 + dh), width=w * (1 + dw))
            shapes.append(deform(spec, lat, base))
            labels.append(c)
    ens = as_ensemble(shapes)
    labels = np.array(labels)
    x = ens.reshape(len(ens), -1)
    centers = np.stack([x[labels == c].mean(axis=0) for c in range(k)])
    spread = max(np.sqrt(np.mean(np.sum((x[labels == c] - centers[c]) ** 2, axis=1))) for c in range(k))
    sep = min(np.linalg.norm(centers[a] - centers[b]) for a in range(k) for b in range(a + 1, k))
    if spread > 0 and sep < min_separation * spread:
        raise ValueError(f"cluster separation {sep:.3g} below {min_separation} x spread {spread:.3g}")
    return ens, labels


def with_seed(spec: BoxBumpSpec, seed: int) -> BoxBumpSpec:
    return replace(spec, seed=seed)
