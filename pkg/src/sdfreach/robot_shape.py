"""Collision proxies for the robot body.

Two interchangeable representations:

* ``PointsRep``: points sampled deterministically from the per-link primitive
  solids declared in the robot config (area-weighted, stratified with a
  golden-ratio lattice per face/band plus seeded jitter).
* ``SpheresRep``: the hand-placed sphere set from the config; a sphere's
  obstacle distance is the field value at its center minus its radius.

Local points are immutable after construction; ``world_points`` re-expresses
them through forward kinematics each control step.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import kinematics as kin
from .kinematics import PrimitiveShape, RobotModel, RobotState

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_JITTER = 0.25  # fraction of the lattice cell jittered per coordinate


class PointsRep:
    """Per-link surface points in link-local coordinates (immutable)."""

    def __init__(self, link_index: np.ndarray, local_points: np.ndarray):
        self.link_index = np.asarray(link_index, int).copy()
        self.local_points = np.asarray(local_points, float).reshape(-1, 3).copy()
        if self.link_index.shape[0] != self.local_points.shape[0]:
            raise ValueError("link_index and local_points length mismatch")
        self.link_index.setflags(write=False)
        self.local_points.setflags(write=False)
        self._groups = [np.flatnonzero(self.link_index == k)
                        for k in range(kin.N_LINKS)]

    @property
    def total_count(self) -> int:
        return self.local_points.shape[0]


class SpheresRep:
    """Per-link proxy spheres in link-local coordinates (immutable)."""

    def __init__(self, link_index, centers, radii):
        self.link_index = np.asarray(link_index, int).copy()
        self.centers = np.asarray(centers, float).reshape(-1, 3).copy()
        self.radii = np.asarray(radii, float).copy()
        if np.any(self.radii <= 0):
            raise ValueError("sphere radii must be positive")
        for a in (self.link_index, self.centers, self.radii):
            a.setflags(write=False)

    @property
    def total_count(self) -> int:
        return self.centers.shape[0]


SurfaceRep = PointsRep | SpheresRep


def sphere_rep(model: RobotModel) -> SpheresRep:
    return SpheresRep(model.sphere_links, model.sphere_centers,
                      model.sphere_radii)


# ---------------------------------------------------------------------------
# Deterministic surface sampling
# ---------------------------------------------------------------------------

def _largest_remainder(weights: np.ndarray, total: int,
                       minimum: int = 0) -> np.ndarray:
    """Integer allocation proportional to weights, summing exactly to total."""
    w = np.maximum(np.asarray(weights, float), 0.0)
    if w.sum() <= 0:
        w = np.ones_like(w)
    ideal = w / w.sum() * total
    counts = np.floor(ideal).astype(int)
    rem = ideal - counts
    short = total - counts.sum()
    order = np.lexsort((np.arange(len(w)), -rem))
    for i in range(short):
        counts[order[i % len(w)]] += 1
    if minimum:
        while np.any(counts < minimum):
            needy = int(np.argmin(counts))
            donor = int(np.argmax(counts))
            if counts[donor] <= minimum:
                raise ValueError("not enough points to honor the per-link minimum")
            counts[donor] -= 1
            counts[needy] += 1
    return counts


def _lattice(k: int, rng, wrap_u=False, wrap_v=False) -> np.ndarray:
    """k quasi-uniform points in the unit square with seeded jitter."""
    i = np.arange(k)
    u = (i + 0.5) / k
    v = (i * GOLDEN) % 1.0
    if k > 0:
        ju = _JITTER / math.sqrt(k)
        u = u + rng.uniform(-ju, ju, k)
        v = v + rng.uniform(-ju, ju, k)
    u = u % 1.0 if wrap_u else np.clip(u, 0.0, 1.0)
    v = v % 1.0 if wrap_v else np.clip(v, 0.0, 1.0)
    return np.column_stack([u, v])


def _sample_box(shape: PrimitiveShape, k: int, rng) -> np.ndarray:
    hx, hy, hz = shape.half_extents
    # faces: (fixed axis, sign, span axes)
    faces = [(0, +1), (0, -1), (1, +1), (1, -1), (2, +1), (2, -1)]
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    counts = _largest_remainder(areas, k)
    half = np.array([hx, hy, hz])
    pts = []
    for (axis, sign), kk in zip(faces, counts):
        if kk == 0:
            continue
        span = [a for a in range(3) if a != axis]
        uv = _lattice(kk, rng)
        p = np.empty((kk, 3))
        p[:, axis] = sign * half[axis]
        p[:, span[0]] = (uv[:, 0] - 0.5) * 2.0 * half[span[0]]
        p[:, span[1]] = (uv[:, 1] - 0.5) * 2.0 * half[span[1]]
        pts.append(p)
    return np.vstack(pts) if pts else np.zeros((0, 3))


def _sample_cyl_side(radius, half_length, k, rng):
    uv = _lattice(k, rng, wrap_v=True)
    theta = uv[:, 1] * 2.0 * math.pi
    z = (uv[:, 0] - 0.5) * 2.0 * half_length
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])


def _sample_disk(radius, z, k, rng):
    i = np.arange(k)
    jr = rng.uniform(-_JITTER, _JITTER, k)
    jt = rng.uniform(-_JITTER, _JITTER, k)
    r = radius * np.sqrt(np.clip((i + 0.5 + jr) / k, 0.0, 1.0))
    theta = 2.0 * math.pi * ((i * GOLDEN + jt / max(k, 1)) % 1.0)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta),
                            np.full(k, z)])


def _sample_hemisphere(radius, k, rng, up: float, z_offset: float):
    i = np.arange(k)
    jc = rng.uniform(-_JITTER, _JITTER, k) / max(k, 1)
    jt = rng.uniform(-_JITTER, _JITTER, k) / max(k, 1)
    cosphi = np.clip((i + 0.5) / k + jc, 0.0, 1.0)
    sinphi = np.sqrt(1.0 - cosphi ** 2)
    theta = 2.0 * math.pi * ((i * GOLDEN + jt) % 1.0)
    return np.column_stack([radius * sinphi * np.cos(theta),
                            radius * sinphi * np.sin(theta),
                            up * (z_offset + radius * cosphi)])


def _sample_sphere_shape(radius, k, rng):
    i = np.arange(k)
    jc = rng.uniform(-_JITTER, _JITTER, k) / max(k, 1)
    jt = rng.uniform(-_JITTER, _JITTER, k) / max(k, 1)
    cosphi = np.clip(2.0 * ((i + 0.5) / k + jc) - 1.0, -1.0, 1.0)
    sinphi = np.sqrt(1.0 - cosphi ** 2)
    theta = 2.0 * math.pi * ((i * GOLDEN + jt) % 1.0)
    return np.column_stack([radius * sinphi * np.cos(theta),
                            radius * sinphi * np.sin(theta),
                            radius * cosphi])


def _sample_shape(shape: PrimitiveShape, k: int, rng) -> np.ndarray:
    if k == 0:
        return np.zeros((0, 3))
    if shape.kind == "box":
        local = _sample_box(shape, k, rng)
    elif shape.kind == "sphere":
        local = _sample_sphere_shape(shape.radius, k, rng)
    elif shape.kind == "cylinder":
        r, hl = shape.radius, shape.half_length
        side = 4.0 * math.pi * r * hl
        cap = math.pi * r * r
        counts = _largest_remainder(np.array([side, cap, cap]), k)
        local = np.vstack([
            _sample_cyl_side(r, hl, counts[0], rng),
            _sample_disk(r, hl, counts[1], rng),
            _sample_disk(r, -hl, counts[2], rng),
        ])
    elif shape.kind == "capsule":
        r, hl = shape.radius, shape.half_length
        side = 4.0 * math.pi * r * hl
        cap = 2.0 * math.pi * r * r
        counts = _largest_remainder(np.array([side, cap, cap]), k)
        local = np.vstack([
            _sample_cyl_side(r, hl, counts[0], rng),
            _sample_hemisphere(r, counts[1], rng, +1.0, hl),
            _sample_hemisphere(r, counts[2], rng, -1.0, hl),
        ])
    else:
        raise ValueError(f"cannot sample shape kind {shape.kind!r}")
    return shape.pose.transform(local)


def sample_points(model: RobotModel, target_total: int, seed: int) -> PointsRep:
    """Deterministic area-weighted surface sampling over all link solids."""
    n_links = model.n_links
    if target_total < n_links:
        raise ValueError(
            f"target_total={target_total} is below the link count {n_links}")
    link_areas = np.array([sum(s.surface_area() for s in shapes) or 0.0
                           for shapes in model.link_shapes])
    per_link = _largest_remainder(link_areas, target_total, minimum=1)
    links, pts = [], []
    for link, (shapes, kk) in enumerate(zip(model.link_shapes, per_link)):
        if not shapes:
            continue
        shape_areas = np.array([s.surface_area() for s in shapes])
        per_shape = _largest_remainder(shape_areas, int(kk))
        for si, (shape, ks) in enumerate(zip(shapes, per_shape)):
            rng = np.random.default_rng([seed, link, si])
            p = _sample_shape(shape, int(ks), rng)
            pts.append(p)
            links.append(np.full(p.shape[0], link, int))
    return PointsRep(np.concatenate(links), np.vstack(pts))


def preset_rep(model: RobotModel, preset: str, seed: int = 0) -> PointsRep:
    """Named presets ('coarse', 'fine') with the canonical point totals."""
    try:
        total = int(model.point_presets[preset])
    except KeyError:
        raise ValueError(f"unknown point preset {preset!r}") from None
    return sample_points(model, total, seed)


# ---------------------------------------------------------------------------
# World-frame queries
# ---------------------------------------------------------------------------

def world_points(rep: PointsRep, model: RobotModel, state: RobotState,
                 fk=None):
    """Transform every local point by its link pose; order is stable.

    Returns (world (N,3), link_index (N,)).
    """
    R, t, _, _ = fk if fk is not None else kin._fk_arrays(model, state)
    out = np.empty_like(rep.local_points)
    for k, idx in enumerate(rep._groups):
        if idx.size:
            out[idx] = rep.local_points[idx] @ R[k].T + t[k]
    return out, rep.link_index


def world_sphere_centers(rep: SpheresRep, model: RobotModel, state: RobotState,
                         fk=None):
    R, t, _, _ = fk if fk is not None else kin._fk_arrays(model, state)
    out = np.empty_like(rep.centers)
    for k in range(kin.N_LINKS):
        idx = np.flatnonzero(rep.link_index == k)
        if idx.size:
            out[idx] = rep.centers[idx] @ R[k].T + t[k]
    return out, rep.link_index


def sphere_distances(rep: SpheresRep, scene, model: RobotModel,
                     state: RobotState, fk=None):
    """Field distance of each proxy sphere: f(center) - radius.

    Returns (distance (M,), gradient (M,3), link_index (M,), centers (M,3)).
    """
    centers, links = world_sphere_centers(rep, model, state, fk=fk)
    d, g, _ = scene.distance_and_gradient(centers)
    return d - rep.radii, g, links, centers


# ---------------------------------------------------------------------------
# Point-set file format: CSV rows "link_index,x,y,z" in link-local meters
# ---------------------------------------------------------------------------

def save_points(rep: PointsRep, path: str | Path) -> None:
    with open(path, "w") as f:
        f.write("# link_index,x,y,z (link-local meters)\n")
        for k, p in zip(rep.link_index, rep.local_points):
            f.write(f"{int(k)},{float(p[0])!r},{float(p[1])!r},{float(p[2])!r}\n")


def load_points(path: str | Path, model: RobotModel) -> PointsRep:
    links, pts = [], []
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}: line {ln}: expected 4 fields")
            try:
                k = int(parts[0])
                xyz = [float(v) for v in parts[1:]]
            except ValueError as e:
                raise ValueError(f"{path}: line {ln}: {e}") from None
            if not 0 <= k < model.n_links:
                raise ValueError(
                    f"{path}: line {ln}: link index {k} out of range for a "
                    f"{model.n_links}-link model")
            links.append(k)
            pts.append(xyz)
    return PointsRep(np.array(links, int), np.array(pts, float).reshape(-1, 3))


# ---------------------------------------------------------------------------
# Local solid distance (validation / coverage checks)
# ---------------------------------------------------------------------------

def shape_local_sdf(shape: PrimitiveShape, points: np.ndarray) -> np.ndarray:
    """Exact signed distance to the solid, for points in link coordinates."""
    p = (np.asarray(points, float).reshape(-1, 3)
         - shape.pose.translation) @ shape.pose.rotation
    if shape.kind == "sphere":
        return np.linalg.norm(p, axis=1) - shape.radius
    if shape.kind == "box":
        q = np.abs(p) - shape.half_extents
        out = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return out + np.minimum(q.max(axis=1), 0.0)
    if shape.kind == "capsule":
        z = np.clip(p[:, 2], -shape.half_length, shape.half_length)
        d = p.copy()
        d[:, 2] -= z
        return np.linalg.norm(d, axis=1) - shape.radius
    if shape.kind == "cylinder":
        dr = np.hypot(p[:, 0], p[:, 1]) - shape.radius
        dz = np.abs(p[:, 2]) - shape.half_length
        out = np.sqrt(np.maximum(dr, 0.0) ** 2 + np.maximum(dz, 0.0) ** 2)
        return out + np.minimum(np.maximum(dr, dz), 0.0)
    raise ValueError(f"unknown shape kind {shape.kind!r}")


def surface_distance(model: RobotModel, link: int,
                     local_points: np.ndarray) -> np.ndarray:
    """Distance from points to the nearest declared solid surface of a link."""
    shapes = model.link_shapes[link]
    if not shapes:
        return np.full(np.asarray(local_points).reshape(-1, 3).shape[0], np.inf)
    d = np.abs(shape_local_sdf(shapes[0], local_points))
    for s in shapes[1:]:
        np.minimum(d, np.abs(shape_local_sdf(s, local_points)), out=d)
    return d
