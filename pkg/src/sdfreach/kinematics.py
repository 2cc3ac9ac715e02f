"""Kinematics for a differential-drive base carrying a 7-joint arm.

The velocity space is 9-dimensional: (v, w) for the nonholonomic base
followed by the seven arm joint rates. Link indices run 0..8: the base body
is link 0, arm links are 1..7, and the hand (rigidly attached after the last
joint) is link 8. All Jacobians are expressed in the world frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_ARM_JOINTS = 7
DOF = 9  # (v, w, qd1..qd7)
N_LINKS = 9
SINGULARITY_EPS = 1e-8

# number of arm joints that move each link
CHAIN_JOINTS = np.array([0, 1, 2, 3, 4, 5, 6, 7, 7])


def rotz(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation from roll-pitch-yaw: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    if axis[0] == 0.0 and axis[1] == 0.0:  # common case: joint about +/-z
        return rotz(angle if axis[2] > 0 else -angle)
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = axis
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def rotation_to_angle_axis(R: np.ndarray) -> np.ndarray:
    """Angle * axis vector of a rotation matrix; any consistent axis at pi."""
    trace = float(np.trace(R))
    cos_a = max(-1.0, min(1.0, (trace - 1.0) / 2.0))
    angle = math.acos(cos_a)
    if angle < 1e-12:
        return np.zeros(3)
    if angle > math.pi - 1e-6:
        # near pi: extract axis from the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.maximum(np.diag(B), 0.0))
        # fix signs from off-diagonal terms, anchored on the largest component
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for j in range(3):
                if j != k and B[k, j] < 0:
                    axis[j] = -axis[j]
        nrm = np.linalg.norm(axis)
        axis = axis / nrm if nrm > 0 else np.array([1.0, 0.0, 0.0])
        return angle * axis
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle / (2.0 * math.sin(angle)) * v


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3,3) and translation (3,)."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_xyz_rpy(xyz, rpy=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(rpy_matrix(*rpy), np.asarray(xyz, float))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, float)
        return pts @ self.rotation.T + self.translation

    def orthonormality_error(self) -> float:
        R = self.rotation
        return float(max(np.abs(R.T @ R - np.eye(3)).max(),
                         abs(np.linalg.det(R) - 1.0)))


@dataclass(frozen=True)
class PrimitiveShape:
    """Solid standing in for a link mesh: box, capsule, cylinder or sphere.

    ``pose`` places the shape in its link frame. Capsules and cylinders are
    z-aligned in the shape frame with the given half-length.
    """

    kind: str
    pose: Pose
    half_extents: np.ndarray | None = None  # box
    radius: float = 0.0                     # capsule / cylinder / sphere
    half_length: float = 0.0                # capsule / cylinder

    def surface_area(self) -> float:
        if self.kind == "box":
            a, b, c = self.half_extents
            return 8.0 * (a * b + b * c + c * a)
        if self.kind == "capsule":
            return 4.0 * math.pi * self.radius * self.half_length \
                + 4.0 * math.pi * self.radius ** 2
        if self.kind == "cylinder":
            return 4.0 * math.pi * self.radius * self.half_length \
                + 2.0 * math.pi * self.radius ** 2
        if self.kind == "sphere":
            return 4.0 * math.pi * self.radius ** 2
        raise ValueError(f"unknown shape kind {self.kind!r}")


@dataclass(frozen=True)
class JointSpec:
    axis: np.ndarray              # unit axis in the post-origin frame
    origin: Pose                  # fixed transform from the parent frame
    position_limits: tuple[float, float]
    velocity_limit: float


@dataclass(frozen=True)
class RobotModel:
    name: str
    base_velocity_limits: tuple[float, float]  # (m/s, rad/s)
    arm_mount: Pose
    joints: tuple[JointSpec, ...]
    hand_transform: Pose   # link 7 frame -> hand frame
    ee_transform: Pose     # hand frame -> tool center point
    link_shapes: tuple[tuple[PrimitiveShape, ...], ...]  # per link, 9 entries
    sphere_links: np.ndarray    # (M,) link index per proxy sphere
    sphere_centers: np.ndarray  # (M, 3) in link frames
    sphere_radii: np.ndarray    # (M,)
    home_q: np.ndarray
    point_presets: dict

    @property
    def n_links(self) -> int:
        return N_LINKS

    @property
    def dof(self) -> int:
        return DOF

    def velocity_limits(self) -> np.ndarray:
        """Elementwise bound on |x| for the 9 velocity coordinates."""
        v, w = self.base_velocity_limits
        return np.concatenate([[v, w], [j.velocity_limit for j in self.joints]])

    def position_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.position_limits[0] for j in self.joints])
        hi = np.array([j.position_limits[1] for j in self.joints])
        return lo, hi


@dataclass(frozen=True)
class RobotState:
    base_pose: np.ndarray  # (x, y, theta)
    arm_q: np.ndarray      # (7,)

    @staticmethod
    def from_values(x, y, theta, arm_q) -> "RobotState":
        return RobotState(np.array([x, y, theta], float),
                          np.asarray(arm_q, float).copy())


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------

def _fk_arrays(model: RobotModel, state: RobotState):
    """Fast-path FK: link rotations/translations plus world joint axes/origins.

    Returns (R (10,3,3), t (10,3), axes (7,3), origins (7,3)); entries 0..8
    are the link frames, entry 9 the end-effector frame.
    """
    x, y, theta = state.base_pose
    R = np.empty((N_LINKS + 1, 3, 3))
    t = np.empty((N_LINKS + 1, 3))
    R[0] = rotz(theta)
    t[0] = (x, y, 0.0)
    Rm = R[0] @ model.arm_mount.rotation
    tm = R[0] @ model.arm_mount.translation + t[0]
    axes = np.empty((N_ARM_JOINTS, 3))
    origins = np.empty((N_ARM_JOINTS, 3))
    Rp, tp = Rm, tm
    for i, joint in enumerate(model.joints):
        Ro = Rp @ joint.origin.rotation
        to = Rp @ joint.origin.translation + tp
        axes[i] = Ro @ joint.axis
        origins[i] = to
        Rp = Ro @ axis_rotation(joint.axis, state.arm_q[i])
        tp = to
        R[i + 1] = Rp
        t[i + 1] = tp
    R[8] = Rp @ model.hand_transform.rotation
    t[8] = Rp @ model.hand_transform.translation + tp
    R[9] = R[8] @ model.ee_transform.rotation
    t[9] = R[8] @ model.ee_transform.translation + t[8]
    return R, t, axes, origins


def forward_kinematics(model: RobotModel, state: RobotState) -> list[Pose]:
    """World pose of every link (0..8) plus the end-effector (last entry)."""
    R, t, _, _ = _fk_arrays(model, state)
    return [Pose(R[i].copy(), t[i].copy()) for i in range(N_LINKS + 1)]


def ee_pose(model: RobotModel, state: RobotState) -> Pose:
    R, t, _, _ = _fk_arrays(model, state)
    return Pose(R[9], t[9])


def _base_columns(state: RobotState, p: np.ndarray):
    """Translational base columns for a world point p: forward drive and yaw."""
    theta = state.base_pose[2]
    heading = np.array([math.cos(theta), math.sin(theta), 0.0])
    rel = p - np.array([state.base_pose[0], state.base_pose[1], 0.0])
    yaw_col = np.array([-rel[1], rel[0], 0.0])
    return heading, yaw_col


def ee_jacobian(model: RobotModel, state: RobotState) -> np.ndarray:
    """6x9 world-frame Jacobian of the end-effector (rows: linear, angular)."""
    R, t, axes, origins = _fk_arrays(model, state)
    p = t[9]
    J = np.zeros((6, DOF))
    heading, yaw_col = _base_columns(state, p)
    J[:3, 0] = heading
    J[:3, 1] = yaw_col
    J[3:, 1] = (0.0, 0.0, 1.0)
    rel = p - origins
    J[:3, 2:] = np.cross(axes, rel).T
    J[3:, 2:] = axes.T
    return J


def point_jacobian(model: RobotModel, state: RobotState, link_index: int,
                   local_point: np.ndarray) -> np.ndarray:
    """3x9 world Jacobian of a point given in link-frame coordinates.

    Columns of joints distal to the link are exactly zero.
    """
    if not 0 <= link_index < N_LINKS:
        raise ValueError(f"link index {link_index} out of range")
    R, t, axes, origins = _fk_arrays(model, state)
    p = R[link_index] @ np.asarray(local_point, float) + t[link_index]
    J = np.zeros((3, DOF))
    heading, yaw_col = _base_columns(state, p)
    J[:, 0] = heading
    J[:, 1] = yaw_col
    k = CHAIN_JOINTS[link_index]
    if k:
        J[:, 2:2 + k] = np.cross(axes[:k], p - origins[:k]).T
    return J


def point_jacobians(model: RobotModel, state: RobotState,
                    world_points: np.ndarray, link_indices: np.ndarray,
                    fk=None) -> np.ndarray:
    """Batched translational Jacobians: (N, 3, 9) for world points.

    ``fk`` may carry precomputed ``_fk_arrays`` output to avoid recomputation.
    """
    R, t, axes, origins = fk if fk is not None else _fk_arrays(model, state)
    P = np.asarray(world_points, float)
    N = P.shape[0]
    J = np.zeros((N, 3, DOF))
    theta = state.base_pose[2]
    J[:, 0, 0] = math.cos(theta)
    J[:, 1, 0] = math.sin(theta)
    J[:, 0, 1] = -(P[:, 1] - state.base_pose[1])
    J[:, 1, 1] = P[:, 0] - state.base_pose[0]
    chain = CHAIN_JOINTS[link_indices]  # (N,)
    for j in range(N_ARM_JOINTS):
        mask = chain > j
        if not np.any(mask):
            continue
        J[mask, :, 2 + j] = np.cross(axes[j], P[mask] - origins[j])
    return J


# ---------------------------------------------------------------------------
# Manipulability of the arm
# ---------------------------------------------------------------------------

def _arm_jacobian_frame(model: RobotModel, arm_q: np.ndarray):
    """Axes, origins and EE position of the arm alone, in the arm-base frame."""
    axes = np.empty((N_ARM_JOINTS, 3))
    origins = np.empty((N_ARM_JOINTS, 3))
    Rp = np.eye(3)
    tp = np.zeros(3)
    for i, joint in enumerate(model.joints):
        Ro = Rp @ joint.origin.rotation
        to = Rp @ joint.origin.translation + tp
        axes[i] = Ro @ joint.axis
        origins[i] = to
        Rp = Ro @ axis_rotation(joint.axis, arm_q[i])
        tp = to
    th = Rp @ model.hand_transform.translation + tp
    Rh = Rp @ model.hand_transform.rotation
    te = Rh @ model.ee_transform.translation + th
    return axes, origins, te


def arm_jacobian(model: RobotModel, arm_q: np.ndarray) -> np.ndarray:
    """6x7 geometric Jacobian of the arm in its own base frame."""
    axes, origins, te = _arm_jacobian_frame(model, arm_q)
    J = np.empty((6, N_ARM_JOINTS))
    J[:3] = np.cross(axes, te - origins).T
    J[3:] = axes.T
    return J


def manipulability(model: RobotModel, arm_q: np.ndarray) -> float:
    """Yoshikawa index sqrt(det(J J')) of the 6x7 arm Jacobian."""
    J = arm_jacobian(model, arm_q)
    det = float(np.linalg.det(J @ J.T))
    return math.sqrt(det) if det > 0.0 else 0.0


def manipulability_jacobian(model: RobotModel, arm_q: np.ndarray) -> np.ndarray:
    """Gradient of the manipulability index, padded to the 9 velocity coords.

    Base entries are zero (the index is a property of the arm alone). Near a
    singularity (m <= 1e-8) the gradient is undefined and a zero vector is
    returned.
    """
    axes, origins, te = _arm_jacobian_frame(model, arm_q)
    Jt = np.cross(axes, te - origins)  # (7,3) translational rows
    J = np.empty((6, N_ARM_JOINTS))
    J[:3] = Jt.T
    J[3:] = axes.T
    JJt = J @ J.T
    det = float(np.linalg.det(JJt))
    out = np.zeros(DOF)
    if det <= 0.0:
        return out
    m = math.sqrt(det)
    if m <= SINGULARITY_EPS:
        return out
    # dJ/dq_j: translational part is symmetric in (j, i); angular part only
    # has upper-triangular support (distal joints do not move earlier axes).
    Ct = np.cross(axes[:, None, :], Jt[None, :, :])   # Ct[j, i] = a_j x Jt_i
    jj, ii = np.meshgrid(np.arange(N_ARM_JOINTS), np.arange(N_ARM_JOINTS),
                         indexing="ij")
    lower = (jj > ii)[:, :, None]
    Ht = np.where(lower, np.swapaxes(Ct, 0, 1), Ct)   # (7, 7, 3)
    Cw = np.cross(axes[:, None, :], axes[None, :, :])
    Hw = np.where(lower, 0.0, Cw)
    H = np.concatenate([np.swapaxes(Ht, 1, 2), np.swapaxes(Hw, 1, 2)], axis=1)
    # H[j] is the 6x7 derivative of J with respect to q_j
    HJt = np.einsum("jab,cb->jac", H, J)
    B = np.linalg.inv(JJt)
    out[2:] = m * np.einsum("ac,jca->j", B, HJt)
    return out


def base_orientation_jacobian(model: RobotModel, state: RobotState,
                              gain: float = 0.5) -> np.ndarray:
    """Cost gradient steering the base heading toward the end-effector.

    Nonzero only in the yaw-rate entry: gain * alpha, where alpha is the
    signed planar angle from the base heading to the ground-projected
    base->EE direction. Zero when the EE is (near) vertically above the base.
    """
    R, t, _, _ = _fk_arrays(model, state)
    out = np.zeros(DOF)
    d = t[9][:2] - state.base_pose[:2]
    if float(np.hypot(d[0], d[1])) < 1e-6:
        return out
    theta = state.base_pose[2]
    heading = (math.cos(theta), math.sin(theta))
    alpha = math.atan2(heading[0] * d[1] - heading[1] * d[0],
                       heading[0] * d[0] + heading[1] * d[1])
    out[1] = gain * alpha
    return out


# ---------------------------------------------------------------------------
# Model loading
# ---------------------------------------------------------------------------

def _pose_from_dict(d: dict) -> Pose:
    return Pose.from_xyz_rpy(d.get("xyz", (0.0, 0.0, 0.0)),
                             d.get("rpy", (0.0, 0.0, 0.0)))


def _shape_from_dict(d: dict) -> PrimitiveShape:
    kind = d["type"]
    if kind == "box":
        half = np.asarray(d["half_extents"], float)
        if np.any(half <= 0):
            raise ValueError("box half_extents must be positive")
        return PrimitiveShape("box", _pose_from_dict({"xyz": d.get("center", (0, 0, 0)),
                                                      "rpy": d.get("rpy", (0, 0, 0))}),
                              half_extents=half)
    if kind == "capsule":
        p0 = np.asarray(d["p0"], float)
        p1 = np.asarray(d["p1"], float)
        r = float(d["radius"])
        if r <= 0:
            raise ValueError("capsule radius must be positive")
        axis = p1 - p0
        length = float(np.linalg.norm(axis))
        mid = 0.5 * (p0 + p1)
        if length < 1e-12:
            return PrimitiveShape("sphere", Pose(np.eye(3), mid), radius=r)
        z = axis / length
        ref = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        xdir = np.cross(ref, z)
        xdir /= np.linalg.norm(xdir)
        ydir = np.cross(z, xdir)
        R = np.column_stack([xdir, ydir, z])
        return PrimitiveShape("capsule", Pose(R, mid), radius=r,
                              half_length=0.5 * length)
    if kind == "cylinder":
        r = float(d["radius"])
        hl = float(d["half_length"])
        if r <= 0 or hl <= 0:
            raise ValueError("cylinder radius and half_length must be positive")
        return PrimitiveShape("cylinder",
                              _pose_from_dict({"xyz": d.get("center", (0, 0, 0)),
                                               "rpy": d.get("rpy", (0, 0, 0))}),
                              radius=r, half_length=hl)
    if kind == "sphere":
        r = float(d["radius"])
        if r <= 0:
            raise ValueError("sphere radius must be positive")
        return PrimitiveShape("sphere",
                              Pose(np.eye(3), np.asarray(d.get("center", (0, 0, 0)), float)),
                              radius=r)
    raise ValueError(f"unknown shape type {kind!r}")


def load_robot_model(source) -> RobotModel:
    """Build a RobotModel from a config dict or a JSON file path."""
    if isinstance(source, (str, Path)):
        with open(source) as f:
            cfg = json.load(f)
    else:
        cfg = source

    base = cfg["base"]
    arm = cfg["arm"]
    joints = []
    if len(arm["joints"]) != N_ARM_JOINTS:
        raise ValueError(f"expected {N_ARM_JOINTS} arm joints, "
                         f"got {len(arm['joints'])}")
    for jd in arm["joints"]:
        axis = np.asarray(jd["axis"], float)
        nrm = np.linalg.norm(axis)
        if abs(nrm - 1.0) > 1e-6:
            raise ValueError("joint axis must be a unit vector")
        lo, hi = (float(v) for v in jd["position_limits"])
        if not lo < hi:
            raise ValueError("position limits must satisfy lower < upper")
        vel = float(jd["velocity_limit"])
        if vel <= 0:
            raise ValueError("velocity limit must be positive")
        joints.append(JointSpec(axis / nrm, _pose_from_dict(jd["origin"]),
                                (lo, hi), vel))

    link_shape_lists = [tuple(_shape_from_dict(s) for s in base.get("shapes", []))]
    arm_shape_cfg = arm["link_shapes"]
    if len(arm_shape_cfg) != 8:
        raise ValueError("arm link_shapes must list 8 links (7 arm + hand)")
    for shapes in arm_shape_cfg:
        link_shape_lists.append(tuple(_shape_from_dict(s) for s in shapes))

    spheres = cfg.get("spheres", [])
    s_links = np.array([int(s["link"]) for s in spheres], dtype=int)
    if s_links.size and (s_links.min() < 0 or s_links.max() >= N_LINKS):
        raise ValueError("sphere link index out of range")
    s_centers = np.array([s["center"] for s in spheres], float).reshape(-1, 3)
    s_radii = np.array([float(s["radius"]) for s in spheres])
    if np.any(s_radii <= 0):
        raise ValueError("sphere radii must be positive")

    home = np.asarray(arm.get("home", np.zeros(N_ARM_JOINTS)), float)
    lims = base["velocity_limits"]
    return RobotModel(
        name=cfg.get("name", "robot"),
        base_velocity_limits=(float(lims["linear"]), float(lims["angular"])),
        arm_mount=_pose_from_dict(base["arm_mount"]),
        joints=tuple(joints),
        hand_transform=_pose_from_dict(arm["hand_transform"]),
        ee_transform=_pose_from_dict(arm["ee_transform"]),
        link_shapes=tuple(link_shape_lists),
        sphere_links=s_links,
        sphere_centers=s_centers,
        sphere_radii=s_radii,
        home_q=home,
        point_presets=dict(cfg.get("point_presets",
                                   {"coarse": 2358, "fine": 9476})),
    )


def default_model_path() -> Path:
    return Path(__file__).parent / "configs" / "frankie.json"


def load_default_model() -> RobotModel:
    return load_robot_model(default_model_path())
