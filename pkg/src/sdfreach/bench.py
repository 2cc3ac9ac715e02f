"""Kinematic simulation loop and the randomized reaching benchmark.

Scenario generators build Bookshelf and Table scenes from documented
constant ranges, rejection-sampling the target pose until the hand body
clears the obstacles. Trials integrate the controller at a fixed rate and
classify the outcome (success / collision / local minimum / timeout).

Distance bookkeeping uses per-point Lipschitz lower bounds: a point's cached
bound shrinks by (a bound on) its displacement each step and the field is
only re-evaluated where the bound enters the zone of interest. This keeps
dense representations affordable without ever missing a contact: bounds are
sound, and everything near the safety thresholds is evaluated exactly.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import controller as ctl
from . import kinematics as kin
from . import robot_shape as rs
from . import sdf
from .controller import CollisionData, ControllerConfig, StepStatus
from .kinematics import Pose, RobotModel, RobotState

DT_DEFAULT = 0.02          # 50 Hz control loop
MAX_STEPS_DEFAULT = 3000   # 60 s simulated
SUCCESS_TRANS_TOL = 0.02   # m
SUCCESS_ANG_TOL = 0.1      # rad
INFEASIBLE_STREAK_LIMIT = 10
FROZEN_STREAK_LIMIT = 25
FROZEN_EPS = 1e-9
AUDIT_SEED = 10007
AUDIT_MULTIPLIER = 4

# conservative per-step point-motion bound helpers (meters of travel per
# unit of each velocity coordinate)
_YAW_RADIUS = 1.6
_JOINT_RADIUS = 1.2


class Outcome(enum.Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    LOCAL_MINIMUM = "local_minimum"
    TIMEOUT = "timeout"


@dataclass
class Scenario:
    kind: str                  # "bookshelf" | "table"
    seed: int
    scene: sdf.SdfNode
    target: Pose
    start: RobotState

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "scene": self.scene.to_dict(),
            "target": {"rotation": self.target.rotation.tolist(),
                       "translation": self.target.translation.tolist()},
            "start": {"base": self.start.base_pose.tolist(),
                      "arm_q": self.start.arm_q.tolist()},
        }

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        return Scenario(
            kind=d["kind"], seed=int(d["seed"]),
            scene=sdf.node_from_dict(d["scene"]),
            target=Pose(np.asarray(d["target"]["rotation"], float),
                        np.asarray(d["target"]["translation"], float)),
            start=RobotState(np.asarray(d["start"]["base"], float),
                             np.asarray(d["start"]["arm_q"], float)),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @staticmethod
    def load(path: str | Path) -> "Scenario":
        with open(path) as f:
            return Scenario.from_dict(json.load(f))


@dataclass
class TrialRecord:
    seed: int
    kind: str
    outcome: Outcome
    steps: int
    ee_accel_mean: float
    min_distance: float        # tracked-representation minimum over the trial
    min_audit_distance: float  # denser audit set minimum over the trial
    wall_time: float
    step_time_mean: float      # controller-only seconds per step
    final_trans_err: float
    final_ang_err: float
    clamp_events: int
    trajectory: list | None = None


@dataclass
class BenchmarkSummary:
    kind: str
    n_trials: int
    success_rate: float
    collision_rate: float
    local_minimum_rate: float
    mean_abs_accel: float      # successes only
    mean_step_time: float
    config_hash: str
    seeds: list[int]
    records: list[TrialRecord]

    def to_dict(self, include_records=True) -> dict:
        d = {
            "kind": self.kind,
            "n_trials": self.n_trials,
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "local_minimum_rate": self.local_minimum_rate,
            "mean_abs_accel": self.mean_abs_accel,
            "mean_step_time": self.mean_step_time,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
        }
        if include_records:
            d["trials"] = [
                {"seed": r.seed, "outcome": r.outcome.value, "steps": r.steps,
                 "ee_accel_mean": r.ee_accel_mean,
                 "min_distance": r.min_distance,
                 "min_audit_distance": r.min_audit_distance}
                for r in self.records
            ]
        return d


# ---------------------------------------------------------------------------
# Representation presets
# ---------------------------------------------------------------------------

# The sparser the representation, the larger the stopping distance it needs
# to keep unsampled surface from reaching an obstacle (coarse sets also get a
# faster damper so the safety bound d_s - eta_c * dt stays below the
# worst-case sample gap).
REPRESENTATIONS = {
    "points-fine": {"kind": "points", "preset": "fine",
                    "stop_distance": 0.03, "collision_damper_gain": 1.25},
    "points-coarse": {"kind": "points", "preset": "coarse",
                      "stop_distance": 0.055, "collision_damper_gain": 2.25},
    "spheres": {"kind": "spheres",
                "stop_distance": 0.02, "collision_damper_gain": 1.0},
}


@dataclass
class TrialConfig:
    model: RobotModel
    rep: rs.PointsRep | rs.SpheresRep
    controller: ControllerConfig
    audit: rs.PointsRep | None
    dt: float = DT_DEFAULT
    max_steps: int = MAX_STEPS_DEFAULT
    store_trajectory: bool = False

    def hash_payload(self) -> dict:
        return {
            "model": self.model.name,
            "rep_count": self.rep.total_count,
            "rep_kind": type(self.rep).__name__,
            "controller": self.controller.to_dict(),
            "dt": self.dt,
            "max_steps": self.max_steps,
        }


def make_trial_config(model: RobotModel, representation: str,
                      base_config: ControllerConfig | None = None,
                      constraints: bool = True, active_cost: bool = True,
                      lambda_c_max: float | None = None,
                      points_file: str | None = None,
                      dt: float = DT_DEFAULT,
                      max_steps: int = MAX_STEPS_DEFAULT,
                      audit: bool = True) -> TrialConfig:
    """Build the per-trial bundle for a named representation preset."""
    cfg = base_config or ControllerConfig()
    if representation == "points-file":
        if points_file is None:
            raise ValueError("points-file representation needs a file path")
        rep = rs.load_points(points_file, model)
        if rep.total_count == 0:
            raise ValueError("point-set file holds no points")
        overrides = {}
    else:
        try:
            spec = REPRESENTATIONS[representation]
        except KeyError:
            raise ValueError(f"unknown representation {representation!r}") from None
        if spec["kind"] == "points":
            rep = rs.preset_rep(model, spec["preset"])
        else:
            rep = rs.sphere_rep(model)
        overrides = {k: spec[k] for k in
                     ("stop_distance", "collision_damper_gain")}
    cfg = cfg.replace(constraints_enabled=constraints,
                      active_cost_enabled=active_cost, **overrides)
    if lambda_c_max is not None:
        cfg = cfg.replace(lambda_c_max=lambda_c_max,
                          active_cost_enabled=active_cost and lambda_c_max > 0)
    cfg.validate()
    audit_rep = None
    if audit:
        n_base = rep.total_count if isinstance(rep, rs.PointsRep) \
            else int(model.point_presets["coarse"])
        audit_rep = rs.sample_points(model, AUDIT_MULTIPLIER * n_base,
                                     seed=AUDIT_SEED)
    return TrialConfig(model=model, rep=rep, controller=cfg, audit=audit_rep,
                       dt=dt, max_steps=max_steps)


def config_hash(setup: TrialConfig) -> str:
    payload = json.dumps(setup.hash_payload(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Scenario generation (documented constant ranges)
# ---------------------------------------------------------------------------

BOOKSHELF = {
    "front_x": 1.5, "depth": 0.42, "half_width": 0.5,
    "wall_thickness": 0.025, "plate_thickness": 0.03,
    "bottom_height": (0.55, 0.75),       # top face of the bottom plate
    "cavity_height": (0.26, 0.36),
    "upper_cavity": 0.35,
    "lower_plate_height": 0.12,
    "cylinder_radius": (0.035, 0.07),
    "cylinder_height": (0.18, 0.32),
    "cylinder_x_offset": (0.06, 0.15),   # from the front edge
    "cylinder_y": (-0.34, 0.34),
    "cylinder_min_gap": 0.27,
    "guard_lateral": 0.24,               # a cylinder must flank the target
    "target_x_offset": (0.15, 0.32),
    "target_y": (-0.28, 0.28),
    "target_z_above": 0.10,              # above the bottom plate
    "target_z_below": 0.12,              # below the top plate
    "target_yaw": (-0.25, 0.25),
    "target_roll": (-0.25, 0.25),
    "start_x": (-0.1, 0.4),
    "start_y": (-0.45, 0.45),
    "start_yaw": (-0.35, 0.35),
}

TABLE = {
    "center_x": 1.45, "half_length": 0.65, "half_width": 0.425,
    "top_thickness": 0.04,
    "height": (0.58, 0.78),              # top surface
    "leg_half": 0.03,
    "cylinder_count": 4,
    "cylinder_radius": (0.04, 0.075),
    "cylinder_height": (0.22, 0.42),
    "cylinder_x": (0.92, 1.42),
    "cylinder_y": (-0.33, 0.33),
    "cylinder_min_gap": 0.17,
    "target_x": (0.95, 1.28),
    "target_y": (-0.28, 0.28),
    "target_z_above": (0.05, 0.16),
    "target_tilt": (0.15, 0.55),
    "target_yaw": (-0.3, 0.3),
    "target_roll": (-0.3, 0.3),
    "guard_lateral": 0.20,
    "guard_ahead": 0.08,                 # guard cylinder this far before target
    "start_x": (-0.25, 0.25),
    "start_y": (-0.5, 0.5),
    "start_yaw": (-0.35, 0.35),
}

TARGET_CLEARANCE = 0.05   # hand-body clearance enforced at generation
START_CLEARANCE = 0.05
GENERATION_LIMIT = 1000

_validation_points_cache: dict[int, tuple] = {}


def _hand_validation_points(model: RobotModel):
    """Local points on the last two links, used to clear target poses."""
    key = id(model)
    entry = _validation_points_cache.get(key)
    if entry is None or entry[0] is not model:
        probes = rs.sample_points(model, 3000, seed=424242)
        idx7 = probes._groups[7]
        idx8 = probes._groups[8]
        # keep the model in the entry so its id cannot be recycled
        entry = (model, probes.local_points[idx7], probes.local_points[idx8])
        _validation_points_cache[key] = entry
    return entry[1], entry[2]


def _target_clear(model: RobotModel, scene, target: Pose,
                  clearance: float) -> bool:
    p7, p8 = _hand_validation_points(model)
    hand_pose = target @ model.ee_transform.inverse()
    link7_pose = hand_pose @ model.hand_transform.inverse()
    pts = np.vstack([link7_pose.transform(p7), hand_pose.transform(p8)])
    return bool(scene.distance(pts).min() >= clearance)


def _start_clear(model: RobotModel, scene, state: RobotState,
                 clearance: float) -> bool:
    rep = rs.sphere_rep(model)
    d, _, _, _ = rs.sphere_distances(rep, scene, model, state)
    return bool(d.min() >= clearance)


def _target_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    # approach axis = EE z rotated to the horizontal (+ optional downward
    # tilt), then world yaw and tool roll
    return kin.rotz(yaw) @ kin.rpy_matrix(0.0, pitch, 0.0) @ kin.rotz(roll)


def generate_bookshelf(seed: int, model: RobotModel | None = None) -> Scenario:
    """Randomized bookshelf reach; deterministic for a given seed."""
    model = model or kin.load_default_model()
    P = BOOKSHELF
    rng = np.random.default_rng([17, seed])
    for _ in range(GENERATION_LIMIT):
        h_b = rng.uniform(*P["bottom_height"])
        cavity = rng.uniform(*P["cavity_height"])
        h_t = h_b + cavity
        fx, depth, hw = P["front_x"], P["depth"], P["half_width"]
        wt, pt = P["wall_thickness"], P["plate_thickness"]
        cx = fx + depth / 2
        h_roof = h_t + P["upper_cavity"]
        full_h = h_roof + pt
        boxes = [
            # lower plate near the floor, bottom/top plates, roof plate
            sdf.Box(Pose.from_xyz_rpy((cx, 0, P["lower_plate_height"] - pt / 2)),
                    np.array([depth / 2, hw, pt / 2])),
            sdf.Box(Pose.from_xyz_rpy((cx, 0, h_b - pt / 2)),
                    np.array([depth / 2, hw, pt / 2])),
            sdf.Box(Pose.from_xyz_rpy((cx, 0, h_t + pt / 2)),
                    np.array([depth / 2, hw, pt / 2])),
            sdf.Box(Pose.from_xyz_rpy((cx, 0, h_roof + pt / 2)),
                    np.array([depth / 2, hw, pt / 2])),
            # side walls and back wall, floor to roof
            sdf.Box(Pose.from_xyz_rpy((cx, hw + wt / 2, full_h / 2)),
                    np.array([depth / 2, wt / 2, full_h / 2])),
            sdf.Box(Pose.from_xyz_rpy((cx, -hw - wt / 2, full_h / 2)),
                    np.array([depth / 2, wt / 2, full_h / 2])),
            sdf.Box(Pose.from_xyz_rpy((fx + depth + wt / 2, 0, full_h / 2)),
                    np.array([wt / 2, hw + wt, full_h / 2])),
        ]
        # two cylinders on the bottom plate near the front edge
        for _ in range(GENERATION_LIMIT):
            y1 = rng.uniform(*P["cylinder_y"])
            y2 = rng.uniform(*P["cylinder_y"])
            if abs(y1 - y2) >= P["cylinder_min_gap"]:
                break
        cyls = []
        for y in (y1, y2):
            r = rng.uniform(*P["cylinder_radius"])
            h = rng.uniform(*P["cylinder_height"])
            x = fx + rng.uniform(*P["cylinder_x_offset"])
            cyls.append(sdf.Cylinder(Pose.from_xyz_rpy((x, y, h_b + h / 2)),
                                     r, h / 2))
        scene = sdf.Union(tuple(boxes + cyls))
        t_pos = np.array([
            fx + rng.uniform(*P["target_x_offset"]),
            rng.uniform(*P["target_y"]),
            rng.uniform(h_b + P["target_z_above"], h_t - P["target_z_below"]),
        ])
        # at least one cylinder must flank the approach corridor
        guarded = any(abs(c.pose.translation[1] - t_pos[1]) < P["guard_lateral"]
                      for c in cyls)
        if not guarded:
            continue
        R = _target_rotation(rng.uniform(*P["target_yaw"]), math.pi / 2,
                             rng.uniform(*P["target_roll"]))
        target = Pose(R, t_pos)
        start = RobotState.from_values(rng.uniform(*P["start_x"]),
                                       rng.uniform(*P["start_y"]),
                                       rng.uniform(*P["start_yaw"]),
                                       model.home_q)
        if not _target_clear(model, scene, target, TARGET_CLEARANCE):
            continue
        if not _start_clear(model, scene, start, START_CLEARANCE):
            continue
        return Scenario("bookshelf", seed, scene, target, start)
    raise RuntimeError("bookshelf generation failed: ranges admit no valid "
                       "target (misconfiguration)")


def generate_table(seed: int, model: RobotModel | None = None) -> Scenario:
    """Randomized table reach behind cylinders; deterministic per seed."""
    model = model or kin.load_default_model()
    P = TABLE
    rng = np.random.default_rng([23, seed])
    for _ in range(GENERATION_LIMIT):
        h = rng.uniform(*P["height"])
        cx, hl, hw = P["center_x"], P["half_length"], P["half_width"]
        tt, lh = P["top_thickness"], P["leg_half"]
        parts = [sdf.Box(Pose.from_xyz_rpy((cx, 0, h - tt / 2)),
                         np.array([hl, hw, tt / 2]))]
        for sx in (-1, 1):
            for sy in (-1, 1):
                parts.append(sdf.Box(
                    Pose.from_xyz_rpy((cx + sx * (hl - 2 * lh),
                                       sy * (hw - 2 * lh),
                                       (h - tt) / 2)),
                    np.array([lh, lh, (h - tt) / 2])))
        # four cylinders standing on the top
        centers = []
        for _ in range(GENERATION_LIMIT):
            centers = [(rng.uniform(*P["cylinder_x"]),
                        rng.uniform(*P["cylinder_y"]))
                       for _ in range(P["cylinder_count"])]
            ok = all(math.hypot(a[0] - b[0], a[1] - b[1]) >= P["cylinder_min_gap"]
                     for i, a in enumerate(centers)
                     for b in centers[i + 1:])
            if ok:
                break
        cyls = []
        for (x, y) in centers:
            r = rng.uniform(*P["cylinder_radius"])
            ch = rng.uniform(*P["cylinder_height"])
            cyls.append(sdf.Cylinder(Pose.from_xyz_rpy((x, y, h + ch / 2)),
                                     r, ch / 2))
        scene = sdf.Union(tuple(parts + cyls))
        target = None
        for _ in range(40):  # several target draws per scene draw
            t_pos = np.array([rng.uniform(*P["target_x"]),
                              rng.uniform(*P["target_y"]),
                              h + rng.uniform(*P["target_z_above"])])
            # require a guarding cylinder between the robot and the target
            guarded = any(x < t_pos[0] - P["guard_ahead"]
                          and abs(y - t_pos[1]) < P["guard_lateral"]
                          for (x, y) in centers)
            if not guarded:
                continue
            R = _target_rotation(rng.uniform(*P["target_yaw"]),
                                 math.pi / 2 - rng.uniform(*P["target_tilt"]),
                                 rng.uniform(*P["target_roll"]))
            cand = Pose(R, t_pos)
            if _target_clear(model, scene, cand, TARGET_CLEARANCE):
                target = cand
                break
        if target is None:
            continue
        start = RobotState.from_values(rng.uniform(*P["start_x"]),
                                       rng.uniform(*P["start_y"]),
                                       rng.uniform(*P["start_yaw"]),
                                       model.home_q)
        if not _start_clear(model, scene, start, START_CLEARANCE):
            continue
        return Scenario("table", seed, scene, target, start)
    raise RuntimeError("table generation failed: ranges admit no valid "
                       "target (misconfiguration)")


GENERATORS = {"bookshelf": generate_bookshelf, "table": generate_table}


def generate_scenario(kind: str, seed: int,
                      model: RobotModel | None = None) -> Scenario:
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown scenario kind {kind!r}") from None
    return gen(seed, model)


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def integrate(model: RobotModel, state: RobotState, qdot: np.ndarray,
              dt: float) -> RobotState:
    """Euler step of the nonholonomic base plus arm joints (clamped)."""
    new_state, _ = integrate_with_events(model, state, qdot, dt)
    return new_state


def integrate_with_events(model: RobotModel, state: RobotState,
                          qdot: np.ndarray, dt: float):
    """As ``integrate`` but also reports whether a position clamp occurred."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, theta = state.base_pose
    v, w = qdot[0], qdot[1]
    base = np.array([x + v * math.cos(theta) * dt,
                     y + v * math.sin(theta) * dt,
                     theta + w * dt])
    q = state.arm_q + qdot[2:] * dt
    lo, hi = model.position_limits()
    clamped = np.clip(q, lo, hi)
    hit = bool(np.any(clamped != q))
    return RobotState(base, clamped), hit


# ---------------------------------------------------------------------------
# Lipschitz-bounded distance tracking
# ---------------------------------------------------------------------------

class CachedDistances:
    """Per-point lower bounds on obstacle distance for one moving point set.

    Bounds shrink by a conservative per-step displacement estimate; exact
    re-evaluation happens only where a bound drops into the zone of interest,
    so far-away points cost one subtraction per step.
    """

    def __init__(self, scene, rep, zone: float):
        self.scene = scene
        self.zone = zone
        if isinstance(rep, rs.SpheresRep):
            self.is_spheres = True
            self.radii = rep.radii
        else:
            self.is_spheres = False
            self.radii = None
        self.rep = rep
        self.lb = None
        self._prev_base = None
        self._prev_q = None

    def _displacement_bound(self, state: RobotState) -> float:
        if self._prev_base is None:
            return math.inf
        db = state.base_pose - self._prev_base
        dq = state.arm_q - self._prev_q
        return (math.hypot(db[0], db[1]) + _YAW_RADIUS * abs(db[2])
                + _JOINT_RADIUS * float(np.abs(dq).sum()))

    def _world(self, model, state, fk, idx=None):
        R, t, _, _ = fk
        if self.is_spheres:
            pts, links = self.rep.centers, self.rep.link_index
        else:
            pts, links = self.rep.local_points, self.rep.link_index
        if idx is not None:
            pts, links = pts[idx], links[idx]
        out = np.empty_like(pts)
        for k in range(kin.N_LINKS):
            sel = links == k
            if np.any(sel):
                out[sel] = pts[sel] @ R[k].T + t[k]
        return out, links

    def refresh(self, model, state, fk):
        """Advance the bounds to this state; evaluate the zone exactly.

        Returns (lb, exact_idx, world_exact, d_exact) where ``lb`` is the
        full lower-bound array (exact at ``exact_idx``).
        """
        disp = self._displacement_bound(state)
        if self.lb is None or not math.isfinite(disp):
            world, links = self._world(model, state, fk)
            d = self.scene.distance(world)
            if self.is_spheres:
                d = d - self.radii
            self.lb = d
            exact_idx = np.arange(d.shape[0])
            world_exact, d_exact = world, d
        else:
            self.lb = self.lb - disp
            exact_idx = np.flatnonzero(self.lb < self.zone)
            if exact_idx.size:
                world_exact, links = self._world(model, state, fk, exact_idx)
                d_exact = self.scene.distance(world_exact)
                if self.is_spheres:
                    d_exact = d_exact - self.radii[exact_idx]
                self.lb[exact_idx] = d_exact
            else:
                world_exact = np.zeros((0, 3))
                d_exact = np.zeros(0)
        self._prev_base = state.base_pose.copy()
        self._prev_q = state.arm_q.copy()
        return self.lb, exact_idx, world_exact, d_exact

    def min_bound(self) -> float:
        return float(self.lb.min()) if self.lb is not None and self.lb.size \
            else math.inf


def _collision_data_from_cache(cache: CachedDistances, model, state, fk,
                               cfg: ControllerConfig) -> CollisionData:
    lb, exact_idx, world_exact, d_exact = cache.refresh(model, state, fk)
    in_range = d_exact < cfg.influence_distance
    pts = world_exact[in_range]
    d = d_exact[in_range]
    links = cache.rep.link_index[exact_idx[in_range]]
    if pts.shape[0]:
        _, g, _ = cache.scene.distance_and_gradient(pts)
    else:
        g = np.zeros((0, 3))
    return CollisionData(points=pts, links=links, distances=d, gradients=g,
                         r_d=cache.min_bound())


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------

def run_trial(scenario: Scenario, setup: TrialConfig,
              dt: float | None = None,
              max_steps: int | None = None) -> TrialRecord:
    """Run one reaching trial to completion."""
    dt = setup.dt if dt is None else dt
    max_steps = setup.max_steps if max_steps is None else max_steps
    model, cfg = setup.model, setup.controller
    scene, target = scenario.scene, scenario.target

    tracked = CachedDistances(scene, setup.rep,
                              zone=cfg.influence_distance + 0.02)
    audit = None
    if setup.audit is not None:
        audit = CachedDistances(scene, setup.audit,
                                zone=cfg.stop_distance + 0.02)

    state = scenario.start
    outcome = Outcome.TIMEOUT
    steps = 0
    infeasible_streak = 0
    frozen_streak = 0
    clamp_events = 0
    min_tracked = math.inf
    min_audit = math.inf
    ee_positions = []
    trajectory = [] if setup.store_trajectory else None
    step_time = 0.0
    final_terr = math.nan
    final_aerr = math.nan
    t0 = time.perf_counter()

    for steps in range(1, max_steps + 1):
        fk = kin._fk_arrays(model, state)
        data = _collision_data_from_cache(tracked, model, state, fk, cfg)
        min_tracked = min(min_tracked, data.r_d)
        if audit is not None:
            audit.refresh(model, state, fk)
            min_audit = min(min_audit, audit.min_bound())
        ee = Pose(fk[0][9], fk[1][9])
        ee_positions.append(fk[1][9].copy())
        final_terr, final_aerr = ctl.pose_error(ee, target)

        if min(min_tracked, min_audit) <= 0.0:
            outcome = Outcome.COLLISION
            break
        if final_terr <= SUCCESS_TRANS_TOL and final_aerr <= SUCCESS_ANG_TOL:
            outcome = Outcome.SUCCESS
            break

        t_step = time.perf_counter()
        result = ctl.step(state, target, scene, setup.rep, model, cfg,
                          data=data)
        step_time += time.perf_counter() - t_step
        if trajectory is not None:
            d = result.diagnostics
            trajectory.append((state.base_pose.copy(), state.arm_q.copy(),
                               fk[1][9].copy(), data.r_d, d.lambda_c,
                               d.manipulability, result.status.value))

        if result.status == StepStatus.INFEASIBLE:
            infeasible_streak += 1
            if infeasible_streak >= INFEASIBLE_STREAK_LIMIT:
                outcome = Outcome.LOCAL_MINIMUM
                break
        else:
            infeasible_streak = 0

        new_state, hit = integrate_with_events(model, state, result.qdot, dt)
        clamp_events += int(hit)
        delta = max(float(np.abs(new_state.base_pose - state.base_pose).max()),
                    float(np.abs(new_state.arm_q - state.arm_q).max()))
        if delta < FROZEN_EPS:
            frozen_streak += 1
            if frozen_streak >= FROZEN_STREAK_LIMIT:
                # numerically frozen: every future step would repeat exactly
                outcome = Outcome.LOCAL_MINIMUM
                break
        else:
            frozen_streak = 0
        state = new_state

    wall = time.perf_counter() - t0
    accel = _mean_abs_ee_accel(ee_positions, dt)
    return TrialRecord(
        seed=scenario.seed, kind=scenario.kind, outcome=outcome, steps=steps,
        ee_accel_mean=accel, min_distance=float(min_tracked),
        min_audit_distance=float(min_audit), wall_time=wall,
        step_time_mean=step_time / max(steps, 1),
        final_trans_err=final_terr, final_ang_err=final_aerr,
        clamp_events=clamp_events, trajectory=trajectory)


def _mean_abs_ee_accel(positions: list, dt: float) -> float:
    """Mean |a| from central differences of the central-difference velocity."""
    p = np.asarray(positions)
    if p.shape[0] < 5:
        return 0.0
    v = (p[2:] - p[:-2]) / (2 * dt)
    a = (v[2:] - v[:-2]) / (2 * dt)
    return float(np.linalg.norm(a, axis=1).mean())


# ---------------------------------------------------------------------------
# Benchmark driver
# ---------------------------------------------------------------------------

_POOL_CONTEXT: dict = {}


def _pool_init(setup, kind):
    _POOL_CONTEXT["setup"] = setup
    _POOL_CONTEXT["kind"] = kind


def _pool_task(seed: int) -> TrialRecord:
    setup = _POOL_CONTEXT["setup"]
    kind = _POOL_CONTEXT["kind"]
    scenario = generate_scenario(kind, seed, setup.model)
    return run_trial(scenario, setup)


def run_benchmark(kind: str, n_trials: int, setup: TrialConfig,
                  seeds=None, parallelism: int = 1,
                  scenarios=None) -> BenchmarkSummary:
    """Run trials over a seed list and aggregate the metrics.

    Deterministic for a given (seed list, setup), independent of
    ``parallelism``: results are keyed and sorted by seed. Wall-clock fields
    are the only ones that vary between runs.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if seeds is None:
        seeds = list(range(n_trials))
    seeds = [int(s) for s in seeds][:n_trials] if len(seeds) >= n_trials \
        else [int(s) for s in seeds]
    if len(seeds) != n_trials:
        raise ValueError("seed list shorter than n_trials")

    if scenarios is not None:
        records = [run_trial(sc, setup) for sc in scenarios]
    elif parallelism <= 1:
        records = []
        for s in seeds:
            scenario = generate_scenario(kind, s, setup.model)
            records.append(run_trial(scenario, setup))
    else:
        import multiprocessing as mp
        ctx = mp.get_context("fork")
        with ctx.Pool(parallelism, initializer=_pool_init,
                      initargs=(setup, kind)) as pool:
            records = pool.map(_pool_task, seeds)
    records.sort(key=lambda r: r.seed)
    return summarize(kind, records, setup, seeds)


def summarize(kind: str, records: list[TrialRecord], setup: TrialConfig,
              seeds) -> BenchmarkSummary:
    n = len(records)
    succ = [r for r in records if r.outcome == Outcome.SUCCESS]
    coll = [r for r in records if r.outcome == Outcome.COLLISION]
    locm = [r for r in records if r.outcome in (Outcome.LOCAL_MINIMUM,
                                                Outcome.TIMEOUT)]
    accel = float(np.mean([r.ee_accel_mean for r in succ])) if succ else 0.0
    return BenchmarkSummary(
        kind=kind, n_trials=n,
        success_rate=100.0 * len(succ) / n,
        collision_rate=100.0 * len(coll) / n,
        local_minimum_rate=100.0 * len(locm) / n,
        mean_abs_accel=accel,
        mean_step_time=float(np.mean([r.step_time_mean for r in records])),
        config_hash=config_hash(setup),
        seeds=[int(s) for s in seeds],
        records=records,
    )


def sweep_lambda(kind: str, lambda_values, n_trials: int,
                 model: RobotModel, representation: str = "spheres",
                 base_config: ControllerConfig | None = None,
                 seeds=None, parallelism: int = 1) -> dict:
    """One benchmark per lambda_c_max value on shared seeds."""
    out = {}
    for lam in lambda_values:
        if lam < 0:
            raise ValueError("lambda values must be >= 0")
        setup = make_trial_config(model, representation,
                                  base_config=base_config,
                                  constraints=True, active_cost=lam > 0,
                                  lambda_c_max=float(lam))
        out[float(lam)] = run_benchmark(kind, n_trials, setup, seeds=seeds,
                                        parallelism=parallelism)
    return out


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

CSV_HEADER = ("seed,kind,outcome,steps,ee_accel_mean,min_distance,"
              "min_audit_distance,step_time_mean,wall_time\n")


def write_csv(summary: BenchmarkSummary, path: str | Path) -> None:
    with open(path, "w") as f:
        f.write(f"# config {summary.config_hash}\n")
        f.write(CSV_HEADER)
        for r in summary.records:
            f.write(f"{r.seed},{r.kind},{r.outcome.value},{r.steps},"
                    f"{r.ee_accel_mean:.6f},{r.min_distance:.6f},"
                    f"{r.min_audit_distance:.6f},{r.step_time_mean:.6f},"
                    f"{r.wall_time:.3f}\n")


def write_summary_json(summary: BenchmarkSummary, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(summary.to_dict(), f, indent=1)
