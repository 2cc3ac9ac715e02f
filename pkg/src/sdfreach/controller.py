"""Per-step whole-body QP controller.

Every control step assembles a dense QP over x = (qdot, slack):

* equality: [J_ee | I6] x = capped pose-servo velocity (slack relaxes it),
* cost: joint-velocity and slack quadratic penalties plus linear terms that
  reward manipulability, base-toward-EE orientation, and (scaled by the
  dynamic gain) motion that increases the weighted-average obstacle distance,
* inequalities: joint-limit velocity dampers and one obstacle velocity
  damper per surface point within the influence distance,
* box bounds: base/joint velocity limits and slack bounds.

Obstacle damper rows bound the approach rate: with g the outward field
gradient and J the point's translational Jacobian, rows read
``-(g . J) qdot <= eta_c (d - d_s) / (d_i - d_s)``, so at d = d_s no further
approach is allowed and inside d_s the negative bound forces retreat.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kinematics as kin
from . import robot_shape as rs
from .kinematics import Pose, RobotModel, RobotState
from .qp import QpProblem, QpSolution, SolverSettings, SolveStatus, solve

N_SLACK = 6
X_DIM = kin.DOF + N_SLACK


@dataclass(frozen=True)
class ControllerConfig:
    influence_distance: float = 0.3      # d_i, meters
    stop_distance: float = 0.02          # d_s, meters
    collision_damper_gain: float = 1.0   # eta_c
    lambda_c_max: float = 1.0
    k_translation: float = 2.0           # 1/s
    k_rotation: float = 2.0              # 1/s
    velocity_cap_linear: float = 0.5     # m/s
    velocity_cap_angular: float = 1.0    # rad/s
    joint_velocity_weight: float = 0.01  # w_q
    base_weight_factor: float = 10.0     # multiplies w_q on the base entries
    slack_weight: float = 100.0          # w_delta at the goal (stiffest)
    # The slack stiffness adapts to the translational error, as in holistic
    # reactive controllers: w = slack_weight * clamp(ref/err, min_ratio, 1).
    # Far from the goal the equality is soft, letting the secondary costs
    # (including the active collision term) bend the approach path.
    slack_ref_error: float = 0.02        # m; stiffness saturates below this
    slack_min_ratio: float = 0.02
    joint_limit_influence: float = 0.35  # rho_i, rad
    joint_limit_stop: float = 0.05       # rho_s, rad
    joint_limit_gain: float = 1.0        # eta
    base_orientation_gain: float = 0.5   # k_eps
    active_cost_enabled: bool = True
    constraints_enabled: bool = True
    solver: SolverSettings = field(default_factory=SolverSettings)

    def validate(self) -> None:
        if not 0.0 < self.stop_distance < self.influence_distance:
            raise ValueError("need 0 < stop_distance < influence_distance")
        if self.lambda_c_max < 0:
            raise ValueError("lambda_c_max must be nonnegative")
        for name in ("collision_damper_gain", "k_translation", "k_rotation",
                     "velocity_cap_linear", "velocity_cap_angular",
                     "joint_velocity_weight", "slack_weight",
                     "joint_limit_gain", "base_weight_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.joint_limit_stop < self.joint_limit_influence:
            raise ValueError("need 0 < joint_limit_stop < joint_limit_influence")

    def replace(self, **kw) -> "ControllerConfig":
        d = asdict(self)
        d["solver"] = self.solver
        d.update(kw)
        return ControllerConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ControllerConfig":
        d = dict(d)
        if "solver" in d and isinstance(d["solver"], dict):
            d["solver"] = SolverSettings(**d["solver"])
        cfg = ControllerConfig(**d)
        cfg.validate()
        return cfg

    @staticmethod
    def from_json(path: str | Path) -> "ControllerConfig":
        with open(path) as f:
            return ControllerConfig.from_dict(json.load(f))


class StepStatus(enum.Enum):
    OK = "ok"
    INFEASIBLE = "infeasible"
    NEAR_SINGULAR = "near_singular"


@dataclass
class StepDiagnostics:
    min_distance: float          # r_d: minimum tracked obstacle distance
    active_constraints: int      # collision rows in the QP
    lambda_c: float
    manipulability: float
    penetration_imminent: bool
    ee_pose: Pose
    solver_status: SolveStatus | None
    solver_iterations: int


@dataclass
class StepResult:
    qdot: np.ndarray
    slack: np.ndarray
    status: StepStatus
    diagnostics: StepDiagnostics


@dataclass
class CollisionData:
    """Tracked-point obstacle data for one step.

    ``points``/``links``/``distances``/``gradients`` cover the points within
    the influence distance; ``r_d`` is the minimum distance over the whole
    tracked set (a sound lower bound is acceptable above the influence
    distance).
    """

    points: np.ndarray
    links: np.ndarray
    distances: np.ndarray
    gradients: np.ndarray
    r_d: float


def pose_servo(current: Pose, target: Pose, cfg: ControllerConfig) -> np.ndarray:
    """Proportional 6D servo toward the target pose, norm-capped per part."""
    v = np.empty(6)
    v[:3] = cfg.k_translation * (target.translation - current.translation)
    n = float(np.linalg.norm(v[:3]))
    if n > cfg.velocity_cap_linear:
        v[:3] *= cfg.velocity_cap_linear / n
    aa = kin.rotation_to_angle_axis(target.rotation @ current.rotation.T)
    v[3:] = cfg.k_rotation * aa
    n = float(np.linalg.norm(v[3:]))
    if n > cfg.velocity_cap_angular:
        v[3:] *= cfg.velocity_cap_angular / n
    return v


def pose_error(current: Pose, target: Pose) -> tuple[float, float]:
    """(translational, angular) error between two poses."""
    t = float(np.linalg.norm(target.translation - current.translation))
    aa = kin.rotation_to_angle_axis(target.rotation @ current.rotation.T)
    return t, float(np.linalg.norm(aa))


def joint_limit_constraints(model: RobotModel, state: RobotState,
                            cfg: ControllerConfig):
    """Velocity dampers on arm position limits; at most two rows per joint."""
    rho_i, rho_s = cfg.joint_limit_influence, cfg.joint_limit_stop
    eta = cfg.joint_limit_gain
    lo, hi = model.position_limits()
    rows, rhs = [], []
    for i in range(kin.N_ARM_JOINTS):
        up = hi[i] - state.arm_q[i]
        if up <= rho_i:
            r = np.zeros(X_DIM)
            r[2 + i] = 1.0
            rows.append(r)
            rhs.append(eta * (up - rho_s) / (rho_i - rho_s))
        down = state.arm_q[i] - lo[i]
        if down <= rho_i:
            r = np.zeros(X_DIM)
            r[2 + i] = -1.0
            rows.append(r)
            rhs.append(eta * (down - rho_s) / (rho_i - rho_s))
    if rows:
        return np.vstack(rows), np.array(rhs)
    return np.zeros((0, X_DIM)), np.zeros(0)


def distance_jacobians(model: RobotModel, state: RobotState,
                       points: np.ndarray, links: np.ndarray,
                       gradients: np.ndarray, fk=None) -> np.ndarray:
    """Rows g . J_p mapping qdot to each point's distance rate, (N, 9)."""
    J = kin.point_jacobians(model, state, points, links, fk=fk)
    return np.einsum("ni,nij->nj", gradients, J)


def collision_constraints(points, links, distances, gradients,
                          model: RobotModel, state: RobotState,
                          cfg: ControllerConfig, fk=None):
    """Velocity-damper rows for every point within the influence distance.

    Returns (A_c (m, 15), b_c (m,), penetration_imminent). Row order follows
    ascending point index. Points at or inside the stop distance emit a
    negative bound, forcing the approach rate negative (retreat).
    """
    d_i, d_s = cfg.influence_distance, cfg.stop_distance
    mask = distances < d_i
    if not np.any(mask):
        return np.zeros((0, X_DIM)), np.zeros(0), False
    d = distances[mask]
    Jd = distance_jacobians(model, state, points[mask], links[mask],
                            gradients[mask], fk=fk)
    A = np.zeros((Jd.shape[0], X_DIM))
    A[:, :kin.DOF] = -Jd
    b = cfg.collision_damper_gain * (d - d_s) / (d_i - d_s)
    return A, b, bool(np.any(d < d_s))


def collision_jacobian(distances: np.ndarray, dist_jacobians: np.ndarray,
                       cfg: ControllerConfig):
    """Distance-weighted average of the distance Jacobians plus dynamic gain.

    ``distances``/``dist_jacobians`` hold the points within the influence
    distance (rows already padded to the 9 velocity coordinates). Returns
    (J_c (9,), lambda_c); (0, 0) when no point is in range.
    """
    d_i, d_s = cfg.influence_distance, cfg.stop_distance
    if distances.size == 0:
        return np.zeros(kin.DOF), 0.0
    w = (d_i - distances) / (d_i - d_s)
    wsum = float(w.sum())
    if wsum <= 1e-12:
        return np.zeros(kin.DOF), 0.0
    Jc = (w[:, None] * dist_jacobians).sum(axis=0) / wsum
    r_d = max(float(distances.min()), d_s)  # gain saturates at the stop distance
    lam = cfg.lambda_c_max / (d_i - d_s) ** 2 * (r_d - d_i) ** 2
    return Jc, lam


def gather_collision_data(state: RobotState, scene, rep, model: RobotModel,
                          cfg: ControllerConfig, fk=None) -> CollisionData:
    """Evaluate the field over the full tracked set; keep in-range details."""
    if fk is None:
        fk = kin._fk_arrays(model, state)
    if isinstance(rep, rs.SpheresRep):
        centers, links = rs.world_sphere_centers(rep, model, state, fk=fk)
        d_all = scene.distance(centers) - rep.radii
        pts = centers
    else:
        pts, links = rs.world_points(rep, model, state, fk=fk)
        d_all = scene.distance(pts)
    mask = d_all < cfg.influence_distance
    if np.any(mask):
        _, g, _ = scene.distance_and_gradient(pts[mask])
    else:
        g = np.zeros((0, 3))
    return CollisionData(points=pts[mask], links=links[mask],
                         distances=d_all[mask], gradients=g,
                         r_d=float(d_all.min()) if d_all.size else math.inf)


def slack_stiffness(cfg: ControllerConfig, trans_err: float) -> float:
    ratio = cfg.slack_ref_error / max(trans_err, 1e-9)
    return cfg.slack_weight * min(max(ratio, cfg.slack_min_ratio), 1.0)


def _weight_matrix(model: RobotModel, cfg: ControllerConfig,
                   w_delta: float) -> np.ndarray:
    wq = np.full(kin.DOF, cfg.joint_velocity_weight)
    wq[:2] *= cfg.base_weight_factor
    return np.diag(np.concatenate([wq, np.full(N_SLACK, w_delta)]))


def _bounds(model: RobotModel, cfg: ControllerConfig, slack_scale=1.0):
    vl = model.velocity_limits()
    slack = np.concatenate([
        np.full(3, 10.0 * cfg.velocity_cap_linear * slack_scale),
        np.full(3, 10.0 * cfg.velocity_cap_angular * slack_scale),
    ])
    ub = np.concatenate([vl, slack])
    return -ub, ub


def _assemble(state, target, scene, rep, model, cfg, data=None, fk=None,
              active_cost=None, slack_scale=1.0):
    if fk is None:
        fk = kin._fk_arrays(model, state)
    if data is None:
        data = gather_collision_data(state, scene, rep, model, cfg, fk=fk)
    if active_cost is None:
        active_cost = cfg.active_cost_enabled

    R, t, _, _ = fk
    current = Pose(R[9], t[9])
    v_star = pose_servo(current, target, cfg)
    trans_err = float(np.linalg.norm(target.translation - current.translation))
    w_delta = slack_stiffness(cfg, trans_err)

    J_ee = kin.ee_jacobian(model, state)
    Aeq = np.zeros((6, X_DIM))
    Aeq[:, :kin.DOF] = J_ee
    Aeq[:, kin.DOF:] = np.eye(N_SLACK)

    m = kin.manipulability(model, state.arm_q)
    J_m = kin.manipulability_jacobian(model, state.arm_q)
    J_o = kin.base_orientation_jacobian(model, state,
                                        gain=cfg.base_orientation_gain)

    Jd_in = None
    lam = 0.0
    Jc = np.zeros(kin.DOF)
    if active_cost and data.distances.size:
        Jd_in = distance_jacobians(model, state, data.points, data.links,
                                   data.gradients, fk=fk)
        Jc, lam = collision_jacobian(data.distances, Jd_in, cfg)

    c = np.zeros(X_DIM)
    c[:kin.DOF] = -(J_m + J_o + lam * Jc)

    blocks_A = []
    blocks_b = []
    A_j, b_j = joint_limit_constraints(model, state, cfg)
    if A_j.shape[0]:
        blocks_A.append(A_j)
        blocks_b.append(b_j)
    penetration = False
    if cfg.constraints_enabled and data.distances.size:
        if Jd_in is None:
            Jd_in = distance_jacobians(model, state, data.points, data.links,
                                       data.gradients, fk=fk)
        A_c = np.zeros((Jd_in.shape[0], X_DIM))
        A_c[:, :kin.DOF] = -Jd_in
        b_c = cfg.collision_damper_gain * (data.distances - cfg.stop_distance) \
            / (cfg.influence_distance - cfg.stop_distance)
        blocks_A.append(A_c)
        blocks_b.append(b_c)
        penetration = bool(np.any(data.distances < cfg.stop_distance))

    Ain = np.vstack(blocks_A) if blocks_A else None
    bin_ = np.concatenate(blocks_b) if blocks_b else None
    lb, ub = _bounds(model, cfg, slack_scale)
    problem = QpProblem(Q=_weight_matrix(model, cfg, w_delta), c=c,
                        Aeq=Aeq, beq=v_star, Ain=Ain, bin=bin_, lb=lb, ub=ub)
    info = {
        "manipulability": m,
        "lambda_c": lam,
        "collision_rows": 0 if not cfg.constraints_enabled else int(data.distances.size),
        "penetration": penetration,
        "ee_pose": current,
        "r_d": data.r_d,
    }
    return problem, info


def assemble_qp(state: RobotState, target: Pose, scene, rep,
                model: RobotModel, cfg: ControllerConfig) -> QpProblem:
    """Build the per-step QP (assembly always succeeds)."""
    cfg.validate()
    problem, _ = _assemble(state, target, scene, rep, model, cfg)
    return problem


def _usable(sol: QpSolution, problem: QpProblem, cfg: ControllerConfig) -> bool:
    if sol.status not in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITERATIONS):
        return False
    if sol.primal_residual > cfg.solver.tol_primal:
        return False
    # re-check constraint satisfaction outside the solver: a feasible
    # iterate satisfies the dampers, which is what the safety argument needs
    if problem.Ain is not None and problem.Ain.shape[0]:
        if float((problem.Ain @ sol.x - problem.bin).max()) \
                > cfg.solver.tol_primal:
            return False
    return True


def step(state: RobotState, target: Pose, scene, rep, model: RobotModel,
         cfg: ControllerConfig, data: CollisionData | None = None) -> StepResult:
    """Assemble and solve one control step; deterministic in its inputs.

    On infeasibility the solve is retried once with tenfold slack bounds and
    the active cost disabled; if that also fails no motion is emitted.
    """
    fk = kin._fk_arrays(model, state)
    problem, info = _assemble(state, target, scene, rep, model, cfg,
                              data=data, fk=fk)
    sol = solve(problem, cfg.solver)
    if not _usable(sol, problem, cfg):
        problem2, info = _assemble(state, target, scene, rep, model, cfg,
                                   data=data, fk=fk, active_cost=False,
                                   slack_scale=10.0)
        sol2 = solve(problem2, cfg.solver)
        if _usable(sol2, problem2, cfg):
            sol = sol2
            info["lambda_c"] = 0.0
        else:
            diag = StepDiagnostics(
                min_distance=info["r_d"], active_constraints=info["collision_rows"],
                lambda_c=0.0, manipulability=info["manipulability"],
                penetration_imminent=info["penetration"], ee_pose=info["ee_pose"],
                solver_status=sol2.status, solver_iterations=sol2.iterations)
            return StepResult(qdot=np.zeros(kin.DOF), slack=np.zeros(N_SLACK),
                              status=StepStatus.INFEASIBLE, diagnostics=diag)

    vl = model.velocity_limits()
    qdot = np.clip(sol.x[:kin.DOF], -vl, vl)
    status = StepStatus.OK
    if info["manipulability"] <= kin.SINGULARITY_EPS:
        status = StepStatus.NEAR_SINGULAR
    diag = StepDiagnostics(
        min_distance=info["r_d"], active_constraints=info["collision_rows"],
        lambda_c=info["lambda_c"], manipulability=info["manipulability"],
        penetration_imminent=info["penetration"], ee_pose=info["ee_pose"],
        solver_status=sol.status, solver_iterations=sol.iterations)
    return StepResult(qdot=qdot, slack=sol.x[kin.DOF:], status=status,
                      diagnostics=diag)


def default_config_path() -> Path:
    return Path(__file__).parent / "configs" / "controller.json"


def load_default_config() -> ControllerConfig:
    return ControllerConfig.from_json(default_config_path())
