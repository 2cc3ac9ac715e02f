import math

import numpy as np
import pytest

from conftest import random_state
from sdfreach import controller as ctl
from sdfreach import kinematics as kin
from sdfreach import robot_shape as rs
from sdfreach import sdf
from sdfreach.controller import ControllerConfig, StepStatus
from sdfreach.kinematics import Pose, RobotState
from sdfreach.qp import solve


@pytest.fixture(scope="module")
def cfg():
    return ControllerConfig()


@pytest.fixture(scope="module")
def coarse(model):
    return rs.preset_rep(model, "coarse")


def empty_scene():
    # a single obstacle far enough away to never matter
    return sdf.Sphere(np.array([100.0, 100.0, 100.0]), 0.1)


class TestPoseServo:
    def test_zero_at_target(self, cfg):
        p = Pose.from_xyz_rpy((0.3, 0.2, 0.5), (0.1, 0.2, 0.3))
        assert np.all(ctl.pose_servo(p, p, cfg) == 0.0)

    def test_proportional_translation(self, cfg):
        a = Pose.identity()
        b = Pose.from_xyz_rpy((0.1, 0.0, 0.0))
        v = ctl.pose_servo(a, b, cfg)
        np.testing.assert_allclose(v, [0.2, 0, 0, 0, 0, 0], atol=1e-12)

    def test_cap_saturation(self, cfg):
        a = Pose.identity()
        b = Pose.from_xyz_rpy((10.0, 0.0, 0.0))
        v = ctl.pose_servo(a, b, cfg)
        assert np.linalg.norm(v[:3]) == pytest.approx(cfg.velocity_cap_linear)

    def test_rotation_part(self, cfg):
        a = Pose.identity()
        b = Pose.from_xyz_rpy((0, 0, 0), (0, 0, 0.2))
        v = ctl.pose_servo(a, b, cfg)
        np.testing.assert_allclose(v[3:], [0, 0, 0.4], atol=1e-10)


class TestCollisionConstraints:
    def wall(self):
        return sdf.HalfSpace(np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]))

    def damper_inputs(self, model, distance):
        # one synthetic point on the base link at a chosen obstacle distance
        pts = np.array([[1.0 - distance, 0.0, 0.2]])
        links = np.array([0])
        d = np.array([distance])
        g = np.array([[-1.0, 0.0, 0.0]])
        return pts, links, d, g

    @pytest.mark.parametrize("f,expected", [
        (0.3, 1.0),           # at the influence distance
        (0.02, 0.0),          # at the stop distance
        (0.16, 0.5),          # (0.16 - 0.02) / 0.28
    ])
    def test_rhs_values(self, model, cfg, f, expected):
        st = RobotState.from_values(0, 0, 0, model.home_q)
        pts, links, d, g = self.damper_inputs(model, f)
        if f >= cfg.influence_distance:
            # exactly at d_i the point is omitted; nudge inside to probe rhs
            d = d - 1e-12
        A, b, pen = ctl.collision_constraints(pts, links, d, g, model, st, cfg)
        assert A.shape[0] == 1
        assert b[0] == pytest.approx(expected, abs=1e-9)
        assert not pen

    def test_beyond_influence_filtered(self, model, cfg):
        st = RobotState.from_values(0, 0, 0, model.home_q)
        pts, links, d, g = self.damper_inputs(model, 0.5)
        A, b, pen = ctl.collision_constraints(pts, links, d, g, model, st, cfg)
        assert A.shape == (0, 15)

    def test_penetration_flag_and_retreat_rhs(self, model, cfg):
        st = RobotState.from_values(0, 0, 0, model.home_q)
        pts, links, d, g = self.damper_inputs(model, 0.01)
        A, b, pen = ctl.collision_constraints(pts, links, d, g, model, st, cfg)
        assert pen and b[0] < 0

    def test_row_is_negated_distance_jacobian_padded(self, model, cfg):
        st = RobotState.from_values(0.0, 0.0, 0.3, model.home_q)
        pts, links, d, g = self.damper_inputs(model, 0.1)
        A, b, _ = ctl.collision_constraints(pts, links, d, g, model, st, cfg)
        Jd = ctl.distance_jacobians(model, st, pts, links, g)
        np.testing.assert_array_equal(A[0, :9], -Jd[0])
        assert np.all(A[0, 9:] == 0.0)
        # base-link point: arm columns are zero padding
        assert np.all(A[0, 2:9] == 0.0)


class TestCollisionJacobian:
    def test_weight_function(self, cfg):
        d_i, d_s = cfg.influence_distance, cfg.stop_distance
        for f, w in ((d_s, 1.0), (d_i, 0.0), ((d_i + d_s) / 2, 0.5)):
            assert ((d_i - f) / (d_i - d_s)) == pytest.approx(w)

    def test_lambda_values(self, cfg):
        d = np.array([0.3])
        Jd = np.ones((1, 9))
        _, lam = ctl.collision_jacobian(d - 1e-15, Jd, cfg)
        assert lam == pytest.approx(0.0, abs=1e-12)
        cfg15 = cfg.replace(lambda_c_max=1.5)
        _, lam = ctl.collision_jacobian(np.array([cfg.stop_distance]), Jd, cfg15)
        assert lam == pytest.approx(1.5)
        cfg15 = cfg15.replace(influence_distance=0.3, stop_distance=0.02)
        _, lam = ctl.collision_jacobian(np.array([0.16]), Jd, cfg15)
        assert lam == pytest.approx(1.5 * 0.14 ** 2 / 0.28 ** 2)
        assert lam == pytest.approx(0.375)

    def test_single_point_average_is_itself(self, cfg):
        rng = np.random.default_rng(0)
        Jd = rng.standard_normal((1, 9))
        Jc, _ = ctl.collision_jacobian(np.array([0.1]), Jd, cfg)
        np.testing.assert_allclose(Jc, Jd[0], atol=1e-12)

    def test_empty_returns_zero(self, cfg):
        Jc, lam = ctl.collision_jacobian(np.zeros(0), np.zeros((0, 9)), cfg)
        assert lam == 0.0 and np.all(Jc == 0.0)

    def test_lambda_saturates_below_stop(self, cfg):
        Jd = np.ones((1, 9))
        _, lam_at = ctl.collision_jacobian(np.array([cfg.stop_distance]), Jd, cfg)
        _, lam_in = ctl.collision_jacobian(np.array([cfg.stop_distance / 2]), Jd, cfg)
        assert lam_in == pytest.approx(lam_at) == pytest.approx(cfg.lambda_c_max)


class TestSpherePointEquivalence:
    def test_sphere_equals_point_with_shifted_stop_distance(self, model, cfg):
        # a 1-sphere proxy and a 1-point proxy at the sphere center produce
        # the same damper once d_s and d_i are both inflated by the radius
        radius = 0.08
        wall = sdf.HalfSpace(np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0, 0]))
        st = RobotState.from_values(0, 0, 0.2, model.home_q)
        sphere = rs.SpheresRep(np.array([0]), np.array([[0.1, 0.0, 0.2]]),
                               np.array([radius]))
        d_s, g_s, l_s, centers = rs.sphere_distances(sphere, wall, model, st)
        A_s, b_s, _ = ctl.collision_constraints(centers, l_s, d_s, g_s,
                                                model, st, cfg)
        cfg_pt = cfg.replace(stop_distance=cfg.stop_distance + radius,
                             influence_distance=cfg.influence_distance + radius)
        d_p, g_p, _ = wall.distance_and_gradient(centers)
        A_p, b_p, _ = ctl.collision_constraints(centers, l_s, d_p, g_p,
                                                model, st, cfg_pt)
        np.testing.assert_allclose(b_s, b_p, atol=1e-12)
        np.testing.assert_allclose(A_s, A_p, atol=1e-12)


class TestJointLimits:
    def test_at_influence_distance(self, model, cfg):
        lo, hi = model.position_limits()
        q = model.home_q.copy()
        q[0] = hi[0] - cfg.joint_limit_influence + 1e-12
        st = RobotState.from_values(0, 0, 0, q)
        A, b = ctl.joint_limit_constraints(model, st, cfg)
        rows = [i for i in range(A.shape[0]) if A[i, 2] == 1.0]
        assert len(rows) == 1
        assert b[rows[0]] == pytest.approx(cfg.joint_limit_gain, abs=1e-9)

    def test_at_stop_distance(self, model, cfg):
        lo, hi = model.position_limits()
        q = model.home_q.copy()
        q[2] = lo[2] + cfg.joint_limit_stop
        st = RobotState.from_values(0, 0, 0, q)
        A, b = ctl.joint_limit_constraints(model, st, cfg)
        rows = [i for i in range(A.shape[0]) if A[i, 4] == -1.0]
        assert len(rows) == 1
        assert b[rows[0]] == pytest.approx(0.0, abs=1e-12)

    def test_midrange_no_rows(self, model, cfg):
        lo, hi = model.position_limits()
        q = (lo + hi) / 2
        st = RobotState.from_values(0, 0, 0, q)
        A, b = ctl.joint_limit_constraints(model, st, cfg)
        assert A.shape[0] == 0


class TestAssemble:
    def test_dimensions(self, model, cfg, coarse):
        st = RobotState.from_values(0, 0, 0, model.home_q)
        target = Pose.from_xyz_rpy((1.0, 0.0, 0.8))
        wall = sdf.HalfSpace(np.array([0.9, 0.0, 0.0]), np.array([-1.0, 0, 0]))
        prob = ctl.assemble_qp(st, target, wall, coarse, model, cfg)
        assert prob.Q.shape == (15, 15)
        assert prob.Aeq.shape == (6, 15)
        data = ctl.gather_collision_data(st, wall, coarse, model, cfg)
        A_j, _ = ctl.joint_limit_constraints(model, st, cfg)
        expected_rows = A_j.shape[0] + data.distances.size
        got = 0 if prob.Ain is None else prob.Ain.shape[0]
        assert got == expected_rows

    def test_no_obstacle_matches_baseline_cost(self, model, cfg, coarse):
        st = RobotState.from_values(0, 0, 0, model.home_q)
        target = Pose.from_xyz_rpy((1.0, 0.0, 0.8))
        scene = empty_scene()
        full = ctl.assemble_qp(st, target, scene, coarse, model, cfg)
        off = ctl.assemble_qp(st, target, scene, coarse, model,
                              cfg.replace(constraints_enabled=False,
                                          active_cost_enabled=False))
        assert np.array_equal(full.c, off.c)
        assert np.array_equal(full.Q, off.Q)

    def test_reduces_to_independent_holistic_formulation(self, model, cfg, coarse):
        # independent mini-assembler written from the baseline controller
        # definition: Q = diag(w), c = -(Jm + Jo), Aeq = [J | I], dampers only
        rng = np.random.default_rng(3)
        st = random_state(model, rng)
        target = Pose.from_xyz_rpy((1.0, 0.5, 0.9), (0.2, 0.1, 0.4))
        off = cfg.replace(constraints_enabled=False, active_cost_enabled=False)
        prob = ctl.assemble_qp(st, target, empty_scene(), coarse, model, off)

        wq = np.full(9, cfg.joint_velocity_weight)
        wq[:2] *= cfg.base_weight_factor
        err = np.linalg.norm(target.translation
                             - kin.ee_pose(model, st).translation)
        wd = cfg.slack_weight * min(max(cfg.slack_ref_error / err,
                                        cfg.slack_min_ratio), 1.0)
        Q = np.diag(np.concatenate([wq, np.full(6, wd)]))
        c = np.zeros(15)
        c[:9] = -(kin.manipulability_jacobian(model, st.arm_q)
                  + kin.base_orientation_jacobian(model, st,
                                                  cfg.base_orientation_gain))
        Aeq = np.hstack([kin.ee_jacobian(model, st), np.eye(6)])
        v = ctl.pose_servo(kin.ee_pose(model, st), target, cfg)
        np.testing.assert_allclose(prob.Q, Q, atol=1e-12)
        np.testing.assert_allclose(prob.c, c, atol=1e-12)
        np.testing.assert_allclose(prob.Aeq, Aeq, atol=1e-12)
        np.testing.assert_allclose(prob.beq, v, atol=1e-12)

    def test_lambda_sweep_zero_identical_to_disabled(self, model, cfg, coarse):
        st = RobotState.from_values(0.5, 0, 0, model.home_q)
        target = Pose.from_xyz_rpy((1.2, 0.0, 0.8))
        wall = sdf.HalfSpace(np.array([1.1, 0.0, 0.0]), np.array([-1.0, 0, 0]))
        lam0 = ctl.assemble_qp(st, target, wall, coarse, model,
                               cfg.replace(lambda_c_max=0.0))
        disabled = ctl.assemble_qp(st, target, wall, coarse, model,
                                   cfg.replace(active_cost_enabled=False))
        assert np.array_equal(lam0.c, disabled.c)


class TestStep:
    def test_constraint_satisfaction_and_limits(self, model, cfg, coarse):
        st = RobotState.from_values(0.4, 0.0, 0.0, model.home_q)
        target = Pose.from_xyz_rpy((1.5, 0.0, 0.8), (0.0, math.pi / 2, 0.0))
        wall = sdf.HalfSpace(np.array([1.2, 0.0, 0.0]), np.array([-1.0, 0, 0]))
        res = ctl.step(st, target, wall, coarse, model, cfg)
        assert res.status in (StepStatus.OK, StepStatus.NEAR_SINGULAR)
        vl = model.velocity_limits()
        assert np.all(np.abs(res.qdot) <= vl + 1e-12)
        # damper satisfaction, rechecked outside the solver
        data = ctl.gather_collision_data(st, wall, coarse, model, cfg)
        A, b, _ = ctl.collision_constraints(data.points, data.links,
                                            data.distances, data.gradients,
                                            model, st, cfg)
        x = np.concatenate([res.qdot, res.slack])
        assert np.all(A @ x <= b + 1e-6)

    def test_converged_configuration_stays_put(self, model, cfg, coarse):
        # run an obstacle-free servo to its own pose until secondary costs
        # settle, then the commanded velocity must be (near) zero
        st = RobotState.from_values(0, 0, 0, model.home_q)
        scene = empty_scene()
        target = kin.ee_pose(model, st)
        dt = 0.02
        lo, hi = model.position_limits()
        for _ in range(1500):
            res = ctl.step(st, target, scene, coarse, model, cfg)
            q = np.clip(st.arm_q + res.qdot[2:] * dt, lo, hi)
            x, y, th = st.base_pose
            v, w = res.qdot[0], res.qdot[1]
            st = RobotState(np.array([x + v * math.cos(th) * dt,
                                      y + v * math.sin(th) * dt,
                                      th + w * dt]), q)
            target = target  # fixed target: the original home EE pose
            if np.linalg.norm(res.qdot) < 5e-4:
                break
        res = ctl.step(st, target, scene, coarse, model, cfg)
        assert np.linalg.norm(res.qdot) <= 1e-3

    def test_active_cost_pushes_away_from_wall(self, model, cfg):
        # zero servo demand; a single wall near the base: the first step must
        # not decrease the nearest point's distance
        rep = rs.preset_rep(model, "coarse")
        st = RobotState.from_values(0.0, 0.0, 0.0, model.home_q)
        wall = sdf.HalfSpace(np.array([0.85, 0.0, 0.0]), np.array([-1.0, 0, 0]))
        data = ctl.gather_collision_data(st, wall, rep, model, cfg)
        assert data.distances.size > 0 and data.r_d > cfg.stop_distance
        target = kin.ee_pose(model, st)
        res = ctl.step(st, target, wall, rep, model, cfg)
        assert res.status == StepStatus.OK
        j = int(np.argmin(data.distances))
        Jd = ctl.distance_jacobians(model, st, data.points[j:j + 1],
                                    data.links[j:j + 1],
                                    data.gradients[j:j + 1])
        assert float(Jd[0] @ res.qdot) >= -1e-8

    def test_infeasible_reports_and_zero_motion(self, model, cfg, coarse):
        # two opposing walls already inside the stop distance: both dampers
        # demand retreat in opposite directions
        squeeze = sdf.Union((
            sdf.HalfSpace(np.array([0.3, 0.0, 0.0]), np.array([-1.0, 0, 0])),
            sdf.HalfSpace(np.array([-0.3, 0.0, 0.0]), np.array([1.0, 0, 0])),
        ))
        st = RobotState.from_values(0, 0, 0, model.home_q)
        target = Pose.from_xyz_rpy((2.0, 0.0, 0.8))
        res = ctl.step(st, target, squeeze, coarse, model,
                       cfg.replace(stop_distance=0.5, influence_distance=0.8,
                                   collision_damper_gain=1.0))
        assert res.status == StepStatus.INFEASIBLE
        assert np.all(res.qdot == 0.0)

    def test_step_deterministic(self, model, cfg, coarse):
        st = RobotState.from_values(0.4, 0.1, 0.2, model.home_q)
        target = Pose.from_xyz_rpy((1.5, 0.0, 0.8))
        wall = sdf.HalfSpace(np.array([1.2, 0.0, 0.0]), np.array([-1.0, 0, 0]))
        a = ctl.step(st, target, wall, coarse, model, cfg)
        b = ctl.step(st, target, wall, coarse, model, cfg)
        assert np.array_equal(a.qdot, b.qdot)
        assert a.status == b.status

    def test_spheres_rep_works(self, model, cfg):
        rep = rs.sphere_rep(model)
        st = RobotState.from_values(0.4, 0.0, 0.0, model.home_q)
        target = Pose.from_xyz_rpy((1.5, 0.0, 0.8))
        wall = sdf.HalfSpace(np.array([1.2, 0.0, 0.0]), np.array([-1.0, 0, 0]))
        res = ctl.step(st, target, wall, rep, model, cfg)
        assert res.status in (StepStatus.OK, StepStatus.NEAR_SINGULAR)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ControllerConfig(stop_distance=0.5, influence_distance=0.3).validate()
        with pytest.raises(ValueError):
            ControllerConfig(lambda_c_max=-1.0).validate()

    def test_config_json_round_trip(self, tmp_path):
        cfg = ControllerConfig(lambda_c_max=1.5, stop_distance=0.03)
        path = tmp_path / "cfg.json"
        import json
        with open(path, "w") as f:
            json.dump(cfg.to_dict(), f)
        again = ControllerConfig.from_json(path)
        assert again == cfg
