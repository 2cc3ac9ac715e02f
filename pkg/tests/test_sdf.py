import math

import numpy as np
import pytest

from sdfreach import sdf
from sdfreach.kinematics import Pose, rpy_matrix
from sdfreach.sdf import Box, Cylinder, HalfSpace, Sphere, Union


def unit_box():
    return Box(Pose.identity(), np.array([1.0, 1.0, 1.0]))


class TestEval:
    def test_sphere_outside(self):
        s = Sphere(np.zeros(3), 0.5)
        assert sdf.eval(s, (1.0, 0.0, 0.0)) == pytest.approx(0.5)

    def test_box_corner(self):
        assert sdf.eval(unit_box(), (2.0, 2.0, 0.0)) == pytest.approx(math.sqrt(2))

    def test_box_deep_interior(self):
        assert sdf.eval(unit_box(), (0.0, 0.0, 0.0)) == pytest.approx(-1.0)

    def test_union_min(self):
        u = Union((Sphere(np.zeros(3), 0.5),
                   HalfSpace(np.zeros(3), np.array([0.0, 0.0, 1.0]))))
        assert sdf.eval(u, (0.0, 0.0, 2.0)) == pytest.approx(1.5)

    def test_cylinder_side_and_cap(self):
        c = Cylinder(Pose.identity(), radius=0.5, half_height=1.0)
        assert sdf.eval(c, (1.5, 0.0, 0.0)) == pytest.approx(1.0)
        assert sdf.eval(c, (0.0, 0.0, 1.75)) == pytest.approx(0.75)
        assert sdf.eval(c, (0.0, 0.0, 0.0)) == pytest.approx(-0.5)


class TestGrad:
    def test_sphere_radial(self):
        s = Sphere(np.zeros(3), 0.5)
        np.testing.assert_allclose(sdf.grad(s, (2.0, 0.0, 0.0)), [1, 0, 0])

    def test_halfspace_constant(self):
        h = HalfSpace(np.zeros(3), np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(sdf.grad(h, (3.0, -2.0, 5.0)), [0, 0, 1])
        np.testing.assert_allclose(sdf.grad(h, (0.0, 0.0, -1.0)), [0, 0, 1])

    def test_box_grad_matches_fd(self):
        rng = np.random.default_rng(4)
        box = Box(Pose.from_xyz_rpy((0.2, -0.1, 0.4), (0.3, 0.2, 0.9)),
                  np.array([0.4, 0.3, 0.6]))
        checked = 0
        for _ in range(300):
            p = rng.uniform(-1.5, 1.5, 3)
            d = sdf.eval(box, p)
            if abs(d) < 5e-3:  # keep FD stencil on one side of the surface
                continue
            g = sdf.grad(box, p)
            g_fd = sdf.grad_fd(box, p)
            if d < 0:
                # skip interior points near medial-axis ties
                q = np.sort(np.abs((box.pose.inverse().transform(p))) - box.half_extents)
                if q[-1] - q[-2] < 5e-3:
                    continue
            np.testing.assert_allclose(g, g_fd, atol=1e-4)
            checked += 1
        assert checked > 150

    def test_tie_break_deterministic(self):
        u = Union((Sphere(np.array([0.0, 0.0, 1.0]), 0.5),
                   Sphere(np.array([0.0, 0.0, -1.0]), 0.5)))
        # equidistant between the two children: lowest index wins, flagged
        res = sdf.eval_batch(u, [(0.0, 0.0, 0.0)])[0]
        assert res.degenerate
        np.testing.assert_allclose(res.gradient, [0, 0, -1])

    def test_degenerate_center_flag(self):
        res = sdf.eval_batch(Sphere(np.zeros(3), 1.0), [(0.0, 0.0, 0.0)])[0]
        assert res.degenerate
        np.testing.assert_allclose(res.gradient, [1, 0, 0])


class TestNearestPoint:
    def test_sphere_projection(self):
        s = Sphere(np.zeros(3), 0.5)
        np.testing.assert_allclose(sdf.nearest_point(s, (2.0, 0.0, 0.0)),
                                   [0.5, 0, 0], atol=1e-12)

    def test_point_on_surface(self):
        s = Sphere(np.zeros(3), 0.5)
        p = np.array([0.5, 0.0, 0.0])
        np.testing.assert_allclose(sdf.nearest_point(s, p), p, atol=1e-12)

    @pytest.mark.parametrize("prim", [
        Sphere(np.array([0.3, -0.2, 0.5]), 0.7),
        Box(Pose.from_xyz_rpy((0.1, 0.2, -0.3), (0.5, -0.2, 1.1)),
            np.array([0.5, 0.25, 0.8])),
        Cylinder(Pose.from_xyz_rpy((0.0, 0.4, 0.2), (1.2, 0.3, -0.4)),
                 radius=0.4, half_height=0.6),
    ])
    def test_projection_lands_on_surface(self, prim):
        rng = np.random.default_rng(11)
        for _ in range(200):
            p = rng.uniform(-2, 2, 3)
            if sdf.eval(prim, p) < 1e-3:  # exterior only: projection is exact
                continue
            near = sdf.nearest_point(prim, p)
            assert abs(sdf.eval(prim, near)) <= 1e-6


class TestBatch:
    def test_empty(self):
        assert sdf.eval_batch(unit_box(), np.zeros((0, 3))) == []

    def test_pointwise_equality(self):
        pts = [(0.0, 0.0, 3.0), (2.0, 2.0, 0.0), (0.2, -0.1, 0.3)]
        res = sdf.eval_batch(unit_box(), pts)
        for p, r in zip(pts, res):
            assert r.distance == sdf.eval(unit_box(), p)
            np.testing.assert_array_equal(r.gradient, sdf.grad(unit_box(), p))

    def test_large_batch_bitwise_equal(self):
        scene = Union((unit_box(), Sphere(np.array([3.0, 0.0, 0.0]), 1.0),
                       HalfSpace(np.array([0, 0, -2.0]), np.array([0.0, 0, 1.0]))))
        rng = np.random.default_rng(2)
        pts = rng.uniform(-5, 5, (10_000, 3))
        batch = scene.distance(pts)
        single = np.array([sdf.eval(scene, p) for p in pts[:500]])
        assert np.array_equal(batch[:500], single)


class TestFieldProperties:
    def scene(self):
        return Union((
            Box(Pose.from_xyz_rpy((1.5, 0, 0.5)), np.array([0.3, 0.5, 0.5])),
            Cylinder(Pose.from_xyz_rpy((0.5, 0.8, 0.3)), 0.15, 0.3),
            Sphere(np.array([-0.5, -0.5, 0.7]), 0.4),
            HalfSpace(np.array([0.0, 0.0, 2.5]), np.array([0.0, 0.0, -1.0])),
        ))

    def test_lipschitz(self):
        scene = self.scene()
        rng = np.random.default_rng(8)
        a = rng.uniform(-3, 3, (100_000, 3))
        b = rng.uniform(-3, 3, (100_000, 3))
        da, db = scene.distance(a), scene.distance(b)
        gap = np.linalg.norm(a - b, axis=1)
        assert np.all(np.abs(da - db) <= gap + 1e-9)

    def test_eikonal_exterior(self):
        scene = self.scene()
        rng = np.random.default_rng(9)
        count = 0
        for _ in range(500):
            p = rng.uniform(-3, 3, 3)
            if sdf.eval(scene, p) < 1e-2:
                continue
            g = np.empty(3)
            for i in range(3):
                dp = np.zeros(3)
                dp[i] = 1e-5
                g[i] = (sdf.eval(scene, p + dp) - sdf.eval(scene, p - dp)) / 2e-5
            n = np.linalg.norm(g)
            if abs(n - 1.0) > 1e-3:
                # medial-axis neighborhoods of the union are exempt
                d, _, _ = scene.distance_and_gradient(np.array([p]))
                children = sorted(c.distance(np.array([p]))[0]
                                  for c in scene.children)
                assert children[1] - children[0] < 1e-3 or n <= 1.0 + 1e-3
            else:
                count += 1
        assert count > 300

    def test_sign_correctness(self):
        rng = np.random.default_rng(10)
        box = Box(Pose.from_xyz_rpy((0.5, 0.2, 0.1), (0.2, 0.4, 0.6)),
                  np.array([0.4, 0.5, 0.3]))
        inner = rng.uniform(-0.9, 0.9, (200, 3)) * box.half_extents
        world_in = box.pose.transform(inner)
        assert np.all(box.distance(world_in) < 0)
        shell = rng.uniform(1.1, 3.0, (200, 3)) * box.half_extents \
            * rng.choice([-1.0, 1.0], (200, 3))
        world_out = box.pose.transform(shell)
        assert np.all(box.distance(world_out) > 0)


class TestSceneJson:
    def test_round_trip(self, tmp_path):
        scene = Union((
            Box(Pose(rpy_matrix(0.1, 0.2, 0.3), np.array([1.0, 2.0, 3.0])),
                np.array([0.3, 0.5, 0.5])),
            Cylinder(Pose.from_xyz_rpy((0.5, 0.8, 0.3)), 0.15, 0.3),
            Sphere(np.array([-0.5, -0.5, 0.7]), 0.4),
            HalfSpace(np.array([0.0, 0.0, 2.5]), np.array([0.0, 0.0, -1.0])),
        ))
        path = tmp_path / "scene.json"
        sdf.scene_to_json(scene, path)
        again = sdf.scene_from_json(path)
        rng = np.random.default_rng(3)
        pts = rng.uniform(-4, 4, (1000, 3))
        assert np.array_equal(scene.distance(pts), again.distance(pts))

    def test_rejects_unknown_type(self):
        with pytest.raises(ValueError):
            sdf.node_from_dict({"type": "torus"})

    def test_invariant_validation(self):
        with pytest.raises(ValueError):
            Sphere(np.zeros(3), -1.0)
        with pytest.raises(ValueError):
            HalfSpace(np.zeros(3), np.array([0.0, 0.0, 2.0]))
        with pytest.raises(ValueError):
            Union(())
