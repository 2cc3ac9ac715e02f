import numpy as np
import pytest

from sdfreach import kinematics as kin


@pytest.fixture(scope="session")
def model():
    return kin.load_default_model()


def random_state(model, rng, base_range=1.5):
    lo, hi = model.position_limits()
    return kin.RobotState(
        np.array([rng.uniform(-base_range, base_range),
                  rng.uniform(-base_range, base_range),
                  rng.uniform(-np.pi, np.pi)]),
        rng.uniform(lo, hi),
    )


def fd_velocity(model, state, qdot, h=1e-6):
    """Independent finite-difference oracle for spatial velocities.

    Integrates the state by +/- h along qdot with its own Euler stepper and
    differences the resulting link frames.
    """
    def stepped(sign):
        x, y, th = state.base_pose
        dt = sign * h
        v, w = qdot[0], qdot[1]
        base = np.array([x + v * np.cos(th) * dt,
                         y + v * np.sin(th) * dt,
                         th + w * dt])
        return kin.RobotState(base, state.arm_q + qdot[2:] * dt)

    Rp, tp, _, _ = kin._fk_arrays(model, stepped(+1))
    Rm, tm, _, _ = kin._fk_arrays(model, stepped(-1))
    lin = (tp - tm) / (2 * h)
    R0, _, _, _ = kin._fk_arrays(model, state)
    ang = np.empty_like(lin)
    for i in range(lin.shape[0]):
        W = (Rp[i] - Rm[i]) / (2 * h) @ R0[i].T
        ang[i] = (W[2, 1], W[0, 2], W[1, 0])
    return lin, ang
