import numpy as np
import pytest

from mampc import hybrid, lqr, mpc, plants, policy_nn as pn
from mampc.sets import Box


@pytest.fixture(scope="session")
def pendulum_bundle():
    """Trained pendulum scenario shared across hybrid/bench tests.

    Smaller than the benchmark config (3000 samples, 150 epochs) but good
    enough for the NN mode to pass forward verification mid-trajectory.
    """
    p = plants.builtin_plant("pendulum")
    Q, R = np.eye(2), np.eye(1)
    spec = mpc.make_mpc_spec(p, N=5, Q=Q, R=R)
    sol = lqr.build_lqr(spec.A_d, spec.B_d, Q, R, roa_radius=0.5)
    ctrl = mpc.MPCController(spec)
    box = Box([-np.pi, -1.0], [np.pi, 1.0])
    data = pn.sample_dataset(ctrl, p, box, M=3000, seed=0)
    policy, curve = pn.train_imitation(
        data, [2, 20, 20, 1], pn.TrainConfig(epochs=150, seed=0),
        output_box=p.input_box)
    return {
        "plant": p, "spec": spec, "lqr": sol, "policy": policy,
        "curve": curve, "dataset": data, "sampling_box": box,
    }


@pytest.fixture()
def pendulum_ctx(pendulum_bundle):
    b = pendulum_bundle
    cfg = hybrid.MAMPCConfig(variant="standard", n_lqr=5)
    return hybrid.HybridContext(b["plant"], mpc.MPCController(b["spec"]),
                                b["lqr"], b["policy"], cfg)
