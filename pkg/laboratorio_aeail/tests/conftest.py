"""
Fixtures compartidos y marca `slow` para los entrenamientos completos
"""

import numpy as np
import pytest

from laboratorio_aeail.envlab import generate_demos, make_env_spec, scripted_expert
from laboratorio_aeail.models import TrainConfig
from laboratorio_aeail.settings import RUN_SLOW


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: entrenamientos completos, requieren LAB_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="definir LAB_RUN_SLOW=1 para ejecutar")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def pointmass_spec():
    return make_env_spec("pointmass2d", horizon=20)


@pytest.fixture
def small_demos(pointmass_spec):
    return generate_demos(pointmass_spec, scripted_expert(pointmass_spec), 3, 0)


@pytest.fixture
def tiny_config(tmp_path):
    """Corrida de escritorio: horizonte 20, lotes de 64 pares, redes pequeñas"""
    return TrainConfig(
        env="pointmass2d",
        horizon=20,
        iterations=2,
        batch_size=64,
        n_demo_trajectories=3,
        ae_hidden_size=8,
        disc_hidden_size=8,
        policy_hidden_size=8,
        critic_hidden_size=8,
        eval_every=1,
        eval_rollouts=2,
        output_dir=tmp_path / "runs",
    )
