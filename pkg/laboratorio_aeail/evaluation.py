"""
Evaluación determinista, métricas (recompensa escalada, mejora relativa) y
exportación de activaciones latentes
"""

import logging
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .envlab import (
    DemonstrationSet, FeatureNormalizer, Trajectory, episode_return, make_env_spec, run_episode,
    scripted_expert, zero_policy,
)
from .exceptions import ShapeError
from .models import EnvSpec, EvalReport
from .policy_opt import GaussianPolicy, act
from .serializers import TableSerializer
from .settings import EVAL_ROLLOUTS, EVAL_SEED, REFERENCE_SEEDS

logger = logging.getLogger(__name__)


def scaled_reward(ret: float, random_ret: float, expert_ret: float) -> float:
    """
    (ret - random) / (expert - random); puede ser negativo o mayor que 1

    Raises:
        ValueError: Si las referencias coinciden
    """
    if expert_ret == random_ret:
        raise ValueError(f"Referencias degeneradas: experto y aleatorio valen {expert_ret}")
    return float((ret - random_ret) / (expert_ret - random_ret))


def relative_improvement(ours: float, baseline: float) -> float:
    if baseline == 0:
        raise ValueError("La línea base no puede ser 0")
    return float((ours - baseline) / baseline)


@lru_cache(maxsize=None)
def reference_returns(env: str, horizon: Optional[int] = None, n_seeds: int = REFERENCE_SEEDS) -> Tuple[float, float]:
    """
    Retornos medios de la política de acción cero y del experto programado

    Returns:
        Tuple: (random_return, expert_return)
    """
    spec = make_env_spec(env, horizon)
    expert = scripted_expert(spec)
    zero = zero_policy(spec)
    random_ret = float(np.mean([episode_return(run_episode(spec, zero, s)) for s in range(n_seeds)]))
    expert_ret = float(np.mean([episode_return(run_episode(spec, expert, s)) for s in range(n_seeds)]))
    logger.info(f"Referencias {env} (h={spec.horizon}): aleatorio {random_ret:.3f}, experto {expert_ret:.3f}")
    return random_ret, expert_ret


def check_dimensions(policy: GaussianPolicy, spec: EnvSpec) -> None:
    if policy.state_dim != spec.state_dim or policy.action_dim != spec.action_dim:
        raise ShapeError(
            f"El checkpoint espera estado {policy.state_dim} / acción {policy.action_dim}, "
            f"el entorno {spec.name} tiene estado {spec.state_dim} / acción {spec.action_dim}"
        )


def evaluation_rollouts(policy: GaussianPolicy, spec: EnvSpec, n_rollouts: int = EVAL_ROLLOUTS,
                        seed: int = EVAL_SEED) -> List[Trajectory]:
    check_dimensions(policy, spec)
    return [
        run_episode(spec, lambda s: act(policy, s, "deterministic"), seed + i)
        for i in range(n_rollouts)
    ]


def evaluate(
    policy: GaussianPolicy,
    spec: EnvSpec,
    n_rollouts: int = EVAL_ROLLOUTS,
    seed: int = EVAL_SEED,
    checkpoint_id: str = "",
    with_references: bool = True,
) -> EvalReport:
    """
    n rollouts deterministas con semillas seed..seed+n-1 y recompensa verdadera

    Con referencias degeneradas (experto == aleatorio) scaled_reward queda en None.

    Raises:
        ShapeError: Si el checkpoint no coincide con las dimensiones del entorno
    """
    if n_rollouts < 1:
        raise ValueError(f"n_rollouts debe ser al menos 1: {n_rollouts}")
    returns = [episode_return(t) for t in evaluation_rollouts(policy, spec, n_rollouts, seed)]
    mean, std = float(np.mean(returns)), float(np.std(returns))
    random_ret = expert_ret = scaled = None
    if with_references:
        random_ret, expert_ret = reference_returns(spec.name, spec.horizon)
        try:
            scaled = scaled_reward(mean, random_ret, expert_ret)
        except ValueError as e:
            logger.warning(f"Sin recompensa escalada para {spec.name} (h={spec.horizon}): {e}")
    return EvalReport(
        env=spec.name,
        checkpoint_id=checkpoint_id,
        n_rollouts=n_rollouts,
        returns=returns,
        mean=mean,
        std=std,
        expert_return=expert_ret,
        random_return=random_ret,
        scaled_reward=scaled,
    )


def rollouts_as_demos(trajectories: List[Trajectory], spec: EnvSpec) -> DemonstrationSet:
    """Rollouts de evaluación en formato de demostraciones (sin recompensa verdadera)"""
    views = [Trajectory(t.states, t.actions, t.dones) for t in trajectories]
    features = np.concatenate([t.features() for t in views], axis=0)
    return DemonstrationSet(views, spec.name, 0.0, FeatureNormalizer.fit(features), spec)


def dump_latents(model, demos: DemonstrationSet, rollouts: DemonstrationSet) -> pd.DataFrame:
    """
    Activaciones de la primera capa oculta para pares expertos y generados;
    una fila por par visitado, sin el relleno absorbente de ASW

    Raises:
        UnsupportedVariantError: Para GOT, que no tiene capa latente
    """
    def activations(source: DemonstrationSet) -> np.ndarray:
        feats = np.concatenate([model.live_features(t) for t in source.trajectories], axis=0)
        return model.latent_activations(feats)

    expert = activations(demos)
    generated = activations(rollouts)
    logger.info(f"Latentes: {expert.shape[0]} expertos, {generated.shape[0]} generados, {expert.shape[1]} columnas")
    return TableSerializer.latents_frame(expert, generated)
