"""
Services - Orquestación del entrenamiento adversarial (muestreo, actualización
de la recompensa, pasos de política, evaluación y barridos)
"""

import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .envlab import (
    DemonstrationSet, Trajectory, corrupt_demos, generate_demos, make_env_spec, run_episode,
    scripted_expert,
)
from .evaluation import evaluate
from .exceptions import ConfigError, DemosNotFoundError, LaboratorioError, NumericFaultError
from .models import EnvSpec, MetricsRecord, TrainConfig, TrainSummary
from .policy_opt import (
    GaussianPolicy, RolloutBatch, ValueCritic, bc_pretrain, critic_update, gae_advantages, log_prob,
    mean_kl, sample_raw, trust_region_step,
)
from .reward_models import RewardModel, build_reward_model
from .serializers import (
    ConfigSerializer, CriticSerializer, DemoSerializer, MetricsSerializer, PolicySerializer,
    RewardSerializer, TableSerializer,
)
from .settings import (
    CONFIG_FILE, CRITIC_CHECKPOINT, DEFAULT_ITERATIONS, METRICS_FILE, POLICY_CHECKPOINT,
    REWARD_CHECKPOINT, SWEEP_CELLS_FILE, SWEEP_SUMMARY_FILE,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Muestreo
# ---------------------------------------------------------------------------


def _rollout_episode(policy: GaussianPolicy, spec: EnvSpec, seed: int, iteration: int, episode: int) -> Trajectory:
    env_seed, noise_seed = np.random.SeedSequence([seed, iteration, episode]).generate_state(2)
    rng = np.random.default_rng(noise_seed)
    trajectory = run_episode(spec, lambda s: sample_raw(policy, s, rng), int(env_seed))
    trajectory.log_probs = np.atleast_1d(log_prob(policy, trajectory.states, trajectory.raw_actions))
    return trajectory.learner_view()


def collect_rollouts(
    policy: GaussianPolicy,
    spec: EnvSpec,
    min_pairs: int,
    seed: int,
    iteration: int = 0,
    n_workers: int = 1,
) -> RolloutBatch:
    """
    Episodos de la política estocástica hasta reunir al menos min_pairs pares

    El resultado es el prefijo mínimo en orden de episodio, de modo que no
    depende del número de workers.

    Returns:
        RolloutBatch: Trayectorias sin recompensa verdadera, con log-probabilidades
    """
    if min_pairs < 1:
        raise ValueError(f"min_pairs debe ser positivo: {min_pairs}")
    trajectories: List[Trajectory] = []
    pairs = 0
    episode = 0
    while pairs < min_pairs:
        if n_workers == 1:
            chunk = [_rollout_episode(policy, spec, seed, iteration, episode)]
        else:
            chunk = Parallel(n_jobs=n_workers)(
                delayed(_rollout_episode)(policy, spec, seed, iteration, episode + k) for k in range(n_workers)
            )
        for trajectory in chunk:
            if pairs >= min_pairs:
                break
            trajectories.append(trajectory)
            pairs += len(trajectory)
        episode += len(chunk)
    return RolloutBatch(trajectories)


def sample_equal_batches(
    policy_buffer: np.ndarray,
    demos: np.ndarray,
    batch_size: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Dos lotes de igual tamaño (generado, experto)

    Cada fuente se muestrea sin reemplazo si alcanza batch_size y con reemplazo si no.

    Raises:
        ValueError: Si alguna fuente está vacía
    """
    policy_buffer = np.atleast_2d(policy_buffer)
    demos = np.atleast_2d(demos)
    if demos.shape[0] == 0 or demos.size == 0:
        raise ValueError("No hay demostraciones para muestrear")
    if policy_buffer.shape[0] == 0 or policy_buffer.size == 0:
        raise ValueError("No hay pares generados para muestrear")
    gen_idx = rng.choice(policy_buffer.shape[0], size=batch_size, replace=policy_buffer.shape[0] < batch_size)
    exp_idx = rng.choice(demos.shape[0], size=batch_size, replace=demos.shape[0] < batch_size)
    return policy_buffer[gen_idx], demos[exp_idx]


# ---------------------------------------------------------------------------
# Entrenamiento
# ---------------------------------------------------------------------------


class TrainerService:
    """Una corrida de entrenamiento: un único escritor sobre output_dir/{run_id}/"""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.spec = make_env_spec(config.env, config.horizon)
        self.run_id = config.resolved_run_id()
        self.run_dir = Path(config.output_dir) / self.run_id
        self.iterations = DEFAULT_ITERATIONS[config.env] if config.iterations is None else config.iterations
        (self.policy_seed, self.critic_seed, self.reward_seed,
         self.batch_seed, self.rollout_seed, self.bc_seed) = (
            int(s) for s in np.random.SeedSequence(config.seed).generate_state(6)
        )
        self.reward_updates = 0
        self.policy_updates = 0
        self.demos: Optional[DemonstrationSet] = None
        self.policy: Optional[GaussianPolicy] = None
        self.critic: Optional[ValueCritic] = None
        self.reward_model: Optional[RewardModel] = None

    def preparar_demos(self) -> DemonstrationSet:
        """
        Carga las demostraciones de demo_path o las genera con el experto programado

        Raises:
            DemosNotFoundError: demo_path definido pero inexistente
            ConfigError: Demostraciones de otro entorno o con otro nivel de ruido
        """
        config = self.config
        if config.demo_path is not None:
            path = Path(config.demo_path)
            if not path.exists():
                raise DemosNotFoundError(f"No existen demostraciones en {path}")
            demos = DemoSerializer.load(path)
            if demos.env != config.env:
                raise ConfigError(f"Las demostraciones son de {demos.env}, la corrida es de {config.env}")
            if config.demo_noise_sigma > 0 and demos.noise_sigma == 0:
                demos = corrupt_demos(demos, config.demo_noise_sigma, config.demo_seed + 1)
            elif config.demo_noise_sigma > 0 and demos.noise_sigma != config.demo_noise_sigma:
                raise ConfigError(
                    f"Las demostraciones tienen ruido {demos.noise_sigma}, se pidió {config.demo_noise_sigma}"
                )
        else:
            clean = generate_demos(self.spec, scripted_expert(self.spec), config.n_demo_trajectories, config.demo_seed)
            demos = corrupt_demos(clean, config.demo_noise_sigma, config.demo_seed + 1)
        if demos.n_pairs == 0:
            raise DemosNotFoundError("El conjunto de demostraciones está vacío")
        self.demos = demos
        return demos

    def inicializar(self) -> None:
        config = self.config
        demos = self.demos or self.preparar_demos()
        self.policy = GaussianPolicy.initialize(self.spec, config.policy_hidden_size, self.policy_seed)
        self.critic = ValueCritic.initialize(self.spec.state_dim, config.critic_hidden_size, self.critic_seed)
        self.reward_model = build_reward_model(config, demos, self.spec, self.reward_seed)
        if config.bc_iterations > 0:
            logger.info(f"Pre-entrenamiento BC: {config.bc_iterations} iteraciones")
            bc_pretrain(self.policy, demos, config.bc_iterations, config.bc_lr, config.bc_batch_size, self.bc_seed)

    def guardar_checkpoints(self) -> None:
        PolicySerializer.save(self.run_dir / POLICY_CHECKPOINT, self.policy)
        CriticSerializer.save(self.run_dir / CRITIC_CHECKPOINT, self.critic)
        RewardSerializer.save(self.run_dir / REWARD_CHECKPOINT, self.reward_model, self.spec)

    def _iteracion(self, iteration: int, expert_features: np.ndarray, expert_reward_cache: Optional[float],
                   rng: np.random.Generator) -> MetricsRecord:
        config = self.config
        model = self.reward_model
        start = time.perf_counter()

        batch = collect_rollouts(self.policy, self.spec, config.batch_size, self.rollout_seed,
                                 iteration, config.n_workers)
        gen_features = np.concatenate([model.features(t) for t in batch.trajectories], axis=0)
        gen_batch, expert_batch = sample_equal_batches(gen_features, expert_features, config.batch_size, rng)

        loss = model.train_step(expert_batch, gen_batch)
        self.reward_updates += 1
        if not np.isfinite(loss):
            raise NumericFaultError("Pérdida del modelo de recompensa no finita")

        batch.fill_rewards(lambda t: model.trajectory_rewards(t, config.gamma))
        pseudo = np.concatenate(batch.rewards)
        if not np.all(np.isfinite(pseudo)):
            raise NumericFaultError("Pseudo-recompensas no finitas")
        if model.is_learned:
            expert_mean = float(np.mean(model.rewards(expert_batch)))
            gen_mean = float(np.mean(model.rewards(gen_batch)))
        else:
            expert_mean, gen_mean = expert_reward_cache, float(np.mean(pseudo))

        gae_advantages(batch, self.critic, config.gamma, config.gae_lambda)
        critic_update(self.critic, batch, config.critic_updates, config.critic_lr)

        before = self.policy.copy()
        info = None
        for _ in range(config.policy_updates_per_iteration):
            self.policy, info = trust_region_step(
                self.policy, batch, config.max_kl, config.cg_iters, config.cg_damping,
                config.backtrack_ratio, config.max_backtracks,
            )
            self.policy_updates += 1
        kl = mean_kl(before, self.policy, batch.states)

        eval_mean = eval_std = scaled = float("nan")
        if (iteration + 1) % config.eval_every == 0:
            report = evaluate(self.policy, self.spec, config.eval_rollouts, config.eval_seed)
            eval_mean, eval_std = report.mean, report.std
            scaled = report.scaled_reward if report.scaled_reward is not None else float("nan")
            logger.info(f"Evaluación iteración {iteration + 1}: retorno {eval_mean:.3f} ± {eval_std:.3f}, "
                        f"recompensa escalada {scaled:.3f}")
            self.guardar_checkpoints()

        record = MetricsRecord(
            iteration=iteration,
            reward_loss=loss,
            expert_reward_mean=expert_mean,
            generated_reward_mean=gen_mean,
            surrogate=info.surrogate_after,
            mean_kl=kl,
            eval_return_mean=eval_mean,
            eval_return_std=eval_std,
            scaled_reward=scaled,
            wall_clock_s=time.perf_counter() - start if config.record_wall_clock else 0.0,
        )
        logger.info(f"Iteración {iteration + 1}/{self.iterations}: pérdida {loss:.5f}, "
                    f"r_E {expert_mean:.4f}, r_G {gen_mean:.4f}, KL {kl:.5f}")
        return record

    def entrenar(self) -> TrainSummary:
        """
        Ejecuta el bucle completo hasta el presupuesto de iteraciones

        Raises:
            NumericFaultError: Con el índice de la iteración que falló
        """
        config = self.config
        self.inicializar()
        self.run_dir.mkdir(parents=True, exist_ok=True)
        ConfigSerializer.save(self.run_dir / CONFIG_FILE, config)
        metrics_path = MetricsSerializer.write_header(self.run_dir / METRICS_FILE)
        logger.info(f"Entrenando {self.run_id}: {self.iterations} iteraciones, lote {config.batch_size}")

        expert_features = np.concatenate([self.reward_model.features(t) for t in self.demos.trajectories], axis=0)
        expert_reward_cache = None
        if not self.reward_model.is_learned:
            expert_reward_cache = float(np.mean(np.concatenate([
                self.reward_model.trajectory_rewards(t, config.gamma) for t in self.demos.trajectories
            ])))
        rng = np.random.default_rng(self.batch_seed)

        for iteration in range(self.iterations):
            try:
                record = self._iteracion(iteration, expert_features, expert_reward_cache, rng)
            except NumericFaultError as e:
                logger.error(f"Falla numérica en la iteración {iteration}: {e}")
                raise NumericFaultError(str(e), iteration=iteration) from e
            MetricsSerializer.append(metrics_path, record)

        self.guardar_checkpoints()
        final_return = final_scaled = None
        if self.iterations > 0:
            report = evaluate(self.policy, self.spec, config.eval_rollouts, config.eval_seed)
            final_return, final_scaled = report.mean, report.scaled_reward
        logger.info(f"Corrida {self.run_id} terminada: {self.reward_updates} actualizaciones de recompensa, "
                    f"{self.policy_updates} de política")
        return TrainSummary(
            run_id=self.run_id,
            run_dir=self.run_dir,
            iterations=self.iterations,
            reward_updates=self.reward_updates,
            policy_updates=self.policy_updates,
            final_return=final_return,
            final_scaled_reward=final_scaled,
        )


def train(config: TrainConfig) -> TrainSummary:
    return TrainerService(config).entrenar()


# ---------------------------------------------------------------------------
# Barridos
# ---------------------------------------------------------------------------


def _run_cell(config: TrainConfig) -> Dict[str, Any]:
    row = {
        "run_id": config.resolved_run_id(),
        "reward": config.reward,
        "asw": config.asw,
        "ae_hidden_size": config.ae_hidden_size,
        "demo_noise_sigma": config.demo_noise_sigma,
        "seed": config.seed,
        "final_return": float("nan"),
        "final_scaled_reward": float("nan"),
        "error": "",
    }
    try:
        summary = train(config)
        if summary.final_return is not None:
            row["final_return"] = summary.final_return
        if summary.final_scaled_reward is not None:
            row["final_scaled_reward"] = summary.final_scaled_reward
    except (LaboratorioError, ValueError, ArithmeticError, OSError) as e:
        logger.error(f"❌ Celda {row['run_id']} falló: {e}")
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def sweep(configs: List[TrainConfig], n_workers: int = 1, output_dir: Optional[Path] = None) -> pd.DataFrame:
    """
    Entrena cada celda del barrido y resume la recompensa escalada final

    Las fallas de una celda se registran en su fila sin abortar el resto.

    Returns:
        pd.DataFrame: media y desviación por (reward, asw, ae_hidden_size, demo_noise_sigma),
        ordenado por tamaño oculto
    """
    if not configs:
        raise ConfigError("El barrido no tiene celdas")
    if n_workers == 1:
        rows = [_run_cell(c) for c in configs]
    else:
        rows = Parallel(n_jobs=n_workers)(delayed(_run_cell)(c) for c in configs)
    cells = pd.DataFrame(rows)

    keys = ["reward", "asw", "ae_hidden_size", "demo_noise_sigma"]
    summary = (
        cells.groupby(keys, sort=False)["final_scaled_reward"]
        .agg(mean="mean", std=lambda s: float(np.std(s.dropna())) if s.notna().any() else float("nan"),
             n="count")
        .reset_index()
        .sort_values(["ae_hidden_size", "reward", "asw", "demo_noise_sigma"], kind="stable")
        .reset_index(drop=True)
    )

    out = Path(output_dir or configs[0].output_dir)
    TableSerializer.write(out / SWEEP_CELLS_FILE, cells)
    TableSerializer.write(out / SWEEP_SUMMARY_FILE, summary)
    for _, r in summary.iterrows():
        logger.info(f"📊 {r['reward']} h={r['ae_hidden_size']} σ={r['demo_noise_sigma']}: "
                    f"{r['mean']:.3f} ± {r['std']:.3f} (n={r['n']})")
    return summary
