"""
Optimización de la política: política gaussiana, crítico de valor, GAE,
paso de región de confianza (TRPO) y pre-entrenamiento por clonación (BC)
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .diffnet import (
    GradientSet, MlpNet, OptimizerState, backward, forward, forward_cache, jvp, optimizer_step,
)
from .envlab import DemonstrationSet, Trajectory
from .exceptions import NumericFaultError, ShapeError
from .models import EnvSpec
from .settings import LOG_STD_FLOOR, POLICY_CONFIG, TRPO_CONFIG

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianPolicy:
    """π_θ(a|s) = N(mean_net(s), diag(exp(log_std))²)"""

    mean_net: MlpNet
    log_std: np.ndarray
    action_low: np.ndarray
    action_high: np.ndarray
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        self.action_low = np.asarray(self.action_low, dtype=np.float64)
        self.action_high = np.asarray(self.action_high, dtype=np.float64)
        if self.log_std.shape != (self.mean_net.output_dim,):
            raise ShapeError(f"log_std de forma {self.log_std.shape} para {self.mean_net.output_dim} acciones")
        if self.action_low.shape != self.log_std.shape or self.action_high.shape != self.log_std.shape:
            raise ShapeError("Los límites de acción no coinciden con la dimensión de la política")
        if not np.all(np.isfinite(self.log_std)):
            raise NumericFaultError("log_std no finito")

    @classmethod
    def initialize(cls, spec: EnvSpec, hidden_size: int = POLICY_CONFIG['policy_hidden_size'],
                   seed: int = 0) -> "GaussianPolicy":
        net = MlpNet.initialize([spec.state_dim, hidden_size, hidden_size, spec.action_dim], rng_seed=seed)
        return cls(net, np.zeros(spec.action_dim), np.array(spec.action_low), np.array(spec.action_high),
                   np.random.default_rng(seed))

    @property
    def state_dim(self) -> int:
        return self.mean_net.input_dim

    @property
    def action_dim(self) -> int:
        return self.mean_net.output_dim

    @property
    def n_params(self) -> int:
        return self.mean_net.n_params + self.action_dim

    @property
    def std(self) -> np.ndarray:
        return np.exp(np.maximum(self.log_std, LOG_STD_FLOOR))

    def get_flat(self) -> np.ndarray:
        """θ = [parámetros de mean_net, log_std]"""
        return np.concatenate([self.mean_net.get_flat(), self.log_std])

    def set_flat(self, flat: np.ndarray) -> "GaussianPolicy":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"Vector plano de {flat.shape} para {self.n_params} parámetros")
        self.mean_net.set_flat(flat[:self.mean_net.n_params])
        self.log_std = flat[self.mean_net.n_params:].copy()
        return self

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy(), self.action_low.copy(),
                              self.action_high.copy(), self.rng)

    def mean(self, states: np.ndarray) -> np.ndarray:
        return forward(self.mean_net, states)


def _check_state(policy: GaussianPolicy, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != policy.state_dim:
        raise ShapeError(f"Estado de dimensión {s.shape[-1]}, la política espera {policy.state_dim}")
    return s


def sample_raw(policy: GaussianPolicy, s: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Muestra sin recortar; el entorno recorta y log_prob usa este valor"""
    s = _check_state(policy, s)
    rng = policy.rng if rng is None else rng
    return policy.mean(s) + policy.std * rng.standard_normal(policy.action_dim)


def act(policy: GaussianPolicy, s: np.ndarray, mode: str = "stochastic",
        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Acción de la política recortada a los límites

    Args:
        policy: Política
        s: Estado
        mode: 'stochastic' o 'deterministic'
        rng: Generador (por defecto el de la política)

    Returns:
        np.ndarray: Acción de forma (action_dim,)
    """
    if mode == "deterministic":
        a = policy.mean(_check_state(policy, s))
    elif mode == "stochastic":
        a = sample_raw(policy, s, rng)
    else:
        raise ValueError(f"Modo desconocido: {mode}")
    return np.clip(a, policy.action_low, policy.action_high)


def log_prob(policy: GaussianPolicy, s: np.ndarray, a: np.ndarray):
    """Log-densidad gaussiana diagonal de la acción sin recortar (float o lote)"""
    s = _check_state(policy, s)
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != policy.action_dim:
        raise ShapeError(f"Acción de dimensión {a.shape[-1]}, la política espera {policy.action_dim}")
    log_std = np.maximum(policy.log_std, LOG_STD_FLOOR)
    z = (a - policy.mean(s)) / policy.std
    lp = -0.5 * np.sum(z ** 2, axis=-1) - np.sum(log_std) - 0.5 * policy.action_dim * _LOG_2PI
    return float(lp) if np.ndim(lp) == 0 else lp


# ---------------------------------------------------------------------------
# Crítico
# ---------------------------------------------------------------------------


@dataclass
class ValueCritic:
    """V(s) para las ventajas; se ajusta por MSE hacia los objetivos de valor"""

    net: MlpNet
    optimizer: Optional[OptimizerState] = None
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.net.output_dim != 1:
            raise ShapeError(f"El crítico debe producir un escalar, no {self.net.output_dim}")

    @classmethod
    def initialize(cls, state_dim: int, hidden_size: int = POLICY_CONFIG['critic_hidden_size'],
                   seed: int = 0) -> "ValueCritic":
        return cls(MlpNet.initialize([state_dim, hidden_size, hidden_size, 1], rng_seed=seed))

    def values(self, states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(forward(self.net, states))[:, 0]


def critic_update(critic: ValueCritic, batch: "RolloutBatch", n: int = POLICY_CONFIG['critic_updates'],
                  lr: float = POLICY_CONFIG['critic_lr'], method: str = "adam") -> ValueCritic:
    """
    n pasos de gradiente sobre L = mean((V(s) - y)²) con el lote completo

    loss_history guarda solo las pérdidas de esta llamada
    """
    if batch.value_targets is None:
        raise ValueError("Faltan los objetivos de valor: ejecute gae_advantages primero")
    if critic.optimizer is None:
        critic.optimizer = OptimizerState.create(critic.net, method, lr)
    states = batch.states
    targets = batch.value_targets
    critic.loss_history = []
    for _ in range(n):
        pred, cache = forward_cache(critic.net, states)
        diff = pred[:, 0] - targets
        critic.loss_history.append(float(np.mean(diff ** 2)))
        grads, _ = backward(critic.net, states, (2.0 * diff / diff.size)[:, None], cache)
        optimizer_step(critic.net, critic.optimizer, grads)
    return critic


# ---------------------------------------------------------------------------
# Lotes de rollouts y GAE
# ---------------------------------------------------------------------------


@dataclass
class RolloutBatch:
    """Trayectorias de la política muestreadora con sus log-probabilidades"""

    trajectories: List[Trajectory]
    rewards: Optional[List[np.ndarray]] = None
    advantages: Optional[np.ndarray] = None
    raw_advantages: Optional[np.ndarray] = None
    value_targets: Optional[np.ndarray] = None

    def __post_init__(self):
        for i, t in enumerate(self.trajectories):
            if t.log_probs is None or len(t.log_probs) != len(t):
                raise ShapeError(f"Trayectoria {i}: log-probabilidades ausentes o desalineadas")
            if t.raw_actions is None or len(t.raw_actions) != len(t):
                raise ShapeError(f"Trayectoria {i}: acciones muestreadas ausentes o desalineadas")

    @property
    def n_pairs(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def states(self) -> np.ndarray:
        return np.concatenate([t.states for t in self.trajectories], axis=0)

    @property
    def raw_actions(self) -> np.ndarray:
        return np.concatenate([t.raw_actions for t in self.trajectories], axis=0)

    @property
    def old_log_probs(self) -> np.ndarray:
        return np.concatenate([t.log_probs for t in self.trajectories])

    def features(self) -> np.ndarray:
        return np.concatenate([t.features() for t in self.trajectories], axis=0)

    def fill_rewards(self, reward_fn: Callable[[Trajectory], np.ndarray]) -> "RolloutBatch":
        """Pseudo-recompensas por trayectoria desde el modelo de recompensa actual"""
        rewards = []
        for i, t in enumerate(self.trajectories):
            r = np.asarray(reward_fn(t), dtype=np.float64)
            if r.shape != (len(t),):
                raise ShapeError(f"Trayectoria {i}: {r.shape} recompensas para {len(t)} pasos")
            rewards.append(r)
        self.rewards = rewards
        return self


def gae_advantages(batch: RolloutBatch, critic: ValueCritic, gamma: float = TRPO_CONFIG['gamma'],
                   lam: float = TRPO_CONFIG['gae_lambda'], normalize: bool = True) -> RolloutBatch:
    """
    δ_t = r_t + γ V(s_{t+1})(1 - done_t) - V(s_t);  A_t = Σ_k (γλ)^k δ_{t+k}

    Las trayectorias truncadas por horizonte se completan con V(estado final).

    Raises:
        ValueError: Si faltan las pseudo-recompensas
    """
    if batch.rewards is None:
        raise ValueError("Faltan las pseudo-recompensas del lote")
    advantages, targets = [], []
    for t, r in zip(batch.trajectories, batch.rewards):
        v = critic.values(t.states)
        v_next = np.empty_like(v)
        v_next[:-1] = v[1:]
        if t.terminated or t.final_state is None:
            v_next[-1] = 0.0
        else:
            v_next[-1] = critic.values(t.final_state[None, :])[0]
        delta = r + gamma * v_next * (1.0 - t.dones.astype(np.float64)) - v
        adv = np.zeros_like(delta)
        acc = 0.0
        for i in range(len(delta) - 1, -1, -1):
            acc = delta[i] + gamma * lam * acc * (1.0 - float(t.dones[i]))
            adv[i] = acc
        advantages.append(adv)
        targets.append(adv + v)

    raw = np.concatenate(advantages)
    batch.raw_advantages = raw
    batch.value_targets = np.concatenate(targets)
    batch.advantages = (raw - raw.mean()) / (raw.std() + 1e-8) if normalize else raw.copy()
    return batch


# ---------------------------------------------------------------------------
# Región de confianza
# ---------------------------------------------------------------------------


@dataclass
class TrustRegionInfo:
    accepted: bool
    surrogate_before: float
    surrogate_after: float
    mean_kl: float
    step_fraction: float = 0.0


def _check_advantages(batch: RolloutBatch) -> np.ndarray:
    if batch.advantages is None:
        raise ValueError("Faltan las ventajas: ejecute gae_advantages primero")
    return batch.advantages


def surrogate(policy: GaussianPolicy, batch: RolloutBatch) -> float:
    """mean(π_θ(a|s) / π_old(a|s) · A) con las log-probabilidades de muestreo"""
    adv = _check_advantages(batch)
    ratio = np.exp(log_prob(policy, batch.states, batch.raw_actions) - batch.old_log_probs)
    return float(np.mean(ratio * adv))


def surrogate_and_gradient(policy: GaussianPolicy, batch: RolloutBatch) -> Tuple[float, np.ndarray]:
    """
    Surrogate importance-weighted y su gradiente respecto de θ = [mean_net, log_std]
    """
    adv = _check_advantages(batch)
    states, actions = batch.states, batch.raw_actions
    mu, cache = forward_cache(policy.mean_net, states)
    std = policy.std
    z = (actions - mu) / std
    log_std = np.maximum(policy.log_std, LOG_STD_FLOOR)
    lp = -0.5 * np.sum(z ** 2, axis=1) - np.sum(log_std) - 0.5 * policy.action_dim * _LOG_2PI
    ratio = np.exp(lp - batch.old_log_probs)
    value = float(np.mean(ratio * adv))

    w = ratio * adv / adv.size
    g_net, _ = backward(policy.mean_net, states, w[:, None] * z / std, cache)
    g_log_std = np.sum(w[:, None] * (z ** 2 - 1.0), axis=0)
    g_log_std = np.where(policy.log_std > LOG_STD_FLOOR, g_log_std, 0.0)
    return value, np.concatenate([g_net.flat(), g_log_std])


def mean_kl(old: GaussianPolicy, new: GaussianPolicy, states: np.ndarray) -> float:
    """Media sobre estados de KL(old ‖ new) para gaussianas diagonales"""
    mu_old, mu_new = old.mean(states), new.mean(states)
    std_old, std_new = old.std, new.std
    kl = (np.log(std_new / std_old)
          + (std_old ** 2 + (mu_old - mu_new) ** 2) / (2.0 * std_new ** 2) - 0.5)
    return float(np.mean(np.sum(np.atleast_2d(kl), axis=1)))


def fisher_vector_product(policy: GaussianPolicy, states: np.ndarray, v: np.ndarray,
                          damping: float = TRPO_CONFIG['cg_damping']) -> np.ndarray:
    """
    F v para la política gaussiana: Jᵀ diag(1/σ²) J v / N en la media y 2 v en log_std
    """
    n_net = policy.mean_net.n_params
    tangent = GradientSet.from_flat(policy.mean_net, v[:n_net])
    _, d_mu = jvp(policy.mean_net, states, tangent)
    d_mu = np.atleast_2d(d_mu)
    g_net, _ = backward(policy.mean_net, states, d_mu / policy.std ** 2 / d_mu.shape[0])
    return np.concatenate([g_net.flat(), 2.0 * v[n_net:]]) + damping * v


def conjugate_gradient(fvp: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       iters: int = TRPO_CONFIG['cg_iters'], tol: float = 1e-10) -> np.ndarray:
    """Resuelve F x = b con a lo sumo `iters` iteraciones"""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    for _ in range(iters):
        if rr < tol:
            break
        fp = fvp(p)
        alpha = rr / (p @ fp)
        x += alpha * p
        r -= alpha * fp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def trust_region_step(
    policy: GaussianPolicy,
    batch: RolloutBatch,
    max_kl: float = TRPO_CONFIG['max_kl'],
    cg_iters: int = TRPO_CONFIG['cg_iters'],
    cg_damping: float = TRPO_CONFIG['cg_damping'],
    backtrack_ratio: float = TRPO_CONFIG['backtrack_ratio'],
    max_backtracks: int = TRPO_CONFIG['max_backtracks'],
) -> Tuple[GaussianPolicy, TrustRegionInfo]:
    """
    Paso de gradiente natural con búsqueda lineal

    Acepta la fracción más grande del paso completo que mejora el surrogate con
    KL(anterior ‖ nueva) ≤ max_kl; si ninguna lo cumple la política no cambia.

    Raises:
        NumericFaultError: Si el surrogate o su gradiente no son finitos
    """
    states = batch.states
    theta_old = policy.get_flat()
    old = policy.copy()
    before, grad = surrogate_and_gradient(policy, batch)
    if not np.isfinite(before) or not np.all(np.isfinite(grad)):
        raise NumericFaultError("Surrogate no finito en trust_region_step")
    if not np.any(grad):
        return policy, TrustRegionInfo(False, before, before, 0.0)

    x = conjugate_gradient(lambda v: fisher_vector_product(policy, states, v, cg_damping), grad, cg_iters)
    shs = 0.5 * x @ fisher_vector_product(policy, states, x, cg_damping)
    if not np.isfinite(shs) or shs <= 0:
        logger.warning(f"Curvatura no positiva en el paso natural (shs={shs}); se omite el paso")
        return policy, TrustRegionInfo(False, before, before, 0.0)
    full_step = x / np.sqrt(shs / max_kl)

    for k in range(max_backtracks + 1):
        fraction = backtrack_ratio ** k
        policy.set_flat(theta_old + fraction * full_step)
        after = surrogate(policy, batch)
        if not np.isfinite(after):
            policy.set_flat(theta_old)
            raise NumericFaultError("Surrogate no finito durante la búsqueda lineal")
        kl = mean_kl(old, policy, states)
        if after - before > 0 and kl <= max_kl:
            return policy, TrustRegionInfo(True, before, after, kl, fraction)

    policy.set_flat(theta_old)
    logger.debug("Búsqueda lineal sin paso aceptado")
    return policy, TrustRegionInfo(False, before, before, 0.0)


# ---------------------------------------------------------------------------
# Clonación de comportamiento
# ---------------------------------------------------------------------------


def bc_loss(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray) -> float:
    """0.5 · mean ||μ(s) - a||²"""
    mu = np.atleast_2d(policy.mean(_check_state(policy, states)))
    return float(0.5 * np.mean(np.sum((mu - np.atleast_2d(actions)) ** 2, axis=1)))


def bc_pretrain(
    policy: GaussianPolicy,
    demos: DemonstrationSet,
    iters: int,
    lr: float = POLICY_CONFIG['bc_lr'],
    batch_size: int = POLICY_CONFIG['bc_batch_size'],
    seed: int = 0,
) -> GaussianPolicy:
    """
    Ajusta la media de la política a las acciones expertas (log_std fijo) con adam

    Raises:
        ValueError: Si no hay demostraciones
    """
    if not demos.trajectories or demos.n_pairs == 0:
        raise ValueError("bc_pretrain necesita demostraciones no vacías")
    if iters == 0:
        return policy
    states = np.concatenate([t.states for t in demos.trajectories], axis=0)
    actions = np.concatenate([t.actions for t in demos.trajectories], axis=0)
    rng = np.random.default_rng(seed)
    opt = OptimizerState.create(policy.mean_net, "adam", lr)
    n = states.shape[0]
    for it in range(iters):
        idx = rng.integers(0, n, size=min(batch_size, n))
        s, a = states[idx], actions[idx]
        mu, cache = forward_cache(policy.mean_net, s)
        grads, _ = backward(policy.mean_net, s, (mu - a) / s.shape[0], cache)
        optimizer_step(policy.mean_net, opt, grads)
        if (it + 1) % 1000 == 0:
            logger.info(f"BC iteración {it + 1}/{iters}: pérdida {bc_loss(policy, states, actions):.6f}")
    return policy
