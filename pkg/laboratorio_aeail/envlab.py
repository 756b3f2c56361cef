"""
Entornos de control continuo de juguete, expertos programados y demostraciones

Tres entornos deterministas (pointmass2d, pendulum, cartpole_cont) con
expertos conocidos reemplazan la suite MuJoCo a escala de escritorio.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from sklearn.preprocessing import StandardScaler

from .exceptions import NumericFaultError, ShapeError
from .models import EnvSpec
from .settings import DEFAULT_HORIZON, EXPERT_GATE_FRACTION, NORMALIZER_STD_FLOOR, REFERENCE_SEEDS

logger = logging.getLogger(__name__)


# Constantes físicas por entorno; se serializan junto con las demostraciones
ENV_CONSTANTS: Dict[str, Dict[str, float]] = {
    'pointmass2d': {
        'goal_x': 0.0, 'goal_y': 0.0, 'action_cost': 0.01, 'init_range': 1.0,
    },
    'pendulum': {
        'gravity': 9.81, 'mass': 1.0, 'length': 1.0, 'max_speed': 8.0,
        'init_angle_noise': 0.1, 'init_speed_noise': 0.1,
    },
    'cartpole_cont': {
        'gravity': 9.81, 'masscart': 1.0, 'masspole': 0.1, 'half_length': 0.5,
        'force_mag': 10.0, 'angle_limit': 0.2, 'position_limit': 2.4, 'init_noise': 0.05,
    },
}

_ENV_LAYOUT = {
    # name: (state_dim, action_dim, action bound, dt)
    'pointmass2d': (4, 2, 1.0, 0.05),
    'pendulum': (3, 1, 2.0, 0.05),
    'cartpole_cont': (4, 1, 1.0, 0.02),
}


def make_env_spec(name: str, horizon: Optional[int] = None) -> EnvSpec:
    """
    Construye la especificación registrada de un entorno

    Args:
        name: pointmass2d, pendulum o cartpole_cont
        horizon: Longitud máxima de trayectoria (1024 por defecto)

    Returns:
        EnvSpec: Especificación validada
    """
    if name not in _ENV_LAYOUT:
        raise ValueError(f"Entorno desconocido: {name}")
    state_dim, action_dim, bound, dt = _ENV_LAYOUT[name]
    return EnvSpec(
        name=name,
        state_dim=state_dim,
        action_dim=action_dim,
        action_low=[-bound] * action_dim,
        action_high=[bound] * action_dim,
        horizon=horizon or DEFAULT_HORIZON,
        dt=dt,
        constants=dict(ENV_CONSTANTS[name]),
    )


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    done: bool
    true_reward: float

    def learner_view(self) -> "LearnerTransition":
        return LearnerTransition(self.s, self.a, self.s_next, self.done)


@dataclass
class LearnerTransition:
    """Vista del aprendiz: sin recompensa verdadera"""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    done: bool


@dataclass
class Trajectory:
    """Pares (estado, acción) ordenados de un episodio"""

    states: np.ndarray
    actions: np.ndarray
    dones: np.ndarray
    true_rewards: Optional[np.ndarray] = None
    final_state: Optional[np.ndarray] = None
    raw_actions: Optional[np.ndarray] = None
    log_probs: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def terminated(self) -> bool:
        return bool(len(self) and self.dones[-1])

    def features(self) -> np.ndarray:
        return np.concatenate([self.states, self.actions], axis=1)

    def learner_view(self) -> "Trajectory":
        return replace(self, true_rewards=None)


class FeatureNormalizer:
    """Estandarización por característica de (s, a) concatenados sobre un StandardScaler"""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        if mean.ndim != 1 or mean.shape != std.shape:
            raise ShapeError(f"Media {mean.shape} y desviación {std.shape} incompatibles")
        if np.any(std <= 0):
            raise ShapeError("La desviación del normalizador debe ser positiva")
        self.scaler = StandardScaler()
        self.scaler.mean_ = mean
        self.scaler.scale_ = std
        self.scaler.var_ = std ** 2
        self.scaler.n_features_in_ = mean.shape[0]
        self.scaler.n_samples_seen_ = 0

    @classmethod
    def fit(cls, features: np.ndarray, floor: float = NORMALIZER_STD_FLOOR) -> "FeatureNormalizer":
        """
        Ajusta media y desviación; la desviación se acota por debajo en `floor`

        Raises:
            ShapeError: Con datos vacíos o que no son una matriz
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ShapeError(f"No se puede ajustar un normalizador con datos de forma {features.shape}")
        scaler = StandardScaler().fit(features)
        normalizer = cls(scaler.mean_, np.maximum(np.sqrt(scaler.var_), floor))
        normalizer.scaler.n_samples_seen_ = scaler.n_samples_seen_
        return normalizer

    @classmethod
    def identity(cls, dim: int) -> "FeatureNormalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def mean(self) -> np.ndarray:
        return self.scaler.mean_

    @property
    def std(self) -> np.ndarray:
        return self.scaler.scale_

    @property
    def dim(self) -> int:
        return int(self.scaler.n_features_in_)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"Entrada de dimensión {x.shape[-1]}, el normalizador espera {self.dim}")
        return x

    def _apply(self, x: np.ndarray, transform: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        x = self._check(x)
        rows = np.atleast_2d(x)
        if rows.shape[0] == 0:
            return rows.copy()
        out = transform(rows)
        return out[0] if x.ndim == 1 else out


def normalize(normalizer: FeatureNormalizer, x: np.ndarray) -> np.ndarray:
    return normalizer._apply(x, normalizer.scaler.transform)


def denormalize(normalizer: FeatureNormalizer, x: np.ndarray) -> np.ndarray:
    return normalizer._apply(x, normalizer.scaler.inverse_transform)


@dataclass
class DemonstrationSet:
    """Trayectorias expertas D_E y el normalizador ajustado sobre ellas"""

    trajectories: List[Trajectory]
    env: str
    noise_sigma: float
    normalizer: FeatureNormalizer
    env_spec: Optional[EnvSpec] = None

    def features(self) -> np.ndarray:
        if not self.trajectories:
            return np.zeros((0, self.normalizer.dim))
        return np.concatenate([t.features() for t in self.trajectories], axis=0)

    @property
    def n_pairs(self) -> int:
        return sum(len(t) for t in self.trajectories)


# ---------------------------------------------------------------------------
# Dinámica
# ---------------------------------------------------------------------------


def clip_action(spec: EnvSpec, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (spec.action_dim,):
        raise ShapeError(f"Acción de forma {a.shape}, {spec.name} espera ({spec.action_dim},)")
    return np.clip(a, spec.action_low, spec.action_high)


def _wrap_angle(theta: float) -> float:
    return float((theta + np.pi) % (2.0 * np.pi) - np.pi)


def _dynamics(spec: EnvSpec, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    c = spec.constants
    dt = spec.dt
    if spec.name == 'pointmass2d':
        pos, vel = s[:2], s[2:]
        vel_next = vel + dt * a
        pos_next = pos + dt * vel_next
        return np.concatenate([pos_next, vel_next])

    if spec.name == 'pendulum':
        theta = np.arctan2(s[1], s[0])
        omega = s[2]
        g, m, l = c['gravity'], c['mass'], c['length']
        omega_next = omega + (3.0 * g / (2.0 * l) * np.sin(theta) + 3.0 / (m * l ** 2) * a[0]) * dt
        omega_next = np.clip(omega_next, -c['max_speed'], c['max_speed'])
        theta_next = theta + omega_next * dt
        return np.array([np.cos(theta_next), np.sin(theta_next), omega_next])

    # cartpole_cont: integración de Euler
    x, x_dot, theta, theta_dot = s
    g = c['gravity']
    total_mass = c['masscart'] + c['masspole']
    polemass_length = c['masspole'] * c['half_length']
    force = c['force_mag'] * a[0]
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    temp = (force + polemass_length * theta_dot ** 2 * sin_t) / total_mass
    theta_acc = (g * sin_t - cos_t * temp) / (
        c['half_length'] * (4.0 / 3.0 - c['masspole'] * cos_t ** 2 / total_mass)
    )
    x_acc = temp - polemass_length * theta_acc * cos_t / total_mass
    return np.array([
        x + dt * x_dot,
        x_dot + dt * x_acc,
        theta + dt * theta_dot,
        theta_dot + dt * theta_acc,
    ])


def _is_done(spec: EnvSpec, s_next: np.ndarray) -> bool:
    if spec.name != 'cartpole_cont':
        return False
    c = spec.constants
    return bool(abs(s_next[2]) > c['angle_limit'] or abs(s_next[0]) > c['position_limit'])


def _true_reward(spec: EnvSpec, s: np.ndarray, a: np.ndarray, s_next: np.ndarray, done: bool) -> float:
    c = spec.constants
    if spec.name == 'pointmass2d':
        goal = np.array([c['goal_x'], c['goal_y']])
        return float(-np.sum((s[:2] - goal) ** 2) - c['action_cost'] * np.sum(a ** 2))
    if spec.name == 'pendulum':
        angle = _wrap_angle(np.arctan2(s[1], s[0]))
        return float(-(angle ** 2 + 0.1 * s[2] ** 2 + 0.001 * a[0] ** 2))
    return 0.0 if done else 1.0


def env_reset(spec: EnvSpec, seed: int) -> np.ndarray:
    """Estado inicial determinista: pequeña perturbación uniforme del inicio nominal"""
    rng = np.random.default_rng(seed)
    c = spec.constants
    if spec.name == 'pointmass2d':
        r = c['init_range']
        return np.concatenate([rng.uniform(-r, r, size=2), np.zeros(2)])
    if spec.name == 'pendulum':
        theta = np.pi + rng.uniform(-c['init_angle_noise'], c['init_angle_noise'])
        omega = rng.uniform(-c['init_speed_noise'], c['init_speed_noise'])
        return np.array([np.cos(theta), np.sin(theta), omega])
    n = c['init_noise']
    return rng.uniform(-n, n, size=4)


def env_step(spec: EnvSpec, s: np.ndarray, a: np.ndarray) -> Transition:
    """
    Un paso determinista de la dinámica

    Raises:
        ShapeError: Si el estado o la acción tienen otra dimensión
        NumericFaultError: Si el estado siguiente no es finito
    """
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (spec.state_dim,):
        raise ShapeError(f"Estado de forma {s.shape}, {spec.name} espera ({spec.state_dim},)")
    a = clip_action(spec, a)
    s_next = _dynamics(spec, s, a)
    if not np.all(np.isfinite(s_next)):
        raise NumericFaultError(f"Estado no finito en {spec.name}: {s_next}")
    done = _is_done(spec, s_next)
    return Transition(s.copy(), a, s_next, done, _true_reward(spec, s, a, s_next, done))


def run_episode(
    spec: EnvSpec,
    actor: Callable[[np.ndarray], np.ndarray],
    seed: int,
) -> Trajectory:
    """
    Ejecuta un episodio hasta terminar o alcanzar el horizonte

    Returns:
        Trajectory: Con recompensas verdaderas (solo para evaluación)
    """
    s = env_reset(spec, seed)
    states, actions, raw_actions, dones, rewards = [], [], [], [], []
    for _ in range(spec.horizon):
        raw = np.asarray(actor(s), dtype=np.float64)
        tr = env_step(spec, s, raw)
        states.append(tr.s)
        actions.append(tr.a)
        raw_actions.append(raw)
        dones.append(tr.done)
        rewards.append(tr.true_reward)
        s = tr.s_next
        if tr.done:
            break
    return Trajectory(
        states=np.array(states),
        actions=np.array(actions),
        dones=np.array(dones, dtype=bool),
        true_rewards=np.array(rewards),
        final_state=s,
        raw_actions=np.array(raw_actions),
    )


# ---------------------------------------------------------------------------
# Expertos programados
# ---------------------------------------------------------------------------


def _linearize(spec: EnvSpec, eps: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    s0 = np.zeros(spec.state_dim)
    a0 = np.zeros(spec.action_dim)
    A = np.zeros((spec.state_dim, spec.state_dim))
    B = np.zeros((spec.state_dim, spec.action_dim))
    for i in range(spec.state_dim):
        d = np.zeros(spec.state_dim)
        d[i] = eps
        A[:, i] = (_dynamics(spec, s0 + d, a0) - _dynamics(spec, s0 - d, a0)) / (2 * eps)
    for j in range(spec.action_dim):
        d = np.zeros(spec.action_dim)
        d[j] = eps
        B[:, j] = (_dynamics(spec, s0, a0 + d) - _dynamics(spec, s0, a0 - d)) / (2 * eps)
    return A, B


def lqr_gain(spec: EnvSpec, Q: np.ndarray, R: np.ndarray, max_iters: int = 10_000) -> np.ndarray:
    """
    Ganancia LQR discreta sobre la linealización en el origen

    Returns:
        np.ndarray: K de forma (action_dim, state_dim), con a = -K s
    """
    A, B = _linearize(spec)
    P = Q.copy()
    K = np.zeros((spec.action_dim, spec.state_dim))
    for _ in range(max_iters):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A - B @ K)
        if np.max(np.abs(P_next - P)) < 1e-12 * max(1.0, np.max(np.abs(P))):
            P = P_next
            break
        P = P_next
    return K


class ScriptedExpert:
    """Experto determinista estado → acción"""

    def __init__(self, spec: EnvSpec):
        self.spec = spec

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return clip_action(self.spec, self.act(np.asarray(s, dtype=np.float64)))

    def act(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LqrExpert(ScriptedExpert):
    """Doble integrador: realimentación LQR saturada"""

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        c = spec.constants
        self.goal = np.array([c['goal_x'], c['goal_y'], 0.0, 0.0])
        self.K = lqr_gain(spec, np.diag([1.0, 1.0, 0.1, 0.1]), c['action_cost'] * np.eye(2))

    def act(self, s):
        return -self.K @ (s - self.goal)


class EnergyShapingExpert(ScriptedExpert):
    """Péndulo: bombeo de energía hasta la cima y balance lineal cerca de ella"""

    def __init__(self, spec: EnvSpec, k_energy: float = 5.0, kp: float = 10.0, kd: float = 2.0,
                 switch_cos: float = 0.95):
        super().__init__(spec)
        c = spec.constants
        self.inertia = c['mass'] * c['length'] ** 2 / 3.0
        self.half_weight = c['mass'] * c['gravity'] * c['length'] / 2.0
        self.k_energy, self.kp, self.kd, self.switch_cos = k_energy, kp, kd, switch_cos

    def act(self, s):
        cos_t, sin_t, omega = s
        if cos_t > self.switch_cos:
            theta = np.arctan2(sin_t, cos_t)
            return np.array([-(self.kp * theta + self.kd * omega)])
        energy = 0.5 * self.inertia * omega ** 2 + self.half_weight * cos_t
        return np.array([self.k_energy * omega * (self.half_weight - energy)])


class PdBalanceExpert(ScriptedExpert):
    """Cart-pole: PD sobre el ángulo más términos de posición, ganancias por LQR"""

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.K = lqr_gain(spec, np.diag([1.0, 1.0, 10.0, 1.0]), np.array([[0.1]]))

    def act(self, s):
        return -self.K @ s


def scripted_expert(spec: EnvSpec) -> ScriptedExpert:
    expertos = {
        'pointmass2d': LqrExpert,
        'pendulum': EnergyShapingExpert,
        'cartpole_cont': PdBalanceExpert,
    }
    return expertos[spec.name](spec)


def zero_policy(spec: EnvSpec) -> Callable[[np.ndarray], np.ndarray]:
    return lambda s: np.zeros(spec.action_dim)


def episode_return(trajectory: Trajectory) -> float:
    return float(np.sum(trajectory.true_rewards))


def return_ceiling(spec: EnvSpec) -> float:
    """Mayor retorno alcanzable: 0 en los entornos de costo, el horizonte en cartpole"""
    return float(spec.horizon) if spec.name == 'cartpole_cont' else 0.0


def gate_score(expert_return: float, zero_return: float, ceiling: float) -> float:
    """
    (experto - cero) / (techo - cero); 1 significa retorno máximo

    Si la acción cero ya alcanza el techo, vale 1 solo cuando el experto también lo alcanza.
    """
    if ceiling == zero_return:
        return 1.0 if expert_return >= ceiling else 0.0
    return float((expert_return - zero_return) / (ceiling - zero_return))


def expert_quality_gate(spec: EnvSpec, n_seeds: int = REFERENCE_SEEDS,
                        fraction: float = EXPERT_GATE_FRACTION) -> Dict[str, object]:
    """
    Autoconsistencia del experto: la puntuación media sobre n_seeds semillas debe
    alcanzar `fraction` de la mejor puntuación propia

    La puntuación de cada semilla escala el retorno entre la política de acción cero
    y el techo del entorno, así el criterio es válido con retornos negativos.

    Returns:
        Dict: retornos y puntuaciones por semilla, media, mejor y `passed`
    """
    expert = scripted_expert(spec)
    zero = zero_policy(spec)
    ceiling = return_ceiling(spec)
    expert_returns = [episode_return(run_episode(spec, expert, seed)) for seed in range(n_seeds)]
    zero_returns = [episode_return(run_episode(spec, zero, seed)) for seed in range(n_seeds)]
    scores = [gate_score(e, z, ceiling) for e, z in zip(expert_returns, zero_returns)]
    mean_score, best_score = float(np.mean(scores)), float(np.max(scores))
    passed = best_score > 0.0 and mean_score >= fraction * best_score
    logger.info(
        f"Control de calidad del experto {spec.name}: media {mean_score:.4f}, mejor {best_score:.4f} "
        f"({'ok' if passed else 'FALLA'})"
    )
    return {
        "expert_returns": expert_returns,
        "zero_returns": zero_returns,
        "scores": scores,
        "mean_score": mean_score,
        "best_score": best_score,
        "passed": passed,
    }


# ---------------------------------------------------------------------------
# Demostraciones
# ---------------------------------------------------------------------------


def generate_demos(spec: EnvSpec, expert: Callable[[np.ndarray], np.ndarray], n_traj: int, seed: int) -> DemonstrationSet:
    """
    Genera n_traj trayectorias del experto con semillas seed..seed+n_traj-1

    Returns:
        DemonstrationSet: Demostraciones limpias con normalizador ajustado
    """
    if n_traj < 1:
        raise ValueError(f"n_traj debe ser al menos 1: {n_traj}")
    trajectories = [
        run_episode(spec, expert, seed + i).learner_view()
        for i in range(n_traj)
    ]
    for t in trajectories:
        t.raw_actions = None
        t.final_state = None
    features = np.concatenate([t.features() for t in trajectories], axis=0)
    logger.info(f"Demostraciones generadas: {n_traj} trayectorias de {spec.name}, {features.shape[0]} pares")
    return DemonstrationSet(trajectories, spec.name, 0.0, FeatureNormalizer.fit(features), spec)


def corrupt_demos(demos: DemonstrationSet, sigma: float, seed: int) -> DemonstrationSet:
    """
    Agrega ruido gaussiano N(0, sigma²) a estados y acciones y reajusta el normalizador
    """
    if sigma < 0:
        raise ValueError(f"sigma debe ser no negativo: {sigma}")
    rng = np.random.default_rng(seed)
    trajectories = []
    for t in demos.trajectories:
        states, actions = t.states.copy(), t.actions.copy()
        if sigma > 0:
            states = states + rng.normal(0.0, sigma, size=states.shape)
            actions = actions + rng.normal(0.0, sigma, size=actions.shape)
        trajectories.append(Trajectory(states, actions, t.dones.copy()))
    features = np.concatenate([t.features() for t in trajectories], axis=0)
    return DemonstrationSet(trajectories, demos.env, float(sigma), FeatureNormalizer.fit(features), demos.env_spec)
