"""
Modelos de recompensa: auto-encoder (W y JS), VAE, discriminadores JSD/F-KLD,
transporte óptimo voraz (GOT) y el envoltorio de estados absorbentes (ASW)

Todas las recompensas reciben vectores (s, a) crudos; las redes consumen la
versión normalizada y el error de reconstrucción se mide contra la entrada cruda.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .diffnet import (
    GradientSet, MlpNet, OptimizerState, backward, clip_params, forward,
    forward_cache, hidden_activations, optimizer_step,
)
from .envlab import DemonstrationSet, FeatureNormalizer, Trajectory, normalize
from .exceptions import ShapeError, UnsupportedVariantError
from .settings import CLIP_RANGE, JS_AE_FLOOR

logger = logging.getLogger(__name__)


def _as_rows(x: np.ndarray, dim: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.ndim != 2 or rows.shape[1] != dim:
        raise ShapeError(f"Entrada de forma {x.shape}, se espera dimensión {dim}")
    return rows, single


def _check_batches(expert_batch: np.ndarray, gen_batch: np.ndarray, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    expert, _ = _as_rows(expert_batch, dim)
    gen, _ = _as_rows(gen_batch, dim)
    if expert.shape[0] == 0 or gen.shape[0] == 0:
        raise ValueError("Lote vacío: se requieren pares experto y generados")
    if expert.shape[0] != gen.shape[0]:
        raise ShapeError(f"Lotes de distinto tamaño: experto {expert.shape[0]}, generado {gen.shape[0]}")
    return expert, gen


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


# ---------------------------------------------------------------------------
# Transformaciones del error de reconstrucción
# ---------------------------------------------------------------------------


def w_reward_from_error(err: np.ndarray) -> np.ndarray:
    """r = 1 / (1 + AE)"""
    return 1.0 / (1.0 + np.asarray(err, dtype=np.float64))


def js_reward_from_error(err: np.ndarray, floor: float = JS_AE_FLOOR) -> np.ndarray:
    """r = -log(1 - exp(-AE)), con AE acotado por debajo en `floor`"""
    clamped = np.maximum(np.asarray(err, dtype=np.float64), floor)
    return -np.log(-np.expm1(-clamped))


def w_objective(expert_errors: np.ndarray, gen_errors: np.ndarray) -> float:
    """E_π[1/(1+AE)] - E_E[1/(1+AE)]"""
    return float(np.mean(w_reward_from_error(gen_errors)) - np.mean(w_reward_from_error(expert_errors)))


def js_objective(expert_errors: np.ndarray, gen_errors: np.ndarray, floor: float = JS_AE_FLOOR) -> float:
    """E_E[AE] - E_π[log(1 - exp(-AE))]"""
    expert = np.maximum(np.asarray(expert_errors, dtype=np.float64), floor)
    return float(np.mean(expert) + np.mean(js_reward_from_error(gen_errors, floor)))


def gaussian_kl_to_prior(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """KL(N(mu, exp(logvar)) || N(0, I)) por fila"""
    mu = np.atleast_2d(mu)
    logvar = np.atleast_2d(logvar)
    return 0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar, axis=1)


# ---------------------------------------------------------------------------
# Interfaz común
# ---------------------------------------------------------------------------


class RewardModel:
    """Recompensa r_w(s, a) usada por el entrenador"""

    variant: str = ""
    is_learned: bool = True

    @property
    def input_dim(self) -> int:
        raise NotImplementedError

    def networks(self) -> List[MlpNet]:
        return []

    def rewards(self, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def train_step(self, expert_batch: np.ndarray, gen_batch: np.ndarray) -> float:
        raise NotImplementedError

    def features(self, trajectory: Trajectory) -> np.ndarray:
        return trajectory.features()

    def live_features(self, trajectory: Trajectory) -> np.ndarray:
        """Una fila por par (s, a) realmente visitado"""
        return self.features(trajectory)

    def trajectory_rewards(self, trajectory: Trajectory, gamma: float) -> np.ndarray:
        return self.rewards(self.features(trajectory))

    def latent_activations(self, batch: np.ndarray) -> np.ndarray:
        raise UnsupportedVariantError(f"La variante {self.variant} no tiene capa latente")


def _adam_states(nets: List[MlpNet], lr: float) -> List[OptimizerState]:
    return [OptimizerState.create(net, "adam", lr) for net in nets]


# ---------------------------------------------------------------------------
# Auto-encoder (AE-W y AE-JS)
# ---------------------------------------------------------------------------


@dataclass
class AutoEncoder(RewardModel):
    """Auto-encoder cuya recompensa es una transformación monótona del error de reconstrucción"""

    enc: MlpNet
    dec: MlpNet
    normalizer: FeatureNormalizer
    clip_range: Tuple[float, float] = CLIP_RANGE
    objective: str = "w"
    learning_rate: float = 3e-4
    optimizers: List[OptimizerState] = field(default_factory=list)

    def __post_init__(self):
        if self.enc.input_dim != self.dec.output_dim or self.enc.output_dim != self.dec.input_dim:
            raise ShapeError(
                f"Encoder {self.enc.layer_sizes} y decoder {self.dec.layer_sizes} no son compatibles"
            )
        if self.normalizer.dim != self.enc.input_dim:
            raise ShapeError(f"Normalizador de dimensión {self.normalizer.dim} para AE de {self.enc.input_dim}")
        if self.objective not in ("w", "js"):
            raise ValueError(f"Objetivo desconocido: {self.objective}")
        if not self.optimizers:
            self.optimizers = _adam_states([self.enc, self.dec], self.learning_rate)

    @classmethod
    def build(cls, input_dim: int, hidden: int, latent: Optional[int], normalizer: FeatureNormalizer,
              seed: int, objective: str = "w", learning_rate: float = 3e-4,
              clip_range: Tuple[float, float] = CLIP_RANGE) -> "AutoEncoder":
        """
        Sin `latent` la red completa es [entrada, hidden, hidden, entrada] con ambas
        capas ocultas tanh; con `latent` se agrega un cuello de botella lineal
        [entrada, hidden, latent, hidden, entrada]
        """
        if latent is None:
            enc = MlpNet.initialize([input_dim, hidden], rng_seed=seed, output_activation="tanh")
            dec = MlpNet.initialize([hidden, hidden, input_dim], rng_seed=seed + 1)
        else:
            enc = MlpNet.initialize([input_dim, hidden, latent], rng_seed=seed)
            dec = MlpNet.initialize([latent, hidden, input_dim], rng_seed=seed + 1)
        ae = cls(enc, dec, normalizer, tuple(clip_range), objective, learning_rate)
        clip_params(ae.enc, *ae.clip_range)
        clip_params(ae.dec, *ae.clip_range)
        return ae

    @property
    def bottleneck(self) -> Optional[int]:
        return self.enc.output_dim if self.enc.output_activation == "identity" else None

    @property
    def variant(self) -> str:
        return "ae_w" if self.objective == "w" else "ae_js"

    @property
    def input_dim(self) -> int:
        return self.enc.input_dim

    def networks(self) -> List[MlpNet]:
        return [self.enc, self.dec]

    def _pass(self, x: np.ndarray):
        rows, _ = _as_rows(x, self.input_dim)
        xn = normalize(self.normalizer, rows)
        z, enc_cache = forward_cache(self.enc, xn)
        y, dec_cache = forward_cache(self.dec, z)
        err = np.sum((y - rows) ** 2, axis=1)
        return rows, xn, z, y, err, enc_cache, dec_cache

    def _backward(self, pass_, d_err: np.ndarray) -> List[GradientSet]:
        rows, xn, z, y, _, enc_cache, dec_cache = pass_
        dy = 2.0 * (y - rows) * d_err[:, None]
        g_dec, dz = backward(self.dec, z, dy, dec_cache)
        g_enc, _ = backward(self.enc, xn, dz, enc_cache)
        return [g_enc, g_dec]

    def errors(self, x: np.ndarray) -> np.ndarray:
        return self._pass(x)[4]

    def rewards(self, features: np.ndarray) -> np.ndarray:
        err = self.errors(features)
        return w_reward_from_error(err) if self.objective == "w" else js_reward_from_error(err)

    def loss_and_grads(self, expert_batch: np.ndarray, gen_batch: np.ndarray) -> Tuple[float, List[GradientSet]]:
        """Pérdida adversarial del objetivo configurado y sus gradientes (encoder, decoder)"""
        expert, gen = _check_batches(expert_batch, gen_batch, self.input_dim)
        n = expert.shape[0]
        pass_ = self._pass(np.concatenate([expert, gen], axis=0))
        err = pass_[4]
        err_e, err_g = err[:n], err[n:]
        if self.objective == "w":
            loss = w_objective(err_e, err_g)
            r_e, r_g = w_reward_from_error(err_e), w_reward_from_error(err_g)
            d_err = np.concatenate([r_e ** 2 / n, -(r_g ** 2) / n])
        else:
            loss = js_objective(err_e, err_g)
            d_e = np.where(err_e > JS_AE_FLOOR, 1.0 / n, 0.0)
            clamped_g = np.maximum(err_g, JS_AE_FLOOR)
            d_g = np.where(err_g > JS_AE_FLOOR, -1.0 / (n * np.expm1(clamped_g)), 0.0)
            d_err = np.concatenate([d_e, d_g])
        return loss, self._backward(pass_, d_err)

    def train_step(self, expert_batch: np.ndarray, gen_batch: np.ndarray) -> float:
        loss, grads = self.loss_and_grads(expert_batch, gen_batch)
        for net, opt, g in zip(self.networks(), self.optimizers, grads):
            optimizer_step(net, opt, g)
            clip_params(net, *self.clip_range)
        return loss

    def latent_activations(self, batch: np.ndarray) -> np.ndarray:
        """Primera capa oculta (post-tanh) del auto-encoder completo"""
        rows, _ = _as_rows(batch, self.input_dim)
        xn = normalize(self.normalizer, rows)
        if self.enc.n_layers == 1:
            return forward(self.enc, xn)
        return hidden_activations(self.enc, xn, layer=0)


def reconstruction_error(ae: AutoEncoder, x: np.ndarray):
    """
    AE(x) = ||Dec(Enc(x_norm)) - x||² contra la entrada cruda

    Returns:
        float para un vector, np.ndarray para un lote
    """
    _, single = _as_rows(x, ae.input_dim)
    err = ae.errors(x)
    return float(err[0]) if single else err


def reward_ae_w(ae: AutoEncoder, x: np.ndarray):
    err = reconstruction_error(ae, x)
    return float(w_reward_from_error(err)) if np.ndim(err) == 0 else w_reward_from_error(err)


def reward_ae_js(ae: AutoEncoder, x: np.ndarray):
    err = reconstruction_error(ae, x)
    return float(js_reward_from_error(err)) if np.ndim(err) == 0 else js_reward_from_error(err)


def loss_ae_w(ae: AutoEncoder, expert_batch: np.ndarray, gen_batch: np.ndarray) -> float:
    expert, gen = _check_batches(expert_batch, gen_batch, ae.input_dim)
    return w_objective(ae.errors(expert), ae.errors(gen))


def loss_ae_js(ae: AutoEncoder, expert_batch: np.ndarray, gen_batch: np.ndarray) -> float:
    expert, gen = _check_batches(expert_batch, gen_batch, ae.input_dim)
    return js_objective(ae.errors(expert), ae.errors(gen))


# ---------------------------------------------------------------------------
# Auto-encoder variacional
# ---------------------------------------------------------------------------


@dataclass
class VariationalAutoEncoder(RewardModel):
    """VAE con prior N(0, I); la recompensa usa la media posterior en evaluación"""

    enc_mean: MlpNet
    enc_logvar: MlpNet
    dec: MlpNet
    normalizer: FeatureNormalizer
    rng: np.random.Generator
    clip_range: Tuple[float, float] = CLIP_RANGE
    kl_weight: float = 1.0
    learning_rate: float = 3e-4
    optimizers: List[OptimizerState] = field(default_factory=list)

    variant = "vae"

    def __post_init__(self):
        if self.enc_mean.layer_sizes != self.enc_logvar.layer_sizes:
            raise ShapeError("Los encoders de media y log-varianza deben tener la misma forma")
        if self.enc_mean.output_dim != self.dec.input_dim or self.dec.output_dim != self.enc_mean.input_dim:
            raise ShapeError(f"Encoder {self.enc_mean.layer_sizes} y decoder {self.dec.layer_sizes} no son compatibles")
        if not self.optimizers:
            self.optimizers = _adam_states(self.networks(), self.learning_rate)

    @classmethod
    def build(cls, input_dim: int, hidden: int, latent: Optional[int], normalizer: FeatureNormalizer, seed: int,
              kl_weight: float = 1.0, learning_rate: float = 3e-4,
              clip_range: Tuple[float, float] = CLIP_RANGE) -> "VariationalAutoEncoder":
        """Sin `latent` el espacio latente tiene el ancho de la capa oculta"""
        latent = hidden if latent is None else latent
        vae = cls(
            MlpNet.initialize([input_dim, hidden, latent], rng_seed=seed),
            MlpNet.initialize([input_dim, hidden, latent], rng_seed=seed + 1),
            MlpNet.initialize([latent, hidden, input_dim], rng_seed=seed + 2),
            normalizer,
            np.random.default_rng(seed + 3),
            tuple(clip_range),
            kl_weight,
            learning_rate,
        )
        for net in vae.networks():
            clip_params(net, *vae.clip_range)
        return vae

    @property
    def input_dim(self) -> int:
        return self.enc_mean.input_dim

    @property
    def latent_dim(self) -> int:
        return self.enc_mean.output_dim

    def networks(self) -> List[MlpNet]:
        return [self.enc_mean, self.enc_logvar, self.dec]

    def posterior(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rows, _ = _as_rows(x, self.input_dim)
        xn = normalize(self.normalizer, rows)
        return forward(self.enc_mean, xn), forward(self.enc_logvar, xn)

    def _pass(self, x: np.ndarray, noise: np.ndarray):
        rows, _ = _as_rows(x, self.input_dim)
        xn = normalize(self.normalizer, rows)
        mu, mu_cache = forward_cache(self.enc_mean, xn)
        logvar, lv_cache = forward_cache(self.enc_logvar, xn)
        std = np.exp(0.5 * logvar)
        z = mu + std * noise
        y, dec_cache = forward_cache(self.dec, z)
        err = np.sum((y - rows) ** 2, axis=1)
        kl = gaussian_kl_to_prior(mu, logvar)
        return rows, xn, mu, logvar, std, z, y, err, kl, (mu_cache, lv_cache, dec_cache)

    def errors(self, x: np.ndarray) -> np.ndarray:
        rows, _ = _as_rows(x, self.input_dim)
        return self._pass(rows, np.zeros((rows.shape[0], self.latent_dim)))[7]

    def rewards(self, features: np.ndarray) -> np.ndarray:
        return w_reward_from_error(self.errors(features))

    def loss_and_grads(self, expert_batch: np.ndarray, gen_batch: np.ndarray,
                       noise: Optional[np.ndarray] = None, sample: bool = True) -> Tuple[float, List[GradientSet]]:
        """
        L = (E_π[r] - E_E[r]) + β (E_E[KL] - E_π[KL])

        El mismo ruido de reparametrización se usa para la fila i de ambos lotes.
        """
        expert, gen = _check_batches(expert_batch, gen_batch, self.input_dim)
        n = expert.shape[0]
        if noise is None:
            noise = self.rng.standard_normal((n, self.latent_dim)) if sample else np.zeros((n, self.latent_dim))
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (n, self.latent_dim):
            raise ShapeError(f"Ruido de forma {noise.shape}, se esperaba ({n}, {self.latent_dim})")
        eps = np.concatenate([noise, noise], axis=0)
        rows, xn, mu, logvar, std, z, y, err, kl, caches = self._pass(np.concatenate([expert, gen], axis=0), eps)
        mu_cache, lv_cache, dec_cache = caches

        # expertos con signo +1: subir su recompensa baja la pérdida, el KL entra con el signo contrario
        r = w_reward_from_error(err)
        signo = np.concatenate([np.ones(n), -np.ones(n)])
        loss = float(-np.sum(signo * r) / n + self.kl_weight * np.sum(signo * kl) / n)

        d_err = signo * r ** 2 / n
        dy = 2.0 * (y - rows) * d_err[:, None]
        g_dec, dz = backward(self.dec, z, dy, dec_cache)
        d_kl = (self.kl_weight * signo / n)[:, None]
        dmu = dz + d_kl * mu
        dlogvar = dz * 0.5 * std * eps + d_kl * 0.5 * (np.exp(logvar) - 1.0)
        g_mu, _ = backward(self.enc_mean, xn, dmu, mu_cache)
        g_lv, _ = backward(self.enc_logvar, xn, dlogvar, lv_cache)
        return loss, [g_mu, g_lv, g_dec]

    def train_step(self, expert_batch: np.ndarray, gen_batch: np.ndarray) -> float:
        loss, grads = self.loss_and_grads(expert_batch, gen_batch)
        for net, opt, g in zip(self.networks(), self.optimizers, grads):
            optimizer_step(net, opt, g)
            clip_params(net, *self.clip_range)
        return loss

    def latent_activations(self, batch: np.ndarray) -> np.ndarray:
        rows, _ = _as_rows(batch, self.input_dim)
        return hidden_activations(self.enc_mean, normalize(self.normalizer, rows), layer=0)


def kl_to_prior(vae: VariationalAutoEncoder, x: np.ndarray):
    _, single = _as_rows(x, vae.input_dim)
    mu, logvar = vae.posterior(x)
    kl = gaussian_kl_to_prior(mu, logvar)
    return float(kl[0]) if single else kl


def loss_vae(vae: VariationalAutoEncoder, expert_batch: np.ndarray, gen_batch: np.ndarray,
             noise: Optional[np.ndarray] = None, sample: bool = True) -> float:
    return vae.loss_and_grads(expert_batch, gen_batch, noise=noise, sample=sample)[0]


# ---------------------------------------------------------------------------
# Discriminadores (JSD y F-KLD)
# ---------------------------------------------------------------------------


@dataclass
class Discriminator(RewardModel):
    """Discriminador (s, a) → logit, expertos etiquetados con 1"""

    net: MlpNet
    normalizer: FeatureNormalizer
    objective: str = "jsd"
    learning_rate: float = 3e-4
    optimizers: List[OptimizerState] = field(default_factory=list)

    def __post_init__(self):
        if self.net.output_dim != 1:
            raise ShapeError(f"El discriminador debe producir un logit, no {self.net.output_dim}")
        if self.objective not in ("jsd", "fkld"):
            raise ValueError(f"Objetivo de discriminador desconocido: {self.objective}")
        if not self.optimizers:
            self.optimizers = _adam_states([self.net], self.learning_rate)

    @classmethod
    def build(cls, input_dim: int, hidden: int, normalizer: FeatureNormalizer, seed: int,
              objective: str = "jsd", learning_rate: float = 3e-4) -> "Discriminator":
        return cls(MlpNet.initialize([input_dim, hidden, hidden, 1], rng_seed=seed), normalizer,
                   objective, learning_rate)

    @property
    def variant(self) -> str:
        return f"disc_{self.objective}"

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    def networks(self) -> List[MlpNet]:
        return [self.net]

    def logits(self, x: np.ndarray) -> np.ndarray:
        rows, _ = _as_rows(x, self.input_dim)
        return forward(self.net, normalize(self.normalizer, rows))[:, 0]

    def rewards(self, features: np.ndarray) -> np.ndarray:
        return reward_from_logits(self.logits(features), self.objective)

    def loss_and_grads(self, expert_batch: np.ndarray, gen_batch: np.ndarray) -> Tuple[float, List[GradientSet]]:
        """Entropía cruzada binaria promedio sobre los 2n pares"""
        expert, gen = _check_batches(expert_batch, gen_batch, self.input_dim)
        n = expert.shape[0]
        xn = normalize(self.normalizer, np.concatenate([expert, gen], axis=0))
        out, cache = forward_cache(self.net, xn)
        logit = out[:, 0]
        l_e, l_g = logit[:n], logit[n:]
        loss = float(0.5 * (np.mean(_softplus(-l_e)) + np.mean(_softplus(l_g))))
        d_logit = np.concatenate([-0.5 * _sigmoid(-l_e) / n, 0.5 * _sigmoid(l_g) / n])
        grads, _ = backward(self.net, xn, d_logit[:, None], cache)
        return loss, [grads]

    def train_step(self, expert_batch: np.ndarray, gen_batch: np.ndarray) -> float:
        loss, grads = self.loss_and_grads(expert_batch, gen_batch)
        optimizer_step(self.net, self.optimizers[0], grads[0])
        return loss

    def latent_activations(self, batch: np.ndarray) -> np.ndarray:
        rows, _ = _as_rows(batch, self.input_dim)
        return hidden_activations(self.net, normalize(self.normalizer, rows), layer=0)


def reward_from_logits(logits: np.ndarray, objective: str) -> np.ndarray:
    """jsd: -log(1 - σ(ℓ)); fkld: exp(ℓ)·(-ℓ)"""
    logits = np.asarray(logits, dtype=np.float64)
    if objective == "jsd":
        return _softplus(logits)
    acotado = np.clip(logits, -20.0, 20.0)
    return np.exp(acotado) * (-acotado)


def disc_loss_and_reward(d: Discriminator, expert_batch: np.ndarray,
                         gen_batch: np.ndarray) -> Tuple[float, Callable[[np.ndarray], np.ndarray]]:
    loss, _ = d.loss_and_grads(expert_batch, gen_batch)
    return loss, d.rewards


# ---------------------------------------------------------------------------
# Transporte óptimo voraz (GOT)
# ---------------------------------------------------------------------------


_LEDGER_TOL = 1e-15


@dataclass
class GotReward(RewardModel):
    """Recompensa estacionaria por acoplamiento voraz con átomos expertos"""

    atoms: np.ndarray
    horizon: int
    alpha: float = 5.0
    beta: float = 5.0
    normalizer: Optional[FeatureNormalizer] = None
    remaining: np.ndarray = field(default=None)
    last_consumed: List[Tuple[int, float]] = field(default_factory=list)

    variant = "got"
    is_learned = False

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        if self.atoms.shape[0] == 0:
            raise ValueError("GOT necesita al menos un átomo experto")
        if self.horizon < 1:
            raise ValueError(f"Horizonte inválido: {self.horizon}")
        if self.normalizer is not None:
            self.atoms = normalize(self.normalizer, self.atoms)
        got_reset(self)

    @classmethod
    def from_demos(cls, demos: DemonstrationSet, horizon: int, alpha: float, beta: float,
                   features: Optional[np.ndarray] = None,
                   normalizer: Optional[FeatureNormalizer] = None) -> "GotReward":
        feats = demos.features() if features is None else features
        return cls(feats, horizon, alpha, beta, normalizer or demos.normalizer)

    @property
    def input_dim(self) -> int:
        return int(self.atoms.shape[1])

    @property
    def step_weight(self) -> float:
        return 1.0 / self.horizon

    def rewards(self, features: np.ndarray) -> np.ndarray:
        """Recorre las filas como un episodio con libro mayor nuevo"""
        rows, _ = _as_rows(features, self.input_dim)
        got_reset(self)
        return np.array([got_reward_step(self, x) for x in rows])

    def trajectory_rewards(self, trajectory: Trajectory, gamma: float) -> np.ndarray:
        return self.rewards(self.features(trajectory))

    def train_step(self, expert_batch: np.ndarray, gen_batch: np.ndarray) -> float:
        # Recompensa fija: no hay parámetros que actualizar
        return 0.0


def got_reset(g: GotReward) -> GotReward:
    g.remaining = np.full(g.atoms.shape[0], 1.0 / g.atoms.shape[0])
    g.last_consumed = []
    return g


def got_reward_step(g: GotReward, x: np.ndarray) -> float:
    """
    Consume los átomos restantes más cercanos hasta cubrir 1/T de masa

    Returns:
        float: α·exp(-β·c) con c el costo normalizado por 1/T; 0 si el libro está agotado
    """
    rows, _ = _as_rows(x, g.input_dim)
    point = rows[0] if g.normalizer is None else normalize(g.normalizer, rows[0])
    g.last_consumed = []
    if g.remaining.sum() <= _LEDGER_TOL:
        return 0.0
    dist = np.linalg.norm(g.atoms - point, axis=1)
    dist[g.remaining <= 0.0] = np.inf
    need = g.step_weight
    cost = 0.0
    while need > _LEDGER_TOL:
        k = int(np.argmin(dist))
        if not np.isfinite(dist[k]):
            break
        take = min(g.remaining[k], need)
        cost += take * dist[k]
        g.remaining[k] -= take
        if g.remaining[k] <= _LEDGER_TOL:
            g.remaining[k] = 0.0
            dist[k] = np.inf
        need -= take
        g.last_consumed.append((k, take))
    c = cost / g.step_weight
    return float(g.alpha * np.exp(-g.beta * c))


# ---------------------------------------------------------------------------
# Envoltorio de estados absorbentes (ASW)
# ---------------------------------------------------------------------------


@dataclass
class AbsorbingWrapper(RewardModel):
    """Aumenta los estados con un bit absorbente y rellena trayectorias terminadas"""

    inner: RewardModel
    state_dim: int
    action_dim: int
    horizon: int

    def __post_init__(self):
        if self.inner.input_dim != self.state_dim + 1 + self.action_dim:
            raise ShapeError(
                f"El modelo interno espera {self.inner.input_dim}, ASW produce {self.state_dim + 1 + self.action_dim}"
            )

    @property
    def variant(self) -> str:
        return self.inner.variant

    @property
    def is_learned(self) -> bool:
        return self.inner.is_learned

    @property
    def input_dim(self) -> int:
        return self.inner.input_dim

    def networks(self) -> List[MlpNet]:
        return self.inner.networks()

    def rewards(self, features: np.ndarray) -> np.ndarray:
        return self.inner.rewards(features)

    def train_step(self, expert_batch: np.ndarray, gen_batch: np.ndarray) -> float:
        return self.inner.train_step(expert_batch, gen_batch)

    def features(self, trajectory: Trajectory) -> np.ndarray:
        return asw_augment(self, trajectory).features()

    def live_features(self, trajectory: Trajectory) -> np.ndarray:
        return asw_augment(self, trajectory).features()[:len(trajectory)]

    def trajectory_rewards(self, trajectory: Trajectory, gamma: float) -> np.ndarray:
        """Recompensas de los pasos vivos; la cola absorbente descontada se suma al último"""
        full = self.inner.rewards(asw_augment(self, trajectory).features())
        live = len(trajectory)
        rewards = full[:live].copy()
        tail = full[live:]
        if tail.size:
            rewards[-1] += absorbing_bonus(tail, gamma)
        return rewards

    def latent_activations(self, batch: np.ndarray) -> np.ndarray:
        return self.inner.latent_activations(batch)


def absorbing_bonus(tail_rewards: np.ndarray, gamma: float) -> float:
    """Σ_k γ^k r_k (k ≥ 1) de la cola absorbente rellenada"""
    k = np.arange(1, len(tail_rewards) + 1)
    return float(np.sum(gamma ** k * tail_rewards))


def asw_augment(wrapper: AbsorbingWrapper, trajectory: Trajectory) -> Trajectory:
    """
    Agrega el bit absorbente y, si la trayectoria terminó, rellena hasta el horizonte
    con (estado absorbente, acción cero)
    """
    return augment_trajectory(trajectory, wrapper.state_dim, wrapper.action_dim, wrapper.horizon)


def augment_trajectory(trajectory: Trajectory, state_dim: int, action_dim: int, horizon: int) -> Trajectory:
    n = len(trajectory)
    if trajectory.states.shape[1] != state_dim:
        raise ShapeError(f"Estados de dimensión {trajectory.states.shape[1]}, se esperaba {state_dim}")
    states = np.concatenate([trajectory.states, np.zeros((n, 1))], axis=1)
    actions = trajectory.actions.copy()
    dones = trajectory.dones.copy()
    if trajectory.terminated and n < horizon:
        pad = horizon - n
        absorbing = np.zeros((pad, state_dim + 1))
        absorbing[:, -1] = 1.0
        states = np.concatenate([states, absorbing], axis=0)
        actions = np.concatenate([actions, np.zeros((pad, action_dim))], axis=0)
        dones = np.concatenate([dones, np.ones(pad, dtype=bool)])
    return Trajectory(states, actions, dones)


def asw_strip(augmented: Trajectory) -> Trajectory:
    """Inversa de asw_augment: quita relleno absorbente y el bit"""
    live = augmented.states[:, -1] == 0.0
    return Trajectory(augmented.states[live, :-1], augmented.actions[live], augmented.dones[live])


def augment_normalizer(normalizer: FeatureNormalizer, state_dim: int) -> FeatureNormalizer:
    """Inserta (media 0, desviación 1) para el bit absorbente, que no se normaliza"""
    mean = np.insert(normalizer.mean, state_dim, 0.0)
    std = np.insert(normalizer.std, state_dim, 1.0)
    return FeatureNormalizer(mean, std)


# ---------------------------------------------------------------------------
# Capa latente y Lipschitz empírico
# ---------------------------------------------------------------------------


def latent_activations(model: RewardModel, batch: np.ndarray) -> np.ndarray:
    """Activaciones post-tanh de la primera capa oculta, una fila por entrada"""
    return model.latent_activations(batch)


def empirical_lipschitz(
    reward_fn: Callable[[np.ndarray], np.ndarray],
    low: np.ndarray,
    high: np.ndarray,
    n_pairs: int,
    rng: np.random.Generator,
    radius: float = 0.05,
) -> float:
    """
    Máximo de |r(x1) - r(x2)| / ||x1 - x2|| sobre pares cercanos dentro de una caja

    Args:
        reward_fn: Recompensa por lotes
        low, high: Caja de muestreo
        n_pairs: Número de pares
        rng: Generador
        radius: Desplazamiento relativo al tamaño de la caja

    Returns:
        float: Cociente máximo observado
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    x1 = rng.uniform(low, high, size=(n_pairs, low.size))
    step = rng.uniform(-1.0, 1.0, size=(n_pairs, low.size)) * radius * (high - low)
    x2 = np.clip(x1 + step, low, high)
    dist = np.linalg.norm(x1 - x2, axis=1)
    ok = dist > 0
    ratio = np.abs(reward_fn(x1[ok]) - reward_fn(x2[ok])) / dist[ok]
    return float(np.max(ratio))


# ---------------------------------------------------------------------------
# Fábrica
# ---------------------------------------------------------------------------


def build_reward_model(config, demos: DemonstrationSet, spec, seed: int) -> RewardModel:
    """
    Construye el modelo de recompensa de la variante configurada

    Args:
        config: TrainConfig de la corrida
        demos: Demostraciones (normalizador y átomos GOT)
        spec: EnvSpec del entorno
        seed: Semilla de inicialización de las redes

    Returns:
        RewardModel: Envuelto en AbsorbingWrapper si config.asw
    """
    state_dim, action_dim = spec.state_dim, spec.action_dim
    if demos.normalizer.dim != state_dim + action_dim:
        raise ShapeError(
            f"Demostraciones de dimensión {demos.normalizer.dim}, {spec.name} usa {state_dim + action_dim}"
        )
    normalizer = demos.normalizer
    dim = state_dim + action_dim
    if config.asw:
        normalizer = augment_normalizer(normalizer, state_dim)
        dim += 1
    clip = (config.clip_lo, config.clip_hi)
    variant = config.reward

    if variant in ("ae_w", "ae_js"):
        inner = AutoEncoder.build(dim, config.ae_hidden_size, config.ae_latent_size, normalizer, seed,
                                  objective=variant[3:], learning_rate=config.reward_lr, clip_range=clip)
        logger.info(f"Auto-encoder {inner.enc.layer_sizes} -> {inner.dec.layer_sizes[1:]}, "
                    f"cuello de botella: {inner.bottleneck or 'ninguno'}")
        logger.info(f"Auto-encoder {inner.enc.layer_sizes} + {inner.dec.layer_sizes[1:]}, "
                    f"cuello de botella {inner.bottleneck or 'ninguno'}")
    elif variant == "vae":
        inner = VariationalAutoEncoder.build(dim, config.ae_hidden_size, config.ae_latent_size, normalizer, seed,
                                             kl_weight=config.vae_kl_weight, learning_rate=config.reward_lr,
                                             clip_range=clip)
    elif variant in ("disc_jsd", "disc_fkld"):
        inner = Discriminator.build(dim, config.disc_hidden_size, normalizer, seed,
                                    objective=variant[5:], learning_rate=config.reward_lr)
    elif variant == "got":
        if config.asw:
            atoms = np.concatenate([
                augment_trajectory(t, state_dim, action_dim, spec.horizon).features()
                for t in demos.trajectories
            ])
        else:
            atoms = demos.features()
        inner = GotReward(atoms, spec.horizon, config.got_alpha, config.got_beta, normalizer)
    else:
        raise UnsupportedVariantError(f"Variante de recompensa desconocida: {variant}")

    logger.info(f"Modelo de recompensa {variant}{' + ASW' if config.asw else ''} de dimensión {dim}")
    if config.asw:
        return AbsorbingWrapper(inner, state_dim, action_dim, spec.horizon)
    return inner
