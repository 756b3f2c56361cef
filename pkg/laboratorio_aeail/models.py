"""
Modelos/Esquemas Pydantic - configuración, entornos, reportes y métricas
"""

from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .settings import (
    DEMO_FORMAT_VERSION, ENV_NAMES, EVAL_EVERY, EVAL_ROLLOUTS, EVAL_SEED,
    OUTPUT_DIR, POLICY_CONFIG, REWARD_CONFIG, REWARD_VARIANTS, TRPO_CONFIG,
    CLIP_RANGE,
)


class EnvSpec(BaseModel):
    """Especificación de un entorno de control continuo"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(description="pointmass2d, pendulum o cartpole_cont")
    state_dim: int = Field(..., ge=1)
    action_dim: int = Field(..., ge=1)
    action_low: List[float]
    action_high: List[float]
    horizon: int = Field(..., ge=1, description="Longitud máxima de trayectoria")
    dt: float = Field(..., gt=0)
    constants: Dict[str, float] = Field(default_factory=dict, description="Constantes físicas")

    @field_validator("name")
    @classmethod
    def validar_nombre(cls, value):
        if value not in ENV_NAMES:
            raise ValueError(f"Entorno desconocido: {value}")
        return value

    @model_validator(mode="after")
    def validar_limites(self):
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ValueError("Los límites de acción deben tener action_dim entradas")
        for lo, hi in zip(self.action_low, self.action_high):
            if not (float("-inf") < lo < hi < float("inf")):
                raise ValueError(f"Límites de acción inválidos: [{lo}, {hi}]")
        return self


class TrainConfig(BaseModel):
    """Todos los parámetros de una corrida de entrenamiento"""

    model_config = ConfigDict(extra="forbid")

    # Entorno y demostraciones
    env: str = "pointmass2d"
    reward: str = "ae_w"
    asw: bool = False
    demo_path: Optional[Path] = None
    n_demo_trajectories: int = Field(10, ge=1)
    demo_noise_sigma: float = Field(0.0, ge=0)
    demo_seed: int = Field(0, ge=0)
    horizon: Optional[int] = Field(None, ge=1)

    # Presupuesto (None = valor por defecto del entorno)
    iterations: Optional[int] = Field(None, ge=0)
    batch_size: int = Field(4096, ge=1)

    # TRPO / GAE
    gamma: float = Field(TRPO_CONFIG['gamma'], gt=0, le=1)
    gae_lambda: float = Field(TRPO_CONFIG['gae_lambda'], ge=0, le=1)
    max_kl: float = Field(TRPO_CONFIG['max_kl'], gt=0)
    cg_iters: int = Field(TRPO_CONFIG['cg_iters'], ge=1)
    cg_damping: float = Field(TRPO_CONFIG['cg_damping'], ge=0)
    backtrack_ratio: float = Field(TRPO_CONFIG['backtrack_ratio'], gt=0, lt=1)
    max_backtracks: int = Field(TRPO_CONFIG['max_backtracks'], ge=0)

    # Modelo de recompensa
    reward_lr: float = Field(REWARD_CONFIG['reward_lr'], gt=0)
    clip_lo: float = CLIP_RANGE[0]
    clip_hi: float = CLIP_RANGE[1]
    ae_hidden_size: int = Field(REWARD_CONFIG['ae_hidden_size'], ge=1)
    ae_latent_size: Optional[int] = Field(REWARD_CONFIG['ae_latent_size'], ge=1,
                                          description="Cuello de botella opcional del auto-encoder")
    disc_hidden_size: int = Field(REWARD_CONFIG['disc_hidden_size'], ge=1)
    vae_kl_weight: float = Field(REWARD_CONFIG['vae_kl_weight'], ge=0)
    got_alpha: float = Field(REWARD_CONFIG['got_alpha'], gt=0)
    got_beta: float = Field(REWARD_CONFIG['got_beta'], gt=0)

    # Política y crítico
    policy_hidden_size: int = Field(POLICY_CONFIG['policy_hidden_size'], ge=1)
    critic_hidden_size: int = Field(POLICY_CONFIG['critic_hidden_size'], ge=1)
    critic_updates: int = Field(POLICY_CONFIG['critic_updates'], ge=0)
    critic_lr: float = Field(POLICY_CONFIG['critic_lr'], gt=0)
    policy_updates_per_iteration: int = Field(POLICY_CONFIG['policy_updates_per_iteration'], ge=1)
    bc_iterations: int = Field(0, ge=0)
    bc_lr: float = Field(POLICY_CONFIG['bc_lr'], gt=0)
    bc_batch_size: int = Field(POLICY_CONFIG['bc_batch_size'], ge=1)

    # Semillas, evaluación y salida
    seed: int = Field(0, ge=0)
    eval_every: int = Field(EVAL_EVERY, ge=1)
    eval_rollouts: int = Field(EVAL_ROLLOUTS, ge=1)
    eval_seed: int = Field(EVAL_SEED, ge=0)
    n_workers: int = Field(1, ge=1)
    output_dir: Path = OUTPUT_DIR
    run_id: Optional[str] = None
    record_wall_clock: bool = False

    @field_validator("env")
    @classmethod
    def validar_env(cls, value):
        if value not in ENV_NAMES:
            raise ValueError(f"Entorno desconocido: {value} (opciones: {', '.join(ENV_NAMES)})")
        return value

    @field_validator("reward")
    @classmethod
    def validar_reward(cls, value):
        if value not in REWARD_VARIANTS:
            raise ValueError(f"Variante de recompensa desconocida: {value} (opciones: {', '.join(REWARD_VARIANTS)})")
        return value

    @field_validator("run_id")
    @classmethod
    def validar_run_id(cls, value):
        if value is not None and (not value or "/" in value or "\\" in value or value in (".", "..")):
            raise ValueError(f"run_id inválido: {value!r}")
        return value

    @model_validator(mode="after")
    def validar_rango_recorte(self):
        if not self.clip_lo < self.clip_hi:
            raise ValueError(f"clip_lo ({self.clip_lo}) debe ser menor que clip_hi ({self.clip_hi})")
        return self

    def resolved_run_id(self) -> str:
        """Identificador determinista de la corrida"""
        if self.run_id:
            return self.run_id
        asw = "_asw" if self.asw else ""
        return (
            f"{self.env}_{self.reward}{asw}_h{self.ae_hidden_size}"
            f"_n{self.demo_noise_sigma:g}_s{self.seed}"
        )


class MetricsRecord(BaseModel):
    """Registro de una iteración de entrenamiento (una fila del CSV)"""

    iteration: int
    reward_loss: float = Field(description="Estimación de la divergencia d(π_E, π_θ)")
    expert_reward_mean: float
    generated_reward_mean: float
    surrogate: float
    mean_kl: float
    eval_return_mean: float
    eval_return_std: float
    scaled_reward: float
    wall_clock_s: float


# Encabezado fijo del CSV de métricas
METRICS_COLUMNS = list(MetricsRecord.model_fields.keys())


class EvalReport(BaseModel):
    """Resultado de una evaluación determinista"""

    env: str
    checkpoint_id: str = ""
    n_rollouts: int = Field(..., ge=1)
    returns: List[float]
    mean: float
    std: float
    expert_return: Optional[float] = None
    random_return: Optional[float] = None
    scaled_reward: Optional[float] = None


class NormalizerPayload(BaseModel):
    mean: List[float]
    std: List[float]


class DemoHeader(BaseModel):
    """Primera línea de un archivo de demostraciones"""

    env: str
    noise_sigma: float = Field(..., ge=0)
    normalizer: NormalizerPayload
    format_version: int
    env_spec: Optional[EnvSpec] = None

    @field_validator("format_version")
    @classmethod
    def validar_version(cls, value):
        if value != DEMO_FORMAT_VERSION:
            raise ValueError(f"Versión de formato no soportada: {value}")
        return value


class TrainSummary(BaseModel):
    """Resumen de una corrida terminada"""

    run_id: str
    run_dir: Path
    iterations: int
    reward_updates: int
    policy_updates: int
    final_return: Optional[float] = None
    final_scaled_reward: Optional[float] = None
