"""
Configuración del laboratorio - constantes y valores por defecto
"""

import os
from pathlib import Path

# Build paths inside the project
BASE_DIR = Path(__file__).resolve().parent

# App info
APP_NAME = "🧪 Laboratorio de Imitación AEAIL"
VERSION = "1.0.0"
DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'
LOG_LEVEL = os.getenv("LAB_LOG_LEVEL", "DEBUG" if DEBUG else "INFO")

# Pruebas largas de aceptación (entrenamientos completos)
RUN_SLOW = os.getenv("LAB_RUN_SLOW", "0") == "1"

# Paths
OUTPUT_DIR = Path(os.getenv("LAB_OUTPUT_DIR", "runs"))

# Files (dentro de output_dir/{run_id}/)
METRICS_FILE = "metrics.csv"
CONFIG_FILE = "config.cfg"
POLICY_CHECKPOINT = "policy.ckpt"
CRITIC_CHECKPOINT = "critic.ckpt"
REWARD_CHECKPOINT = "reward.ckpt"
SWEEP_SUMMARY_FILE = "summary.csv"
SWEEP_CELLS_FILE = "cells.csv"

# Formatos binarios y de texto
CHECKPOINT_MAGIC = b"AEAILCKP"
CHECKPOINT_VERSION = 2
DEMO_FORMAT_VERSION = 1
FLOAT_FORMAT = "%.17g"

# Pisos numéricos
NORMALIZER_STD_FLOOR = 1e-6
JS_AE_FLOOR = 1e-6
LOG_STD_FLOOR = -20.0
GRAD_CHECK_ABS_FLOOR = 1e-5

# Rango de recorte de parámetros del auto-encoder
CLIP_RANGE = (-0.99, 0.99)

# Optimizador (adam)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Variantes de recompensa
REWARD_VARIANTS = ("ae_w", "ae_js", "vae", "disc_jsd", "disc_fkld", "got")
REWARD_TAGS = {
    "ae_w": 1,
    "ae_js": 2,
    "vae": 3,
    "disc_jsd": 4,
    "disc_fkld": 5,
    "got": 6,
}
ASW_TAG_BIT = 0x80

# Entornos
ENV_NAMES = ("pointmass2d", "pendulum", "cartpole_cont")
DEFAULT_HORIZON = 1024

# Presupuesto de iteraciones por entorno (sin criterio de convergencia)
DEFAULT_ITERATIONS = {
    'pointmass2d': 300,
    'pendulum': 500,
    'cartpole_cont': 300,
}

# TRPO / GAE
TRPO_CONFIG = {
    'gamma': 0.995,
    'gae_lambda': 0.97,
    'max_kl': 0.01,
    'cg_iters': 10,
    'cg_damping': 0.1,
    'backtrack_ratio': 0.5,
    'max_backtracks': 10,
}

# Modelos de recompensa
REWARD_CONFIG = {
    'reward_lr': 3e-4,
    'ae_hidden_size': 100,
    'ae_latent_size': None,  # sin cuello de botella: [entrada, 100, 100, entrada]
    'disc_hidden_size': 100,
    'vae_kl_weight': 1.0,
    'got_alpha': 5.0,
    'got_beta': 5.0,
}

# Política y crítico
POLICY_CONFIG = {
    'policy_hidden_size': 64,
    'critic_hidden_size': 64,
    'critic_updates': 5,
    'critic_lr': 2e-4,
    'policy_updates_per_iteration': 3,
    'bc_lr': 1e-3,
    'bc_batch_size': 256,
}

# Evaluación
EVAL_ROLLOUTS = 10
EVAL_EVERY = 100
EVAL_SEED = 10_000
REFERENCE_SEEDS = 100
# fracción de la mejor puntuación propia que debe alcanzar la media del experto
EXPERT_GATE_FRACTION = 0.95
