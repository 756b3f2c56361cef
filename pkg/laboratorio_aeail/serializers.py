"""
Serializers - Validación y codificación de archivos (checkpoints, demostraciones,
configuración, métricas y tablas)
"""

import itertools
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .diffnet import OUTPUT_ACTIVATIONS, MlpNet
from .envlab import DemonstrationSet, FeatureNormalizer, Trajectory
from .exceptions import CheckpointFormatError, ConfigError, ShapeError, UnsupportedVariantError
from .models import METRICS_COLUMNS, DemoHeader, EnvSpec, MetricsRecord, NormalizerPayload, TrainConfig
from .policy_opt import GaussianPolicy, ValueCritic
from .reward_models import (
    AbsorbingWrapper, AutoEncoder, Discriminator, GotReward, RewardModel, VariationalAutoEncoder,
    augment_trajectory,
)
from .settings import (
    ASW_TAG_BIT, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, DEMO_FORMAT_VERSION, FLOAT_FORMAT, REWARD_TAGS,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Checkpoints binarios
# ---------------------------------------------------------------------------


class _Reader:
    """Lectura little-endian con verificación de truncamiento"""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise CheckpointFormatError(f"Checkpoint truncado en el byte {self.offset}")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def u8(self) -> int:
        return self.take("<B")[0]

    def u32(self) -> int:
        return self.take("<I")[0]

    def floats(self, n: int) -> np.ndarray:
        return np.array(self.take(f"<{n}d"), dtype=np.float64)

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset


def _floats(values: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(values, dtype="<f8").ravel()
    return flat.tobytes()


class NetSerializer:
    """Formato binario de redes: magic, versión, tamaños de capa, activación de salida y parámetros planos"""

    @staticmethod
    def net_block(net: MlpNet) -> bytes:
        sizes = net.layer_sizes
        tag = OUTPUT_ACTIVATIONS.index(net.output_activation)
        return struct.pack(f"<I{len(sizes)}IB", len(sizes), *sizes, tag) + _floats(net.get_flat())

    @staticmethod
    def read_net_block(reader: _Reader) -> MlpNet:
        n_sizes = reader.u32()
        if n_sizes < 2 or n_sizes > 64:
            raise CheckpointFormatError(f"Número de capas inválido: {n_sizes}")
        sizes = list(reader.take(f"<{n_sizes}I"))
        if any(s == 0 for s in sizes):
            raise CheckpointFormatError(f"Tamaños de capa inválidos: {sizes}")
        tag = reader.u8()
        if tag >= len(OUTPUT_ACTIVATIONS):
            raise CheckpointFormatError(f"Activación de salida desconocida: {tag}")
        net = MlpNet.initialize(sizes, output_activation=OUTPUT_ACTIVATIONS[tag])
        return net.set_flat(reader.floats(net.n_params))

    @staticmethod
    def header() -> bytes:
        return CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)

    @staticmethod
    def read_header(reader: _Reader) -> None:
        magic = reader.take(f"<{len(CHECKPOINT_MAGIC)}s")[0]
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError("Magic de checkpoint inválido")
        version = reader.u32()
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"Versión de checkpoint no soportada: {version}")

    @staticmethod
    def dumps(net: MlpNet) -> bytes:
        return NetSerializer.header() + NetSerializer.net_block(net)

    @staticmethod
    def loads(data: bytes) -> MlpNet:
        reader = _Reader(data)
        NetSerializer.read_header(reader)
        net = NetSerializer.read_net_block(reader)
        if reader.remaining:
            raise CheckpointFormatError(f"{reader.remaining} bytes sobrantes en el checkpoint")
        return net

    @staticmethod
    def save(path: Path, net: MlpNet) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(NetSerializer.dumps(net))
        return path

    @staticmethod
    def load(path: Path) -> MlpNet:
        return NetSerializer.loads(_read_bytes(path))


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint no encontrado: {path}")
    return path.read_bytes()


class PolicySerializer:
    """Red de la media más action_dim, log_std y límites de acción"""

    @staticmethod
    def dumps(policy: GaussianPolicy) -> bytes:
        return (
            NetSerializer.dumps(policy.mean_net)
            + struct.pack("<I", policy.action_dim)
            + _floats(policy.log_std)
            + _floats(policy.action_low)
            + _floats(policy.action_high)
        )

    @staticmethod
    def loads(data: bytes, seed: int = 0) -> GaussianPolicy:
        reader = _Reader(data)
        NetSerializer.read_header(reader)
        net = NetSerializer.read_net_block(reader)
        action_dim = reader.u32()
        if action_dim != net.output_dim:
            raise CheckpointFormatError(f"action_dim {action_dim} distinto de la salida de la red {net.output_dim}")
        log_std = reader.floats(action_dim)
        low, high = reader.floats(action_dim), reader.floats(action_dim)
        if reader.remaining:
            raise CheckpointFormatError(f"{reader.remaining} bytes sobrantes en el checkpoint de política")
        return GaussianPolicy(net, log_std, low, high, np.random.default_rng(seed))

    @staticmethod
    def save(path: Path, policy: GaussianPolicy) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(PolicySerializer.dumps(policy))
        return path

    @staticmethod
    def load(path: Path, seed: int = 0) -> GaussianPolicy:
        return PolicySerializer.loads(_read_bytes(path), seed)


class CriticSerializer:

    @staticmethod
    def save(path: Path, critic: ValueCritic) -> Path:
        return NetSerializer.save(path, critic.net)

    @staticmethod
    def load(path: Path) -> ValueCritic:
        return ValueCritic(NetSerializer.load(path))


class RewardSerializer:
    """
    Byte de variante (bit alto = ASW), formato de redes, normalizador y
    dimensiones (estado, acción, horizonte). GOT no guarda redes.
    """

    @staticmethod
    def _inner(model: RewardModel) -> RewardModel:
        return model.inner if isinstance(model, AbsorbingWrapper) else model

    @staticmethod
    def dumps(model: RewardModel, spec: EnvSpec) -> bytes:
        inner = RewardSerializer._inner(model)
        tag = REWARD_TAGS[model.variant] | (ASW_TAG_BIT if isinstance(model, AbsorbingWrapper) else 0)
        nets = inner.networks()
        normalizer = inner.normalizer
        if normalizer is None:
            normalizer = FeatureNormalizer.identity(inner.input_dim)
        parts = [struct.pack("<B", tag), NetSerializer.header(), struct.pack("<I", len(nets))]
        parts.extend(NetSerializer.net_block(net) for net in nets)
        parts.append(struct.pack("<I", normalizer.dim))
        parts.append(_floats(normalizer.mean))
        parts.append(_floats(normalizer.std))
        parts.append(struct.pack("<III", spec.state_dim, spec.action_dim, spec.horizon))
        if isinstance(inner, VariationalAutoEncoder):
            parts.append(_floats(np.array([inner.kl_weight])))
        return b"".join(parts)

    @staticmethod
    def describe(data: bytes) -> Dict[str, Any]:
        """Metadatos sin reconstruir el modelo"""
        reader = _Reader(data)
        tag = reader.u8()
        NetSerializer.read_header(reader)
        nets = [NetSerializer.read_net_block(reader).layer_sizes for _ in range(reader.u32())]
        dim = reader.u32()
        reader.floats(2 * dim)
        state_dim, action_dim, horizon = reader.take("<III")
        return {
            "kind": "reward",
            "variant": _variant_from_tag(tag),
            "asw": bool(tag & ASW_TAG_BIT),
            "networks": nets,
            "input_dim": dim,
            "state_dim": state_dim,
            "action_dim": action_dim,
            "horizon": horizon,
        }

    @staticmethod
    def loads(data: bytes, demos: Optional[DemonstrationSet] = None,
              config: Optional[TrainConfig] = None) -> RewardModel:
        """
        Reconstruye el modelo de recompensa

        Args:
            data: Bytes del checkpoint
            demos: Necesarias para GOT (estado solo en memoria)
            config: Hiperparámetros de entrenamiento (por defecto los de TrainConfig)

        Raises:
            CheckpointFormatError: Si el archivo está corrupto
            UnsupportedVariantError: GOT sin demostraciones
        """
        config = config or TrainConfig()
        reader = _Reader(data)
        tag = reader.u8()
        variant = _variant_from_tag(tag)
        asw = bool(tag & ASW_TAG_BIT)
        NetSerializer.read_header(reader)
        nets = [NetSerializer.read_net_block(reader) for _ in range(reader.u32())]
        dim = reader.u32()
        try:
            normalizer = FeatureNormalizer(reader.floats(dim), reader.floats(dim))
        except ShapeError as e:
            raise CheckpointFormatError(f"Normalizador inválido en el checkpoint: {e}") from e
        state_dim, action_dim, horizon = reader.take("<III")
        clip = (config.clip_lo, config.clip_hi)

        expected = {"ae_w": 2, "ae_js": 2, "vae": 3, "disc_jsd": 1, "disc_fkld": 1, "got": 0}[variant]
        if len(nets) != expected:
            raise CheckpointFormatError(f"La variante {variant} requiere {expected} redes, hay {len(nets)}")
        try:
            if variant in ("ae_w", "ae_js"):
                inner = AutoEncoder(nets[0], nets[1], normalizer, clip, variant[3:], config.reward_lr)
            elif variant == "vae":
                kl_weight = float(reader.floats(1)[0])
                inner = VariationalAutoEncoder(nets[0], nets[1], nets[2], normalizer,
                                               np.random.default_rng(config.seed), clip, kl_weight,
                                               config.reward_lr)
            elif variant.startswith("disc_"):
                inner = Discriminator(nets[0], normalizer, variant[5:], config.reward_lr)
            else:
                if demos is None:
                    raise UnsupportedVariantError("GOT se reconstruye desde las demostraciones: páselas al cargar")
                trajectories = demos.trajectories
                if asw:
                    atoms = np.concatenate([
                        augment_trajectory(t, state_dim, action_dim, horizon).features() for t in trajectories
                    ])
                else:
                    atoms = demos.features()
                inner = GotReward(atoms, horizon, config.got_alpha, config.got_beta, normalizer)
        except ShapeError as e:
            raise CheckpointFormatError(f"Redes inconsistentes en el checkpoint: {e}") from e
        if reader.remaining:
            raise CheckpointFormatError(f"{reader.remaining} bytes sobrantes en el checkpoint de recompensa")
        return AbsorbingWrapper(inner, state_dim, action_dim, horizon) if asw else inner

    @staticmethod
    def save(path: Path, model: RewardModel, spec: EnvSpec) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(RewardSerializer.dumps(model, spec))
        return path

    @staticmethod
    def load(path: Path, demos: Optional[DemonstrationSet] = None,
             config: Optional[TrainConfig] = None) -> RewardModel:
        return RewardSerializer.loads(_read_bytes(path), demos, config)


def _variant_from_tag(tag: int) -> str:
    base = tag & ~ASW_TAG_BIT
    for name, value in REWARD_TAGS.items():
        if value == base:
            return name
    raise CheckpointFormatError(f"Etiqueta de variante desconocida: {tag}")


def describe_checkpoint(path: Path) -> Dict[str, Any]:
    """
    Metadatos de cualquier checkpoint del laboratorio (subcomando info)

    Returns:
        Dict: tipo (net, policy o reward) y dimensiones
    """
    data = _read_bytes(path)
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        return RewardSerializer.describe(data)
    reader = _Reader(data)
    NetSerializer.read_header(reader)
    net = NetSerializer.read_net_block(reader)
    info = {"kind": "net", "layer_sizes": net.layer_sizes, "n_params": net.n_params}
    if reader.remaining:
        policy = PolicySerializer.loads(data)
        info.update({
            "kind": "policy",
            "state_dim": policy.state_dim,
            "action_dim": policy.action_dim,
            "log_std": policy.log_std.tolist(),
        })
    return info


# ---------------------------------------------------------------------------
# Demostraciones (JSON lines)
# ---------------------------------------------------------------------------


def _json_matrix(values: np.ndarray) -> str:
    """Matriz como lista JSON de filas con 17 dígitos significativos"""
    rows = (", ".join(FLOAT_FORMAT % v for v in row) for row in np.asarray(values, dtype=np.float64))
    return "[" + ", ".join(f"[{row}]" for row in rows) + "]"


class DemoSerializer:
    """Primera línea: encabezado DemoHeader; luego una trayectoria por línea"""

    @staticmethod
    def dumps(demos: DemonstrationSet) -> str:
        header = DemoHeader(
            env=demos.env,
            noise_sigma=demos.noise_sigma,
            normalizer=NormalizerPayload(mean=demos.normalizer.mean.tolist(), std=demos.normalizer.std.tolist()),
            format_version=DEMO_FORMAT_VERSION,
            env_spec=demos.env_spec,
        )
        lines = [header.model_dump_json(exclude_none=True)]
        for t in demos.trajectories:
            dones = json.dumps([bool(d) for d in t.dones])
            lines.append(
                f'{{"states": {_json_matrix(t.states)}, "actions": {_json_matrix(t.actions)}, "dones": {dones}}}'
            )
        return "\n".join(lines) + "\n"

    @staticmethod
    def loads(text: str) -> DemonstrationSet:
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise ValueError("Archivo de demostraciones vacío")
        try:
            header = DemoHeader.model_validate_json(lines[0])
        except ValidationError as e:
            raise ValueError(f"Encabezado de demostraciones inválido: {e}") from e
        normalizer = FeatureNormalizer(np.array(header.normalizer.mean), np.array(header.normalizer.std))
        trajectories = []
        for i, line in enumerate(lines[1:], start=1):
            try:
                raw = json.loads(line, parse_int=float)
                t = Trajectory(
                    np.array(raw["states"], dtype=np.float64),
                    np.array(raw["actions"], dtype=np.float64),
                    np.array(raw["dones"], dtype=bool),
                )
            except (KeyError, TypeError, json.JSONDecodeError) as e:
                raise ValueError(f"Trayectoria {i} inválida: {e}") from e
            if t.states.ndim != 2 or t.states.shape[0] != t.actions.shape[0] or t.dones.shape != (len(t),):
                raise ShapeError(f"Trayectoria {i}: longitudes de estados, acciones y dones no coinciden")
            if t.features().shape[1] != normalizer.dim:
                raise ShapeError(f"Trayectoria {i}: dimensión {t.features().shape[1]}, normalizador {normalizer.dim}")
            trajectories.append(t)
        return DemonstrationSet(trajectories, header.env, header.noise_sigma, normalizer, header.env_spec)

    @staticmethod
    def save(path: Path, demos: DemonstrationSet) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(DemoSerializer.dumps(demos), encoding="utf-8")
        logger.info(f"Demostraciones guardadas en {path}: {len(demos.trajectories)} trayectorias")
        return path

    @staticmethod
    def load(path: Path) -> DemonstrationSet:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Archivo de demostraciones no encontrado: {path}")
        return DemoSerializer.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Configuración key=value
# ---------------------------------------------------------------------------


# Alias aceptados en archivos y en la línea de comandos
CONFIG_ALIASES = {
    "iters": "iterations",
    "ae_lr": "reward_lr",
    "lr": "reward_lr",
    "n_demos": "n_demo_trajectories",
    "noise": "demo_noise_sigma",
    "sigma": "demo_noise_sigma",
    "hidden": "ae_hidden_size",
    "ae_hidden": "ae_hidden_size",
    "delta_kl": "max_kl",
    "lambda": "gae_lambda",
    "workers": "n_workers",
    "demos": "demo_path",
    "out": "output_dir",
    "bc_iters": "bc_iterations",
}

SWEEP_AXES = ("reward", "ae_hidden_size", "demo_noise_sigma", "seed")


class ConfigSerializer:
    """Archivos de configuración planos: una clave=valor por línea, '#' comenta"""

    @staticmethod
    def canonical(key: str) -> str:
        key = key.strip().replace("-", "_")
        return CONFIG_ALIASES.get(key, key)

    @staticmethod
    def parse_text(text: str) -> Dict[str, str]:
        """
        Raises:
            ConfigError: Líneas sin '=' o claves repetidas
        """
        values: Dict[str, str] = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"Línea {n}: se esperaba clave=valor, se leyó {line!r}")
            key, value = line.split("=", 1)
            key = ConfigSerializer.canonical(key)
            if not key:
                raise ConfigError(f"Línea {n}: clave vacía")
            if key in values:
                raise ConfigError(f"Línea {n}: clave repetida {key!r}")
            values[key] = value.strip()
        return values

    @staticmethod
    def _clean(values: Dict[str, Any]) -> Dict[str, Any]:
        return {
            k: (None if isinstance(v, str) and v.lower() in ("", "none") else v)
            for k, v in values.items()
        }

    @staticmethod
    def build(values: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
        """
        Valida claves y valores con TrainConfig

        Raises:
            ConfigError: Claves desconocidas o valores inválidos
        """
        merged = {ConfigSerializer.canonical(k): v for k, v in values.items()}
        for k, v in (overrides or {}).items():
            merged[ConfigSerializer.canonical(k)] = v
        unknown = sorted(set(merged) - set(TrainConfig.model_fields))
        if unknown:
            raise ConfigError(f"Claves de configuración desconocidas: {', '.join(unknown)}")
        try:
            return TrainConfig(**ConfigSerializer._clean(merged))
        except ValidationError as e:
            raise ConfigError(f"Configuración inválida: {e}") from e

    @staticmethod
    def load(path: Optional[Path], overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
        values: Dict[str, str] = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"Archivo de configuración no encontrado: {path}")
            values = ConfigSerializer.parse_text(path.read_text(encoding="utf-8"))
        return ConfigSerializer.build(values, overrides)

    @staticmethod
    def dumps(config: TrainConfig) -> str:
        lines = []
        for key, value in config.model_dump().items():
            if value is None:
                continue
            lines.append(f"{key}={repr(value) if isinstance(value, float) else value}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def save(path: Path, config: TrainConfig) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(ConfigSerializer.dumps(config), encoding="utf-8")
        return path

    @staticmethod
    def expand_grid(values: Dict[str, str], overrides: Optional[Dict[str, Any]] = None) -> List[TrainConfig]:
        """
        Producto cartesiano de los ejes con listas separadas por comas

        Raises:
            ConfigError: Si una clave fuera de los ejes de barrido tiene varios valores
        """
        values = {ConfigSerializer.canonical(k): v for k, v in values.items()}
        for k, v in (overrides or {}).items():
            values[ConfigSerializer.canonical(k)] = v
        axes: Dict[str, List[str]] = {}
        base: Dict[str, Any] = {}
        for key, value in values.items():
            if isinstance(value, str) and "," in value:
                if key not in SWEEP_AXES:
                    raise ConfigError(f"La clave {key!r} no es un eje de barrido ({', '.join(SWEEP_AXES)})")
                axes[key] = [v.strip() for v in value.split(",") if v.strip()]
            else:
                base[key] = value
        names = [a for a in SWEEP_AXES if a in axes]
        configs = []
        for combo in itertools.product(*(axes[a] for a in names)):
            configs.append(ConfigSerializer.build({**base, **dict(zip(names, combo))}))
        return configs

    @staticmethod
    def load_grid(path: Path, overrides: Optional[Dict[str, Any]] = None) -> List[TrainConfig]:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Archivo de barrido no encontrado: {path}")
        return ConfigSerializer.expand_grid(ConfigSerializer.parse_text(path.read_text(encoding="utf-8")), overrides)


# ---------------------------------------------------------------------------
# Tablas CSV (pandas)
# ---------------------------------------------------------------------------


_CSV_OPTIONS = {"index": False, "float_format": FLOAT_FORMAT, "lineterminator": "\n", "na_rep": "nan"}


class MetricsSerializer:
    """CSV de métricas: encabezado fijo, una fila por iteración (solo se agrega)"""

    @staticmethod
    def write_header(path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=METRICS_COLUMNS).to_csv(path, **_CSV_OPTIONS)
        return path

    @staticmethod
    def append(path: Path, record: MetricsRecord) -> None:
        row = pd.DataFrame([record.model_dump()], columns=METRICS_COLUMNS)
        row.to_csv(path, mode="a", header=False, **_CSV_OPTIONS)

    @staticmethod
    def read(path: Path) -> pd.DataFrame:
        return pd.read_csv(path)


class TableSerializer:

    @staticmethod
    def write(path: Path, df: pd.DataFrame) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, **_CSV_OPTIONS)
        return path

    @staticmethod
    def latents_frame(expert: np.ndarray, generated: np.ndarray) -> pd.DataFrame:
        """Columna source (expert/generated) seguida de h0..h{k-1}"""
        k = expert.shape[1] if expert.size else generated.shape[1]
        columns = [f"h{i}" for i in range(k)]
        frames = [
            pd.DataFrame(np.asarray(values).reshape(-1, k), columns=columns).assign(source=label)
            for label, values in (("expert", expert), ("generated", generated))
        ]
        df = pd.concat(frames, ignore_index=True)
        return df[["source"] + columns]
