"""
Línea de comandos del laboratorio

Códigos de salida: 0 éxito, 1 error de uso o configuración, 2 falla en ejecución.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import settings
from .diffnet import MlpNet, grad_check, grad_check_loss
from .envlab import FeatureNormalizer, Trajectory, corrupt_demos, generate_demos, make_env_spec, scripted_expert
from .evaluation import dump_latents, evaluate, evaluation_rollouts, rollouts_as_demos
from .exceptions import ConfigError, LaboratorioError, UsageError
from .policy_opt import GaussianPolicy, RolloutBatch, surrogate, surrogate_and_gradient
from .reward_models import AutoEncoder, loss_ae_w
from .serializers import (
    ConfigSerializer, DemoSerializer, PolicySerializer, RewardSerializer, TableSerializer, describe_checkpoint,
)
from .services import sweep, train

logger = logging.getLogger(__name__)

GRAD_CHECK_TOLERANCE = 1e-4


class LabArgumentParser(argparse.ArgumentParser):
    """argparse que reporta errores como UsageError en lugar de terminar el proceso"""

    def __init__(self, *args, **kwargs):
        # Los overrides --clave=valor no deben confundirse con prefijos de opciones
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_overrides(tokens: Sequence[str]) -> Dict[str, str]:
    """--clave=valor o --clave valor"""
    overrides: Dict[str, str] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or token == "--":
            raise UsageError(f"Argumento inesperado: {token}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens) or tokens[i + 1].startswith("--"):
                raise UsageError(f"Falta el valor de {token}")
            key, value = token[2:], tokens[i + 1]
            i += 2
        overrides[key] = value
    return overrides


def build_parser() -> LabArgumentParser:
    parser = LabArgumentParser(prog="aeail", description=settings.APP_NAME)
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="Genera demostraciones del experto programado")
    p.add_argument("--env", required=True, choices=settings.ENV_NAMES)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("corrupt-demos", help="Agrega ruido gaussiano a unas demostraciones")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="Entrena una corrida (overrides como --clave=valor)")
    p.add_argument("--config", type=Path, default=None)

    p = sub.add_parser("sweep", help="Barrido sobre una grilla de configuración")
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval", help="Evaluación determinista de un checkpoint de política")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--env", required=True, choices=settings.ENV_NAMES)
    p.add_argument("--n", type=int, default=settings.EVAL_ROLLOUTS)
    p.add_argument("--seed", type=int, default=settings.EVAL_SEED)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--save-rollouts", type=Path, default=None)

    p = sub.add_parser("dump-latents", help="Exporta activaciones de la capa latente a CSV")
    p.add_argument("--reward-checkpoint", type=Path, required=True)
    p.add_argument("--demos", type=Path, required=True)
    p.add_argument("--rollouts", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("grad-check", help="Autoprueba de gradientes por diferencias finitas")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-nets", type=int, default=100)

    p = sub.add_parser("info", help="Metadatos de un checkpoint en JSON")
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


# ---------------------------------------------------------------------------
# Subcomandos
# ---------------------------------------------------------------------------


def cmd_gen_demos(args) -> int:
    spec = make_env_spec(args.env, args.horizon)
    demos = generate_demos(spec, scripted_expert(spec), args.n, args.seed)
    DemoSerializer.save(args.out, demos)
    return 0


def cmd_corrupt_demos(args) -> int:
    demos = DemoSerializer.load(args.input)
    DemoSerializer.save(args.out, corrupt_demos(demos, args.sigma, args.seed))
    return 0


def cmd_train(args, extra: List[str]) -> int:
    config = ConfigSerializer.load(args.config, _parse_overrides(extra))
    summary = train(config)
    print(summary.model_dump_json(indent=2))
    return 0


def cmd_sweep(args, extra: List[str]) -> int:
    configs = ConfigSerializer.load_grid(args.grid, _parse_overrides(extra))
    summary = sweep(configs, n_workers=args.workers)
    print(summary.to_string(index=False))
    return 0


def cmd_eval(args) -> int:
    policy = PolicySerializer.load(args.checkpoint)
    spec = make_env_spec(args.env, args.horizon)
    report = evaluate(policy, spec, args.n, args.seed, checkpoint_id=args.checkpoint.name)
    if args.save_rollouts is not None:
        trajectories = evaluation_rollouts(policy, spec, args.n, args.seed)
        DemoSerializer.save(args.save_rollouts, rollouts_as_demos(trajectories, spec))
    print(report.model_dump_json(indent=2))
    return 0


def cmd_dump_latents(args) -> int:
    demos = DemoSerializer.load(args.demos)
    rollouts = DemoSerializer.load(args.rollouts)
    model = RewardSerializer.load(args.reward_checkpoint, demos)
    TableSerializer.write(args.out, dump_latents(model, demos, rollouts))
    return 0


def run_grad_check(seed: int = 0, n_nets: int = 100, eps: float = 1e-5) -> Dict[str, float]:
    """
    Error relativo máximo de: redes aleatorias, pérdida AE-W de extremo a extremo
    y surrogate de la política
    """
    rng = np.random.default_rng(seed)
    net_errors = []
    for i in range(n_nets):
        sizes = [int(rng.integers(1, 5))] + [int(rng.integers(1, 6)) for _ in range(rng.integers(0, 3))]
        sizes.append(int(rng.integers(1, 4)))
        net = MlpNet.initialize(sizes, rng_seed=seed * 1000 + i)
        net_errors.append(grad_check(net, rng.normal(size=(3, sizes[0])), eps))

    ae = AutoEncoder.build(4, 6, None, FeatureNormalizer.identity(4), seed)
    expert, gen = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    _, grads = ae.loss_and_grads(expert, gen)
    ae_error = grad_check_loss(ae.networks(), lambda: loss_ae_w(ae, expert, gen), grads, eps)

    spec = make_env_spec("pointmass2d", horizon=4)
    policy = GaussianPolicy.initialize(spec, hidden_size=5, seed=seed)
    policy.log_std = np.array([-0.3, 0.2])
    states = rng.normal(size=(6, 4))
    raw_actions = rng.normal(size=(6, 2))
    trajectory = Trajectory(states, np.clip(raw_actions, -1, 1), np.zeros(6, dtype=bool),
                            raw_actions=raw_actions, log_probs=rng.normal(-2.0, 0.1, size=6))
    batch = RolloutBatch([trajectory], advantages=rng.normal(size=6))
    _, analytic = surrogate_and_gradient(policy, batch)
    theta = policy.get_flat()
    numeric = np.zeros_like(theta)
    for k in range(theta.size):
        bumped = theta.copy()
        bumped[k] += eps
        plus = surrogate(policy.set_flat(bumped), batch)
        bumped[k] -= 2 * eps
        minus = surrogate(policy.set_flat(bumped), batch)
        numeric[k] = (plus - minus) / (2 * eps)
    policy.set_flat(theta)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), settings.GRAD_CHECK_ABS_FLOOR)
    surrogate_error = float(np.max(np.abs(analytic - numeric) / denom))

    return {
        "random_nets": float(max(net_errors)) if net_errors else 0.0,
        "ae_w_loss": ae_error,
        "policy_surrogate": surrogate_error,
    }


def cmd_grad_check(args) -> int:
    errors = run_grad_check(args.seed, args.n_nets)
    print(json.dumps(errors, indent=2))
    if max(errors.values()) > GRAD_CHECK_TOLERANCE:
        logger.error(f"❌ Verificación de gradientes fallida: {errors}")
        return 2
    logger.info("✅ Gradientes verificados")
    return 0


def cmd_info(args) -> int:
    print(json.dumps(describe_checkpoint(args.checkpoint), indent=2))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra and args.command not in ("train", "sweep"):
            raise UsageError(f"Argumentos no reconocidos: {' '.join(extra)}")
    except UsageError as e:
        print(f"error de uso: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    logging.basicConfig(level=args.log_level)
    comandos = {
        "gen-demos": lambda: cmd_gen_demos(args),
        "corrupt-demos": lambda: cmd_corrupt_demos(args),
        "train": lambda: cmd_train(args, extra),
        "sweep": lambda: cmd_sweep(args, extra),
        "eval": lambda: cmd_eval(args),
        "dump-latents": lambda: cmd_dump_latents(args),
        "grad-check": lambda: cmd_grad_check(args),
        "info": lambda: cmd_info(args),
    }
    try:
        return comandos[args.command]()
    except (UsageError, ConfigError) as e:
        print(f"error de uso: {e}", file=sys.stderr)
        return 1
    except (LaboratorioError, ValueError, ArithmeticError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        logger.debug("Detalle del error", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
