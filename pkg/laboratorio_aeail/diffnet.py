"""
Red feed-forward diferenciable mínima (numpy, float64)

Todas las redes del laboratorio (política, crítico, encoder, decoder,
discriminador) se construyen con MlpNet: forward/backward deterministas,
derivada direccional (jvp), pasos de optimizador, recorte de parámetros y
verificación por diferencias finitas.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import NumericFaultError, ShapeError
from .settings import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, GRAD_CHECK_ABS_FLOOR

logger = logging.getLogger(__name__)

HIDDEN_ACTIVATIONS = ("tanh",)
OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass
class MlpNet:
    """Perceptrón multicapa: capas ocultas tanh, salida identidad o tanh"""

    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(int(n) <= 0 for n in self.layer_sizes):
            raise ShapeError(f"Tamaños de capa inválidos: {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"Activación oculta no soportada: {self.hidden_activation}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"Activación de salida no soportada: {self.output_activation}")
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            esperado = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != esperado or b.shape != (self.layer_sizes[l + 1],):
                raise ShapeError(
                    f"Capa {l}: pesos {w.shape} / sesgos {b.shape}, se esperaba {esperado}"
                )

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], rng_seed: int = 0,
                   output_activation: str = "identity") -> "MlpNet":
        """
        Crea una red con inicialización uniforme de Glorot y sesgos en cero

        Args:
            layer_sizes: Tamaños [entrada, ocultas..., salida]
            rng_seed: Semilla de la inicialización
            output_activation: "identity" o "tanh"

        Returns:
            MlpNet: Red inicializada
        """
        rng = np.random.default_rng(rng_seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limite = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limite, limite, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_sizes), weights, biases, output_activation=output_activation, rng_seed=int(rng_seed))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> List[np.ndarray]:
        """Parámetros en orden de checkpoint: por capa, pesos antes que sesgos"""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> "MlpNet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"Vector plano de {flat.shape} para {self.n_params} parámetros")
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        return self

    def copy(self) -> "MlpNet":
        return MlpNet(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
            self.rng_seed,
        )


@dataclass
class GradientSet:
    """Gradientes congruentes en forma con los parámetros de una MlpNet"""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, net: MlpNet) -> "GradientSet":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    @classmethod
    def from_flat(cls, net: MlpNet, flat: np.ndarray) -> "GradientSet":
        grads = cls.zeros_like(net)
        offset = 0
        for g in grads.parameters():
            g[...] = flat[offset:offset + g.size].reshape(g.shape)
            offset += g.size
        return grads

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.parameters()])

    def check_congruent(self, net: MlpNet) -> None:
        if len(self.weights) != net.n_layers:
            raise ShapeError(f"{len(self.weights)} capas de gradiente para una red de {net.n_layers}")
        for g, p in zip(self.parameters(), net.parameters()):
            if g.shape != p.shape:
                raise ShapeError(f"Gradiente {g.shape} no congruente con parámetro {p.shape}")

    def accumulate(self, other: "GradientSet", net: MlpNet) -> "GradientSet":
        """Suma `other` en el lugar, verificando congruencia con `net`"""
        self.check_congruent(net)
        other.check_congruent(net)
        for g, o in zip(self.parameters(), other.parameters()):
            g += o
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.parameters())


@dataclass
class OptimizerState:
    """Estado de sgd/adam para una red"""

    method: str
    learning_rate: float
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    m: Optional[GradientSet] = None
    v: Optional[GradientSet] = None

    @classmethod
    def create(cls, net: MlpNet, method: str = "adam", learning_rate: float = 3e-4) -> "OptimizerState":
        if method not in ("sgd", "adam"):
            raise ValueError(f"Optimizador desconocido: {method}")
        if learning_rate <= 0:
            raise ValueError(f"La tasa de aprendizaje debe ser positiva: {learning_rate}")
        state = cls(method=method, learning_rate=learning_rate)
        if method == "adam":
            state.m = GradientSet.zeros_like(net)
            state.v = GradientSet.zeros_like(net)
        return state


def _is_linear(net: MlpNet, layer: int) -> bool:
    return layer == net.n_layers - 1 and net.output_activation == "identity"


def _as_batch(net: MlpNet, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ShapeError(f"Entrada de forma {x.shape}, la red espera dimensión {net.input_dim}")
    return batch, single


def forward_cache(net: MlpNet, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Forward por lotes guardando las activaciones de cada capa

    Returns:
        Tuple: (salida (n, out), activaciones [entrada, ocultas...])
    """
    a, _ = _as_batch(net, x)
    activations = [a]
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if _is_linear(net, l) else np.tanh(z)
        if l < last:
            activations.append(a)
    return a, activations


def forward(net: MlpNet, x: np.ndarray) -> np.ndarray:
    """
    Activación de la capa de salida; acepta un vector o un lote (n, d)

    Raises:
        ShapeError: Si la dimensión de la entrada no coincide
    """
    _, single = _as_batch(net, x)
    out, _ = forward_cache(net, x)
    return out[0] if single else out


def hidden_activations(net: MlpNet, x: np.ndarray, layer: int = 0) -> np.ndarray:
    """Activación (post-tanh) de la capa oculta `layer` para cada fila"""
    if layer >= net.n_layers - 1:
        raise ShapeError(f"La red no tiene capa oculta {layer}")
    batch, _ = _as_batch(net, x)
    _, activations = forward_cache(net, batch)
    return activations[layer + 1]


def backward(
    net: MlpNet,
    x: np.ndarray,
    upstream: np.ndarray,
    cache: Optional[List[np.ndarray]] = None,
) -> Tuple[GradientSet, np.ndarray]:
    """
    Regla de la cadena a partir del gradiente de la salida

    Args:
        net: Red
        x: Entrada (vector o lote)
        upstream: dL/d(salida), misma forma que la salida
        cache: Activaciones de forward_cache (se recalculan si faltan)

    Returns:
        Tuple: (dL/dparámetros sumado sobre el lote, dL/dx)
    """
    batch, single = _as_batch(net, x)
    delta = np.asarray(upstream, dtype=np.float64)
    delta = delta[None, :] if delta.ndim == 1 else delta
    if delta.shape != (batch.shape[0], net.output_dim):
        raise ShapeError(
            f"Gradiente de salida {np.shape(upstream)}, se esperaba ({batch.shape[0]}, {net.output_dim})"
        )
    if cache is None:
        _, cache = forward_cache(net, batch)
    if net.output_activation == "tanh":
        out = np.tanh(cache[-1] @ net.weights[-1].T + net.biases[-1])
        delta = delta * (1.0 - out ** 2)

    grads = GradientSet.zeros_like(net)
    for l in range(net.n_layers - 1, -1, -1):
        a_prev = cache[l]
        grads.weights[l] = delta.T @ a_prev
        grads.biases[l] = delta.sum(axis=0)
        da_prev = delta @ net.weights[l]
        if l > 0:
            delta = da_prev * (1.0 - a_prev ** 2)
    dx = da_prev[0] if single else da_prev
    return grads, dx


def jvp(net: MlpNet, x: np.ndarray, tangent: GradientSet) -> Tuple[np.ndarray, np.ndarray]:
    """
    Derivada direccional de la salida respecto de los parámetros (modo forward)

    Returns:
        Tuple: (salida, d salida en la dirección `tangent`)
    """
    tangent.check_congruent(net)
    a, single = _as_batch(net, x)
    da = np.zeros_like(a)
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        dz = da @ w.T + a @ tangent.weights[l].T + tangent.biases[l]
        if _is_linear(net, l):
            a, da = z, dz
        else:
            a = np.tanh(z)
            da = (1.0 - a ** 2) * dz
    return (a[0], da[0]) if single else (a, da)


def optimizer_step(net: MlpNet, state: OptimizerState, grads: GradientSet) -> Tuple[MlpNet, OptimizerState]:
    """
    Un paso de descenso (sgd o adam con corrección de sesgo)

    Raises:
        NumericFaultError: Si algún gradiente no es finito
    """
    grads.check_congruent(net)
    if not grads.is_finite():
        raise NumericFaultError("Gradiente no finito en optimizer_step")

    state.step_count += 1
    if state.method == "sgd":
        for p, g in zip(net.parameters(), grads.parameters()):
            p -= state.learning_rate * g
        return net, state

    state.m.check_congruent(net)
    state.v.check_congruent(net)
    t = state.step_count
    corr1 = 1.0 - state.beta1 ** t
    corr2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(net.parameters(), grads.parameters(), state.m.parameters(), state.v.parameters()):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return net, state


def clip_params(net: MlpNet, lo: float, hi: float) -> MlpNet:
    """Proyecta cada peso y sesgo en [lo, hi] (idempotente)"""
    if not lo < hi:
        raise ValueError(f"Rango de recorte inválido: [{lo}, {hi}]")
    for p in net.parameters():
        np.clip(p, lo, hi, out=p)
    return net


def max_abs_param(net: MlpNet) -> float:
    return float(max(np.max(np.abs(p)) for p in net.parameters()))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_CHECK_ABS_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_gradient(nets: Sequence[MlpNet], loss_fn: Callable[[], float], eps: float) -> List[np.ndarray]:
    """Diferencias centrales de `loss_fn` (que lee los parámetros actuales) por cada red"""
    resultado = []
    for net in nets:
        flat = net.get_flat()
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            net.set_flat(flat)
            plus = loss_fn()
            flat[i] = original - eps
            net.set_flat(flat)
            minus = loss_fn()
            flat[i] = original
            grad[i] = (plus - minus) / (2.0 * eps)
        net.set_flat(flat)
        resultado.append(grad)
    return resultado


def grad_check_loss(
    nets: Sequence[MlpNet],
    loss_fn: Callable[[], float],
    analytic: Sequence[GradientSet],
    eps: float = 1e-5,
) -> float:
    """Error relativo máximo entre gradientes analíticos y diferencias centrales"""
    if eps <= 0:
        raise ValueError(f"eps debe ser positivo: {eps}")
    numeric = numeric_gradient(nets, loss_fn, eps)
    return max(relative_error(g.flat(), n) for g, n in zip(analytic, numeric))


def grad_check(net: MlpNet, x: np.ndarray, eps: float = 1e-5, analytic: Optional[GradientSet] = None) -> float:
    """
    Compara backward() con diferencias centrales sobre la pérdida suma de salidas

    Args:
        net: Red a verificar
        x: Entrada (vector o lote)
        eps: Paso de las diferencias finitas
        analytic: Gradiente a verificar (por defecto el de backward)

    Returns:
        float: Error relativo máximo sobre todos los parámetros
    """
    batch, _ = _as_batch(net, x)
    if analytic is None:
        upstream = np.ones((batch.shape[0], net.output_dim))
        analytic, _ = backward(net, batch, upstream)
    return grad_check_loss([net], lambda: float(forward(net, batch).sum()), [analytic], eps)
