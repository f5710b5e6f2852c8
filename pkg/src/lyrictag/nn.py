"""Dense-network building blocks with explicit backprop.

Small enough to stay readable: a ReLU hidden stack with inverted
dropout, plain linear layers, a stable softmax cross-entropy, and Adam.
Everything works on float64 arrays so analytic gradients can be checked
against central finite differences directly.
"""

from typing import Optional, Sequence

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def linear_init(fan_in: int, fan_out: int, rng: np.random.Generator, relu: bool = False):
    scale = np.sqrt((2.0 if relu else 1.0) / fan_in)
    weight = rng.standard_normal((fan_in, fan_out)) * scale
    return weight, np.zeros(fan_out)


class DenseStack:
    """Fully connected ReLU layers with optional inverted dropout."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, layer_sizes: Sequence[int], rng: np.random.Generator) -> "DenseStack":
        """layer_sizes = [input, hidden1, ..., hiddenN]."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            w, b = linear_init(fan_in, fan_out, rng, relu=True)
            weights.append(w)
            biases.append(b)
        return cls(weights, biases)

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def forward(self, x: np.ndarray, dropout: float = 0.0, rng: Optional[np.random.Generator] = None):
        """Returns (output, cache). Dropout applies after each ReLU and
        requires an rng; pass dropout=0 at inference."""
        if dropout and rng is None:
            raise ValueError("dropout requires an rng")
        cache = {"inputs": [], "masks": []}
        out = x
        for w, b in zip(self.weights, self.biases):
            cache["inputs"].append(out)
            out = np.maximum(out @ w + b, 0.0)
            if dropout:
                mask = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
                out = out * mask
            else:
                mask = None
            cache["masks"].append(mask)
        cache["output"] = out
        return out, cache

    def backward(self, d_out: np.ndarray, cache):
        """Returns (grad weights, grad biases, grad input)."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        grad = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            x = cache["inputs"][i]
            mask = cache["masks"][i]
            pre_relu = x @ self.weights[i] + self.biases[i]
            if mask is not None:
                grad = grad * mask
            grad = grad * (pre_relu > 0.0)
            grads_w[i] = x.T @ grad
            grads_b[i] = grad.sum(axis=0)
            grad = grad @ self.weights[i].T
        return grads_w, grads_b, grad


class Linear:
    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "Linear":
        return cls(*linear_init(fan_in, fan_out, rng))

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight + self.bias

    def backward(self, x: np.ndarray, d_out: np.ndarray):
        return x.T @ d_out, d_out.sum(axis=0), d_out @ self.weight.T


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, class_ids: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, grad wrt logits)."""
    n = logits.shape[0]
    probs = softmax(logits, axis=1)
    picked = probs[np.arange(n), class_ids]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(n), class_ids] -= 1.0
    return loss, grad / n


class Adam:
    """Adam over an explicit parameter list; params update in place."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
