"""Small dense networks in numpy with explicit gradients.

Everything runs in float64. Layers are tanh except the linear output.
Weights start orthogonal (hidden gain sqrt(2); the output gain is a
constructor argument so policy heads can start near zero), biases at zero.
Backward passes are hand-written so the optimizer needs nothing but numpy.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError

LOG_2PI = math.log(2.0 * math.pi)


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal weight matrix scaled by gain."""
    rows, cols = shape
    flat = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))  # make the factorization unique
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MLP:
    """Fully connected tanh network with a linear last layer."""

    def __init__(self, sizes: tuple[int, ...], output_gain: float,
                 rng: np.random.Generator):
        if len(sizes) < 2:
            raise ConfigError("an MLP needs at least an input and an output size")
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = output_gain if i == last else math.sqrt(2.0)
            self.weights.append(orthogonal((n_in, n_out), gain, rng))
            self.biases.append(np.zeros(n_out))

    @property
    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters)

    def forward(self, x: np.ndarray):
        """Returns (output, cache); x has shape (batch, in)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        activations = [x]
        h = x
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == n - 1 else np.tanh(z)
            activations.append(h)
        return h, activations

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, activations: list[np.ndarray], grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. parameters and input.

        Returns (grads, grad_in) where grads matches self.parameters.
        """
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        delta = np.asarray(grad_out, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                # activations[i + 1] already holds tanh(z_i)
                delta = delta * (1.0 - activations[i + 1] ** 2)
            grad_w[i] = activations[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        grads = []
        for gw, gb in zip(grad_w, grad_b):
            grads.append(gw)
            grads.append(gb)
        return grads, delta


class GaussianPolicy:
    """Diagonal Gaussian over actions: MLP mean, free per-action log std."""

    def __init__(self, obs_dim: int, action_dim: int, hidden: tuple[int, ...],
                 rng: np.random.Generator, init_std: float = 0.5,
                 output_bias: np.ndarray | None = None):
        if init_std <= 0:
            raise ConfigError("init_std must be positive")
        self.mean_net = MLP((obs_dim,) + tuple(hidden) + (action_dim,),
                            output_gain=0.01, rng=rng)
        if output_bias is not None:
            output_bias = np.asarray(output_bias, dtype=float)
            if output_bias.shape != (action_dim,):
                raise ConfigError("output_bias must have one entry per action")
            # Start the mean at a chosen point (e.g. mid-range of the action
            # bounds); the bias stays an ordinary trainable parameter.
            self.mean_net.biases[-1][:] = output_bias
        self.log_std = np.full(action_dim, math.log(init_std))
        self.obs_dim = obs_dim
        self.action_dim = action_dim

    @property
    def parameters(self) -> list[np.ndarray]:
        return self.mean_net.parameters + [self.log_std]

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Draw actions; returns (actions, log_probs)."""
        mean, _ = self.mean_net.forward(obs)
        std = np.exp(self.log_std)
        noise = rng.normal(size=mean.shape)
        actions = mean + std * noise
        logp = self._log_prob_from_mean(mean, actions)
        return actions, logp

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        return self.mean_net(obs)

    def _log_prob_from_mean(self, mean: np.ndarray, actions: np.ndarray) -> np.ndarray:
        z = (actions - mean) / np.exp(self.log_std)
        return (-0.5 * np.sum(z * z, axis=-1)
                - np.sum(self.log_std)
                - 0.5 * self.action_dim * LOG_2PI)

    def log_prob(self, obs: np.ndarray, actions: np.ndarray):
        """Returns (log_probs, cache) for a later backward pass."""
        mean, activations = self.mean_net.forward(obs)
        logp = self._log_prob_from_mean(mean, actions)
        cache = (activations, mean, np.asarray(actions, dtype=float))
        return logp, cache

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.action_dim * (1.0 + LOG_2PI))

    def backward(self, cache, grad_logp: np.ndarray,
                 grad_entropy: float = 0.0) -> list[np.ndarray]:
        """Gradients of sum(grad_logp * logp) + grad_entropy * entropy."""
        activations, mean, actions = cache
        g = np.asarray(grad_logp, dtype=float)[:, None]
        std = np.exp(self.log_std)
        diff = (actions - mean) / (std * std)
        grad_mean = g * diff
        # d logp / d log_std = z^2 - 1 per dimension
        z2 = ((actions - mean) / std) ** 2
        grad_log_std = np.sum(g * (z2 - 1.0), axis=0) + grad_entropy
        net_grads, _ = self.mean_net.backward(activations, grad_mean)
        return net_grads + [grad_log_std]


class ValueFunction:
    """Scalar state-value network."""

    def __init__(self, obs_dim: int, hidden: tuple[int, ...],
                 rng: np.random.Generator):
        self.net = MLP((obs_dim,) + tuple(hidden) + (1,), output_gain=1.0, rng=rng)

    @property
    def parameters(self) -> list[np.ndarray]:
        return self.net.parameters

    def predict(self, obs: np.ndarray) -> np.ndarray:
        return self.net(obs)[:, 0]

    def forward(self, obs: np.ndarray):
        out, activations = self.net.forward(obs)
        return out[:, 0], activations

    def backward(self, activations, grad_value: np.ndarray) -> list[np.ndarray]:
        grads, _ = self.net.backward(activations,
                                     np.asarray(grad_value, dtype=float)[:, None])
        return grads


class Adam:
    """Plain Adam over a list of parameter arrays (updates in place)."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> None:
        if len(grads) != len(self.params):
            raise ConfigError("gradient list does not match parameter list")
        lr = self.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.asarray(a, dtype=float) for a in state["m"]]
        self.v = [np.asarray(a, dtype=float) for a in state["v"]]
        for a, p in zip(self.m + self.v, self.params + self.params):
            if a.shape != p.shape:
                raise ConfigError("optimizer state does not match parameters")


def default_observation_scale(obs_dim: int) -> np.ndarray:
    """Fixed per-channel scaling applied to observations before the nets.

    Angular rates are shrunk so all channels land in a similar range;
    orientation and motor angles pass through unchanged.
    """
    scale = np.ones(obs_dim)
    scale[2:4] = 0.25
    return scale


class Agent:
    """Policy + value pair with shared observation scaling and JSON state."""

    def __init__(self, obs_dim: int, action_dim: int,
                 policy_hidden: tuple[int, ...], value_hidden: tuple[int, ...],
                 rng: np.random.Generator, init_std: float = 0.5,
                 obs_scale: np.ndarray | None = None,
                 action_bias: np.ndarray | None = None):
        self.policy = GaussianPolicy(obs_dim, action_dim, policy_hidden, rng,
                                     init_std=init_std, output_bias=action_bias)
        self.value = ValueFunction(obs_dim, value_hidden, rng)
        self.obs_scale = (default_observation_scale(obs_dim)
                          if obs_scale is None else np.asarray(obs_scale, dtype=float))
        if self.obs_scale.shape != (obs_dim,):
            raise ConfigError("obs_scale must have one entry per observation channel")
        self.policy_hidden = tuple(policy_hidden)
        self.value_hidden = tuple(value_hidden)

    def scaled(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=float) * self.obs_scale

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        """Stochastic action for raw (unscaled) observations."""
        return self.policy.sample(self.scaled(obs), rng)

    def deterministic_action(self, obs: np.ndarray) -> np.ndarray:
        return self.policy.mean_action(self.scaled(obs))

    def predict_value(self, obs: np.ndarray) -> np.ndarray:
        return self.value.predict(self.scaled(obs))

    @property
    def parameters(self) -> list[np.ndarray]:
        return self.policy.parameters + self.value.parameters

    def to_state(self) -> dict:
        return {
            "obs_dim": self.policy.obs_dim,
            "action_dim": self.policy.action_dim,
            "policy_hidden": list(self.policy_hidden),
            "value_hidden": list(self.value_hidden),
            "obs_scale": self.obs_scale.tolist(),
            "policy_weights": [w.tolist() for w in self.policy.mean_net.weights],
            "policy_biases": [b.tolist() for b in self.policy.mean_net.biases],
            "log_std": self.policy.log_std.tolist(),
            "value_weights": [w.tolist() for w in self.value.net.weights],
            "value_biases": [b.tolist() for b in self.value.net.biases],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Agent":
        agent = cls(int(state["obs_dim"]), int(state["action_dim"]),
                    tuple(state["policy_hidden"]), tuple(state["value_hidden"]),
                    rng=np.random.default_rng(0),
                    obs_scale=np.asarray(state["obs_scale"], dtype=float))
        agent.policy.mean_net.weights = [np.asarray(w, dtype=float)
                                         for w in state["policy_weights"]]
        agent.policy.mean_net.biases = [np.asarray(b, dtype=float)
                                        for b in state["policy_biases"]]
        agent.policy.log_std = np.asarray(state["log_std"], dtype=float)
        agent.value.net.weights = [np.asarray(w, dtype=float)
                                   for w in state["value_weights"]]
        agent.value.net.biases = [np.asarray(b, dtype=float)
                                  for b in state["value_biases"]]
        return agent
