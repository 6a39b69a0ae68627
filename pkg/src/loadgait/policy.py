"""Recurrent actor-critic with exact gradients and versioned checkpoints.

Two separate networks (actor and critic) share one topology: two stacked
gated recurrent layers with cell memory (input/forget/output gates) followed
by a linear head. The actor adds a trainable state-independent log-std
vector for its diagonal-Gaussian action distribution. All parameters live in
ONE flat float64 vector: [actor block | critic block | log-std], so
checkpointing, optimization, and gradient bookkeeping all operate on a
single array. Gradients are computed by exact backpropagation through time
over whole episodes and are validated against central finite differences in
the test suite.

Checkpoint byte layout (version 1, little-endian):
    bytes 0..3    magic  b"LGCK"
    u32           format version = 1
    u32           number of layer sizes = 5
    u32[5]        layer sizes: observation, hidden, hidden, action, 1
    u64           master seed recorded at save time
    u64           parameter count N
    f64[N]        the flat parameter vector
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"LGCK"
_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Hidden:
    """Recurrent activations (hidden + cell per layer) for one network."""

    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray

    def copy(self) -> "Hidden":
        return Hidden(self.h1.copy(), self.c1.copy(), self.h2.copy(), self.c2.copy())


@dataclass
class SeqForward:
    """Forward pass over a whole episode plus everything backward() needs."""

    out: np.ndarray          # (T, out_size) head outputs
    h2: np.ndarray           # (T, H) second-layer hidden states
    _cache: tuple


class _LstmNet:
    """Topology + parameter layout for one two-layer network.

    Stateless: every method takes the network's flat parameter block. The
    gate order inside each 4H row-block is [input, forget, candidate, output].
    """

    def __init__(self, in_size: int, hidden: int, out_size: int):
        self.in_size, self.hidden, self.out_size = in_size, hidden, out_size
        H = hidden
        sizes = {
            "W1": 4 * H * in_size, "U1": 4 * H * H, "b1": 4 * H,
            "W2": 4 * H * H, "U2": 4 * H * H, "b2": 4 * H,
            "head_W": out_size * H, "head_b": out_size,
        }
        self.slices: dict[str, slice] = {}
        pos = 0
        for name, n in sizes.items():
            self.slices[name] = slice(pos, pos + n)
            pos += n
        self.n_params = pos

    # --- parameter views ----------------------------------------------------------

    def views(self, block: np.ndarray) -> dict[str, np.ndarray]:
        H = self.hidden
        s = self.slices
        return {
            "W1": block[s["W1"]].reshape(4 * H, self.in_size),
            "U1": block[s["U1"]].reshape(4 * H, H),
            "b1": block[s["b1"]],
            "W2": block[s["W2"]].reshape(4 * H, H),
            "U2": block[s["U2"]].reshape(4 * H, H),
            "b2": block[s["b2"]],
            "head_W": block[s["head_W"]].reshape(self.out_size, H),
            "head_b": block[s["head_b"]],
        }

    def init(self, block: np.ndarray, rng: np.random.Generator,
             head_bias: np.ndarray | None) -> None:
        """Orthonormal-column recurrent weights, scaled-uniform input weights,
        +1 forget-gate bias, small-uniform head. Draw order is fixed."""
        v = self.views(block)
        H = self.hidden

        def ortho(shape):
            a = rng.standard_normal(shape)
            q, r = np.linalg.qr(a)
            return q * np.sign(np.diag(r))

        for W, fan in ((v["W1"], self.in_size), (v["W2"], H)):
            W[:] = rng.uniform(-1.0, 1.0, W.shape) / math.sqrt(fan)
        for U in (v["U1"], v["U2"]):
            U[:] = ortho(U.shape)
        for b in (v["b1"], v["b2"]):
            b[:] = 0.0
            b[H:2 * H] = 1.0  # forget gate starts open
        v["head_W"][:] = rng.uniform(-0.01, 0.01, v["head_W"].shape)
        v["head_b"][:] = 0.0 if head_bias is None else head_bias

    # --- single step ---------------------------------------------------------------

    @staticmethod
    def _cell(z: np.ndarray, c: np.ndarray, H: int):
        i = _sigmoid(z[0 * H:1 * H])
        f = _sigmoid(z[1 * H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:4 * H])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        return i, f, g, o, c_new, tc, o * tc

    def step(self, block: np.ndarray, x: np.ndarray, hidden: Hidden):
        if x.shape != (self.in_size,):
            raise ValueError(f"expected observation shape ({self.in_size},), "
                             f"got {x.shape}")
        v = self.views(block)
        H = self.hidden
        z1 = v["W1"] @ x + v["U1"] @ hidden.h1 + v["b1"]
        *_, c1, _, h1 = self._cell(z1, hidden.c1, H)
        z2 = v["W2"] @ h1 + v["U2"] @ hidden.h2 + v["b2"]
        *_, c2, _, h2 = self._cell(z2, hidden.c2, H)
        y = v["head_W"] @ h2 + v["head_b"]
        return y, Hidden(h1, c1, h2, c2)

    # --- whole-sequence forward/backward --------------------------------------------

    def forward(self, block: np.ndarray, xs: np.ndarray) -> SeqForward:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.in_size:
            raise ValueError(f"expected (T, {self.in_size}) observations, "
                             f"got {xs.shape}")
        T = xs.shape[0]
        v = self.views(block)
        H = self.hidden
        layers = []
        inp = xs
        for W, U, b in ((v["W1"], v["U1"], v["b1"]), (v["W2"], v["U2"], v["b2"])):
            WX = inp @ W.T + b
            i_s = np.empty((T, H)); f_s = np.empty((T, H))
            g_s = np.empty((T, H)); o_s = np.empty((T, H))
            c_s = np.empty((T, H)); tc_s = np.empty((T, H))
            h_s = np.empty((T, H))
            h = np.zeros(H); c = np.zeros(H)
            for t in range(T):
                z = WX[t] + U @ h
                i, f, g, o, c, tc, h = self._cell(z, c, H)
                i_s[t], f_s[t], g_s[t], o_s[t] = i, f, g, o
                c_s[t], tc_s[t], h_s[t] = c, tc, h
            layers.append((inp, i_s, f_s, g_s, o_s, c_s, tc_s, h_s))
            inp = h_s
        out = inp @ v["head_W"].T + v["head_b"]
        return SeqForward(out=out, h2=layers[1][7], _cache=(xs, layers))

    def backward(self, block: np.ndarray, fwd: SeqForward,
                 d_out: np.ndarray) -> np.ndarray:
        """Gradient of sum_t <d_out[t], out[t]> w.r.t. this network's block."""
        v = self.views(block)
        H = self.hidden
        xs, layers = fwd._cache
        T = xs.shape[0]
        grad = np.zeros(self.n_params)
        gv = self.views(grad)

        d_out = np.asarray(d_out, dtype=np.float64).reshape(T, self.out_size)
        h2 = layers[1][7]
        gv["head_W"][:] = d_out.T @ h2
        gv["head_b"][:] = d_out.sum(axis=0)
        dh_seq = d_out @ v["head_W"]  # (T, H) incoming grads on layer-2 hidden

        for layer_idx, (W, U, gW, gU, gb) in (
            (1, (v["W2"], v["U2"], gv["W2"], gv["U2"], gv["b2"])),
            (0, (v["W1"], v["U1"], gv["W1"], gv["U1"], gv["b1"])),
        ):
            inp, i_s, f_s, g_s, o_s, c_s, tc_s, h_s = layers[layer_idx]
            dZ = np.empty((T, 4 * H))
            dh_next = np.zeros(H)
            dc_next = np.zeros(H)
            for t in range(T - 1, -1, -1):
                dh = dh_seq[t] + dh_next
                dc = dc_next + dh * o_s[t] * (1.0 - tc_s[t] ** 2)
                c_prev = c_s[t - 1] if t > 0 else np.zeros(H)
                di = dc * g_s[t]
                df = dc * c_prev
                dg = dc * i_s[t]
                do = dh * tc_s[t]
                dz = dZ[t]
                dz[0 * H:1 * H] = di * i_s[t] * (1.0 - i_s[t])
                dz[1 * H:2 * H] = df * f_s[t] * (1.0 - f_s[t])
                dz[2 * H:3 * H] = dg * (1.0 - g_s[t] ** 2)
                dz[3 * H:4 * H] = do * o_s[t] * (1.0 - o_s[t])
                dh_next = U.T @ dz
                dc_next = dc * f_s[t]
            h_prev = np.vstack([np.zeros(H), h_s[:-1]])
            gW[:] = dZ.T @ inp
            gU[:] = dZ.T @ h_prev
            gb[:] = dZ.sum(axis=0)
            dh_seq = dZ @ W  # becomes d(input) = d(h of the layer below)
        return grad


def gaussian_logp(means: np.ndarray, log_std: np.ndarray,
                  actions: np.ndarray) -> np.ndarray:
    """Row-wise diagonal-Gaussian log density, exact in float64."""
    sigma = np.exp(log_std)
    diff = actions - means
    z = np.divide(diff, sigma, out=np.zeros_like(diff), where=sigma > 0.0)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=1)


def sample_action(mean: np.ndarray, log_std: np.ndarray,
                  rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Diagonal-Gaussian draw plus its exact log probability."""
    sigma = np.exp(log_std)
    noise = rng.standard_normal(mean.shape[0])
    action = mean + np.where(sigma > 0.0, sigma * noise, 0.0)
    logp = float(gaussian_logp(mean[None, :], log_std, action[None, :])[0])
    return action, logp


class RecurrentActorCritic:
    """Actor + critic + log-std living in one flat parameter vector."""

    def __init__(self, obs_size: int, hidden_size: int, action_size: int,
                 seed: int = 0, init_action: np.ndarray | None = None,
                 action_std: float = 0.2):
        self.obs_size, self.hidden_size = obs_size, hidden_size
        self.action_size = action_size
        self.seed = int(seed)
        self.actor_net = _LstmNet(obs_size, hidden_size, action_size)
        self.critic_net = _LstmNet(obs_size, hidden_size, 1)
        na, nc = self.actor_net.n_params, self.critic_net.n_params
        self.actor_slice = slice(0, na)
        self.critic_slice = slice(na, na + nc)
        self.log_std_slice = slice(na + nc, na + nc + action_size)
        self.n_params = na + nc + action_size
        self.flat = np.zeros(self.n_params)
        rng = np.random.default_rng(seed)
        self.actor_net.init(self.flat[self.actor_slice], rng, init_action)
        self.critic_net.init(self.flat[self.critic_slice], rng, None)
        self.flat[self.log_std_slice] = math.log(action_std)

    @property
    def log_std(self) -> np.ndarray:
        return self.flat[self.log_std_slice]

    @property
    def layer_sizes(self) -> tuple[int, int, int, int, int]:
        return (self.obs_size, self.hidden_size, self.hidden_size,
                self.action_size, 1)

    def zero_hidden(self) -> Hidden:
        H = self.hidden_size
        return Hidden(np.zeros(H), np.zeros(H), np.zeros(H), np.zeros(H))

    # --- single-step inference -------------------------------------------------------

    def mean_action(self, obs: np.ndarray, hidden: Hidden):
        return self.actor_net.step(self.flat[self.actor_slice], obs, hidden)

    def value(self, obs: np.ndarray, hidden: Hidden):
        y, h = self.critic_net.step(self.flat[self.critic_slice], obs, hidden)
        return float(y[0]), h

    def act(self, obs: np.ndarray, hidden: Hidden, rng: np.random.Generator):
        """Stochastic action: (action, log-prob, next hidden)."""
        mean, h = self.mean_action(obs, hidden)
        action, logp = sample_action(mean, self.log_std, rng)
        return action, logp, h

    # --- whole-episode passes ----------------------------------------------------------

    def actor_sequence(self, obs: np.ndarray) -> SeqForward:
        return self.actor_net.forward(self.flat[self.actor_slice], obs)

    def actor_backward(self, fwd: SeqForward, d_means: np.ndarray,
                       d_log_std: np.ndarray | None = None) -> np.ndarray:
        grad = np.zeros(self.n_params)
        grad[self.actor_slice] = self.actor_net.backward(
            self.flat[self.actor_slice], fwd, d_means)
        if d_log_std is not None:
            grad[self.log_std_slice] = d_log_std
        return grad

    def critic_sequence(self, obs: np.ndarray) -> SeqForward:
        return self.critic_net.forward(self.flat[self.critic_slice], obs)

    def critic_backward(self, fwd: SeqForward, d_values: np.ndarray) -> np.ndarray:
        grad = np.zeros(self.n_params)
        grad[self.critic_slice] = self.critic_net.backward(
            self.flat[self.critic_slice], fwd, d_values)
        return grad

    # --- weighted-loss gradients (the BPTT oracle surface) ------------------------------

    def weighted_logp_gradient(self, obs: np.ndarray, actions: np.ndarray,
                               weights: np.ndarray, need_grad: bool = True):
        """log-probs per step and the exact gradient of sum_t w_t * logp_t."""
        fwd = self.actor_sequence(obs)
        actions = np.asarray(actions, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        logps = gaussian_logp(fwd.out, self.log_std, actions)
        if not need_grad:
            return logps, None
        sigma2 = np.exp(2.0 * self.log_std)
        diff = actions - fwd.out
        d_means = weights[:, None] * diff / sigma2
        d_log_std = np.sum(weights[:, None] * (diff * diff / sigma2 - 1.0), axis=0)
        return logps, self.actor_backward(fwd, d_means, d_log_std)

    def weighted_value_gradient(self, obs: np.ndarray, weights: np.ndarray,
                                need_grad: bool = True):
        """Values per step and the exact gradient of sum_t w_t * v_t."""
        fwd = self.critic_sequence(obs)
        values = fwd.out[:, 0]
        if not need_grad:
            return values, None
        d_values = np.asarray(weights, dtype=np.float64)[:, None]
        return values, self.critic_backward(fwd, d_values)


# --- optimizer ------------------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction over one flat parameter vector."""

    def __init__(self, n_params: int, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = learning_rate, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        m_hat = self.m / (1.0 - self.b1 ** self.t)
        v_hat = self.v / (1.0 - self.b2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- checkpoints ------------------------------------------------------------------------


def save_checkpoint(path, policy: RecurrentActorCritic) -> None:
    """Write the versioned binary checkpoint described in the module docstring."""
    path = Path(path)
    sizes = np.asarray(policy.layer_sizes, dtype="<u4")
    parts = [
        _MAGIC,
        np.asarray([_VERSION, len(sizes)], dtype="<u4").tobytes(),
        sizes.tobytes(),
        np.asarray([policy.seed, policy.n_params], dtype="<u8").tobytes(),
        policy.flat.astype("<f8").tobytes(),
    ]
    path.write_bytes(b"".join(parts))


def load_checkpoint(path, expect_sizes: tuple[int, ...] | None = None
                    ) -> RecurrentActorCritic:
    """Read a checkpoint back into a fresh policy, validating the header.

    `expect_sizes` (observation, hidden, hidden, action, 1) lets callers
    demand a specific topology; a mismatch raises with both tuples spelled
    out so incompatibilities are diagnosable from the message alone.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise ValueError(f"checkpoint {path} is truncated (only {len(blob)} bytes)")
    if blob[:4] != _MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r} in {path}; not a checkpoint")
    version, n_sizes = np.frombuffer(blob[4:12], "<u4")
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version} in {path}")
    need = 12 + 4 * int(n_sizes) + 16
    if len(blob) < need:
        raise ValueError(f"checkpoint {path} is truncated (header short)")
    sizes = tuple(int(s) for s in np.frombuffer(blob[12:12 + 4 * n_sizes], "<u4"))
    off = 12 + 4 * int(n_sizes)
    seed, count = (int(x) for x in np.frombuffer(blob[off:off + 16], "<u8"))
    off += 16
    if expect_sizes is not None and sizes != tuple(expect_sizes):
        raise ValueError(
            f"checkpoint layer sizes {sizes} do not match the expected "
            f"{tuple(expect_sizes)}"
        )
    if len(sizes) != 5 or sizes[1] != sizes[2]:
        raise ValueError(f"unsupported layer-size record {sizes}")
    if len(blob) != off + 8 * count:
        raise ValueError(
            f"checkpoint {path} is truncated: header promises {count} parameters "
            f"({8 * count} bytes), file carries {len(blob) - off}"
        )
    policy = RecurrentActorCritic(sizes[0], sizes[1], sizes[3], seed=seed)
    if policy.n_params != count:
        raise ValueError(
            f"parameter count {count} inconsistent with sizes {sizes} "
            f"(expected {policy.n_params})"
        )
    policy.flat[:] = np.frombuffer(blob[off:], "<f8")
    return policy
