"""LSTM hedging policy: init, forward pass, and exact gradients by BPTT.

Parameter layout (fixed, serialization-stable):
  - per LSTM layer l: ``lstm{l}.w_x`` [4h x in], ``lstm{l}.w_h`` [4h x h],
    ``lstm{l}.b`` [4h], rows blocked by gate in the order
    input, forget, cell-candidate, output;
  - output layer: ``out.w`` [1 x h], ``out.b`` [1].

Hidden and cell states start at zero for every path (no state is carried
across paths), and the output layer squashes through tanh so every hedge
ratio lies strictly inside (-1, 1).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError
from . import rng


@dataclass(frozen=True)
class ArchConfig:
    input_dim: int = 2
    hidden_dim: int = 32
    n_lstm_layers: int = 1
    output_dim: int = 1

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "n_lstm_layers", "output_dim"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")


def tensor_shapes(arch):
    """Expected name -> shape map for the fixed parameter layout."""
    shapes = {}
    in_dim = arch.input_dim
    h = arch.hidden_dim
    for layer in range(arch.n_lstm_layers):
        shapes[f"lstm{layer}.w_x"] = (4 * h, in_dim)
        shapes[f"lstm{layer}.w_h"] = (4 * h, h)
        shapes[f"lstm{layer}.b"] = (4 * h,)
        in_dim = h
    shapes["out.w"] = (arch.output_dim, h)
    shapes["out.b"] = (arch.output_dim,)
    return shapes


@dataclass
class PolicyParams:
    """Network weights in the fixed layout keyed by ``tensor_shapes``."""

    arch: ArchConfig
    tensors: dict

    def __post_init__(self):
        expected = tensor_shapes(self.arch)
        if set(self.tensors) != set(expected):
            raise ParameterError(
                f"tensor keys {sorted(self.tensors)} do not match layout "
                f"{sorted(expected)}"
            )
        for name, shape in expected.items():
            t = np.ascontiguousarray(self.tensors[name], dtype=np.float64)
            if t.shape != shape:
                raise ParameterError(f"{name}: expected shape {shape}, got {t.shape}")
            if not np.isfinite(t).all():
                raise ParameterError(f"{name}: non-finite entries")
            self.tensors[name] = t

    def copy(self):
        return PolicyParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class ForwardCache:
    """Everything backward needs; holds the inputs, so features are read once.

    All per-layer sequences are time-major lists indexed by layer:
    pre-activations ``gates_pre`` [T, B, 4h], activations ``gates`` [T, B, 4h]
    (input/forget/candidate/output blocks), ``cells`` and ``cell_tanh`` and
    ``hidden`` [T, B, h].  ``hidden[-1]`` are the output-layer inputs used as
    curvature statistics; ``out_pre`` [B, T] are the output pre-activations.
    """

    features_tm: np.ndarray
    gates_pre: list
    gates: list
    cells: list
    cell_tanh: list
    hidden: list
    out_pre: np.ndarray
    hedges: np.ndarray


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def orthogonal_init(rows, cols, seed):
    """Matrix with orthonormal rows (rows <= cols) or columns (rows >= cols).

    QR factorization of a standard Gaussian matrix drawn from stream 0 of
    ``seed``, with the sign of R's diagonal folded into Q so the result is
    deterministic and uniformly distributed over the orthogonal group.
    """
    if rows < 1 or cols < 1:
        raise ParameterError("rows and cols must be >= 1")
    tall, thin = max(rows, cols), min(rows, cols)
    gauss = rng.normals(rng.stream_root(seed, 0), tall * thin).reshape(tall, thin)
    q, r = np.linalg.qr(gauss)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    return q if rows >= cols else q.T


def init_policy(arch, seed):
    """Deterministic initial weights.

    Input and output weights are Xavier-uniform on (-a, a) with
    a = sqrt(6 / (fan_in + fan_out)) over the full stacked matrix; each
    recurrent gate block is orthogonal; biases are zero except the forget
    gate's, which starts at 1.  Stream ordinals advance one per random
    tensor: per layer w_x then the four gate blocks of w_h, finally out.w.
    """
    h = arch.hidden_dim
    tensors = {}
    ordinal = 0
    in_dim = arch.input_dim
    for layer in range(arch.n_lstm_layers):
        bound = math.sqrt(6.0 / (in_dim + 4 * h))
        u = rng.uniforms(rng.stream_root(seed, ordinal), 4 * h * in_dim)
        ordinal += 1
        tensors[f"lstm{layer}.w_x"] = (bound * (2.0 * u - 1.0)).reshape(4 * h, in_dim)
        w_h = np.empty((4 * h, h))
        for gate in range(4):
            gate_seed = int(rng.stream_root(seed, ordinal))
            ordinal += 1
            w_h[gate * h : (gate + 1) * h] = orthogonal_init(h, h, gate_seed)
        tensors[f"lstm{layer}.w_h"] = w_h
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        tensors[f"lstm{layer}.b"] = b
        in_dim = h
    bound = math.sqrt(6.0 / (h + arch.output_dim))
    u = rng.uniforms(rng.stream_root(seed, ordinal), arch.output_dim * h)
    tensors["out.w"] = (bound * (2.0 * u - 1.0)).reshape(arch.output_dim, h)
    tensors["out.b"] = np.zeros(arch.output_dim)
    return PolicyParams(arch, tensors)


def forward(params, features, want_cache=True):
    """Run the policy over a feature tensor [batch, steps, input_dim].

    Returns (hedges [batch, steps], cache or None).  Hedges are
    tanh(out.w @ h_t + out.b), hence strictly inside (-1, 1).
    """
    arch = params.arch
    if arch.output_dim != 1:
        raise ParameterError("forward emits one hedge per step (output_dim must be 1)")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[2] != arch.input_dim:
        raise ParameterError(
            f"features must be [batch, steps, {arch.input_dim}], got {features.shape}"
        )
    n_batch, n_steps = features.shape[0], features.shape[1]
    h_dim = arch.hidden_dim
    features_tm = np.ascontiguousarray(features.transpose(1, 0, 2))

    x_seq = features_tm
    gates_pre, gates, cells, cell_tanh, hidden = [], [], [], [], []
    for layer in range(arch.n_lstm_layers):
        w_x = params.tensors[f"lstm{layer}.w_x"]
        w_h = params.tensors[f"lstm{layer}.w_h"]
        b = params.tensors[f"lstm{layer}.b"]
        zx = x_seq.reshape(n_steps * n_batch, -1) @ w_x.T + b
        zx = zx.reshape(n_steps, n_batch, 4 * h_dim)
        h_seq = np.empty((n_steps, n_batch, h_dim))
        if want_cache:
            z_seq = np.empty((n_steps, n_batch, 4 * h_dim))
            a_seq = np.empty((n_steps, n_batch, 4 * h_dim))
            c_seq = np.empty((n_steps, n_batch, h_dim))
            tc_seq = np.empty((n_steps, n_batch, h_dim))
        h_t = np.zeros((n_batch, h_dim))
        c_t = np.zeros((n_batch, h_dim))
        for t in range(n_steps):
            z = zx[t] + h_t @ w_h.T
            i_g = _sigmoid(z[:, :h_dim])
            f_g = _sigmoid(z[:, h_dim : 2 * h_dim])
            g_g = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
            o_g = _sigmoid(z[:, 3 * h_dim :])
            c_t = f_g * c_t + i_g * g_g
            tc = np.tanh(c_t)
            h_t = o_g * tc
            if not np.isfinite(h_t).all():
                raise NumericError(f"non-finite activation at layer {layer}, step {t}")
            h_seq[t] = h_t
            if want_cache:
                z_seq[t] = z
                a_seq[t, :, :h_dim] = i_g
                a_seq[t, :, h_dim : 2 * h_dim] = f_g
                a_seq[t, :, 2 * h_dim : 3 * h_dim] = g_g
                a_seq[t, :, 3 * h_dim :] = o_g
                c_seq[t] = c_t
                tc_seq[t] = tc
        if want_cache:
            gates_pre.append(z_seq)
            gates.append(a_seq)
            cells.append(c_seq)
            cell_tanh.append(tc_seq)
        hidden.append(h_seq)
        x_seq = h_seq

    w_out = params.tensors["out.w"]
    b_out = params.tensors["out.b"]
    out_pre = (x_seq.reshape(n_steps * n_batch, h_dim) @ w_out.T + b_out).reshape(
        n_steps, n_batch
    ).T
    hedges = np.tanh(out_pre)
    if not want_cache:
        return hedges, None
    cache = ForwardCache(
        features_tm=features_tm,
        gates_pre=gates_pre,
        gates=gates,
        cells=cells,
        cell_tanh=cell_tanh,
        hidden=hidden,
        out_pre=out_pre,
        hedges=hedges,
    )
    return hedges, cache


def backward(params, cache, d_hedges):
    """Exact gradient of sum(d_hedges * hedges) over all parameters.

    Returns (grads, out_signals) where ``grads`` mirrors the parameter
    layout and ``out_signals`` [batch, steps] are the output-layer
    pre-activation gradients d_hedges * (1 - hedge**2), the statistics a
    curvature-factor update consumes.
    """
    arch = params.arch
    hedges = cache.hedges
    d_hedges = np.asarray(d_hedges, dtype=np.float64)
    if d_hedges.shape != hedges.shape:
        raise ParameterError(
            f"d_hedges shape {d_hedges.shape} does not match hedges {hedges.shape}"
        )
    n_batch, n_steps = hedges.shape
    h_dim = arch.hidden_dim
    grads = {}

    out_signals = d_hedges * (1.0 - hedges * hedges)
    dz_out_tm = out_signals.T
    h_top = cache.hidden[-1]
    flat_h = h_top.reshape(n_steps * n_batch, h_dim)
    grads["out.w"] = dz_out_tm.reshape(1, -1) @ flat_h
    grads["out.b"] = np.array([dz_out_tm.sum()])
    w_out = params.tensors["out.w"]
    dh_seq = dz_out_tm[:, :, None] * w_out[0]

    for layer in range(arch.n_lstm_layers - 1, -1, -1):
        a_seq = cache.gates[layer]
        c_seq = cache.cells[layer]
        tc_seq = cache.cell_tanh[layer]
        w_h = params.tensors[f"lstm{layer}.w_h"]
        w_x = params.tensors[f"lstm{layer}.w_x"]
        x_seq = cache.features_tm if layer == 0 else cache.hidden[layer - 1]

        dz_all = np.empty((n_steps, n_batch, 4 * h_dim))
        dh_rec = np.zeros((n_batch, h_dim))
        dc = np.zeros((n_batch, h_dim))
        for t in range(n_steps - 1, -1, -1):
            a_t = a_seq[t]
            i_g = a_t[:, :h_dim]
            f_g = a_t[:, h_dim : 2 * h_dim]
            g_g = a_t[:, 2 * h_dim : 3 * h_dim]
            o_g = a_t[:, 3 * h_dim :]
            tc = tc_seq[t]
            c_prev = c_seq[t - 1] if t > 0 else 0.0
            dh = dh_seq[t] + dh_rec
            do = dh * tc
            dc = dc + dh * o_g * (1.0 - tc * tc)
            dz_t = dz_all[t]
            dz_t[:, :h_dim] = dc * g_g * i_g * (1.0 - i_g)
            dz_t[:, h_dim : 2 * h_dim] = dc * c_prev * f_g * (1.0 - f_g)
            dz_t[:, 2 * h_dim : 3 * h_dim] = dc * i_g * (1.0 - g_g * g_g)
            dz_t[:, 3 * h_dim :] = do * o_g * (1.0 - o_g)
            dh_rec = dz_t @ w_h
            dc = dc * f_g

        dz_flat = dz_all.reshape(n_steps * n_batch, 4 * h_dim)
        h_prev = np.empty_like(cache.hidden[layer])
        h_prev[0] = 0.0
        h_prev[1:] = cache.hidden[layer][:-1]
        grads[f"lstm{layer}.w_h"] = dz_flat.T @ h_prev.reshape(n_steps * n_batch, h_dim)
        grads[f"lstm{layer}.w_x"] = dz_flat.T @ x_seq.reshape(n_steps * n_batch, -1)
        grads[f"lstm{layer}.b"] = dz_flat.sum(axis=0)
        if layer > 0:
            dh_seq = (dz_flat @ w_x).reshape(n_steps, n_batch, h_dim)
    return grads, out_signals
