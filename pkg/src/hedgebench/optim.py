"""Adam baseline and the hybrid optimizer with a curvature-preconditioned output layer.

The hybrid step keeps Adam on every LSTM tensor and preconditions the
fully connected output layer with a Kronecker-factored curvature estimate:
an input-side factor A (second moments of the layer's inputs with an
appended constant 1, folding in the bias) and an output-side factor G
(second moments of the layer's pre-activation gradients).  The damped
natural-gradient direction is

    (G + sqrt(damping) I)^-1  grad  (A + sqrt(damping) I)^-1

with the damping split as sqrt(damping) per factor, and the damping itself
adapted by a Levenberg-Marquardt rule from the ratio of actual to
quadratic-model-predicted loss decrease.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError

DAMPING_MIN = 1e-8
DAMPING_MAX = 1e2
_EIG_FLOOR = 1e-12
_LM_LOW = 0.25
_LM_HIGH = 0.75
_LM_FACTOR = 1.5


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4


def init_adam(params_like, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8, weight_decay=1e-4):
    """Zero-initialized Adam state shaped like ``params_like`` (a tensor dict)."""
    return AdamState(
        m={k: np.zeros_like(t) for k, t in params_like.items()},
        v={k: np.zeros_like(t) for k, t in params_like.items()},
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        weight_decay=weight_decay,
    )


def adam_step(state, params, grads):
    """Bias-corrected Adam with L2 weight decay folded into the gradient.

    Updates ``params`` (a tensor dict) in place for every key in ``grads``
    and returns (state, params).
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for key, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {key}")
        theta = params[key]
        if state.weight_decay != 0.0:
            g = g + state.weight_decay * theta
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state, params


@dataclass
class KfacState:
    """EMA curvature factors for one homogeneous linear layer.

    ``a_factor`` is [(h+1) x (h+1)] over inputs with an appended 1;
    ``g_factor`` is [out x out] over pre-activation gradients.  The first
    factor update assigns the plain batch average so the EMA is not biased
    toward its zero start.
    """

    a_factor: np.ndarray
    g_factor: np.ndarray
    damping: float = 1e-2
    ema_decay: float = 0.95
    lr: float = 0.1
    step: int = 0
    predicted_decrease: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.damping > 0:
            raise ParameterError(f"damping must be > 0, got {self.damping}")
        if not 0.0 < self.ema_decay < 1.0:
            raise ParameterError(f"ema_decay must be in (0, 1), got {self.ema_decay}")


def init_kfac(in_dim_plus_one, out_dim, damping=1e-2, ema_decay=0.95, lr=0.1):
    return KfacState(
        a_factor=np.zeros((in_dim_plus_one, in_dim_plus_one)),
        g_factor=np.zeros((out_dim, out_dim)),
        damping=damping,
        ema_decay=ema_decay,
        lr=lr,
    )


def kfac_update_factors(state, activations, out_grads):
    """Fold one batch of layer statistics into the EMA factors.

    ``activations`` [n, h+1] must already carry the appended constant 1;
    ``out_grads`` is [n, out].
    """
    activations = np.asarray(activations, dtype=np.float64)
    out_grads = np.asarray(out_grads, dtype=np.float64)
    if activations.ndim != 2 or out_grads.ndim != 2 or activations.shape[0] != out_grads.shape[0]:
        raise ParameterError(
            f"statistics shapes {activations.shape} / {out_grads.shape} are inconsistent"
        )
    if activations.shape[1] != state.a_factor.shape[0] or out_grads.shape[1] != state.g_factor.shape[0]:
        raise ParameterError("statistics dimensions do not match the factors")
    n = activations.shape[0]
    a_new = activations.T @ activations / n
    g_new = out_grads.T @ out_grads / n
    if state.step == 0:
        state.a_factor = a_new
        state.g_factor = g_new
    else:
        rho = state.ema_decay
        state.a_factor = rho * state.a_factor + (1.0 - rho) * a_new
        state.g_factor = rho * state.g_factor + (1.0 - rho) * g_new
    state.step += 1
    return state


def _damped_inverse(factor, shift):
    """Inverse of (factor + shift I) via symmetric eigendecomposition."""
    sym = 0.5 * (factor + factor.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(1.0, float(abs(eigvals).max()) if eigvals.size else 1.0)
    if eigvals.min() < -1e-8 * scale:
        raise NumericError(
            f"curvature factor not PSD (min eigenvalue {eigvals.min():.3e})"
        )
    inv_vals = 1.0 / np.maximum(eigvals + shift, _EIG_FLOOR)
    return (eigvecs * inv_vals) @ eigvecs.T


def kfac_precondition(state, grad):
    """Damped natural-gradient direction for an output-layer gradient.

    ``grad`` is [out, h+1] (bias column last).  Equivalent, at zero
    damping, to reshaping (A kron G)^-1 vec(grad) with column-major vec.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (state.g_factor.shape[0], state.a_factor.shape[0]):
        raise ParameterError(
            f"grad shape {grad.shape} does not match factors "
            f"({state.g_factor.shape[0]}, {state.a_factor.shape[0]})"
        )
    shift = float(np.sqrt(state.damping))
    a_inv = _damped_inverse(state.a_factor, shift)
    g_inv = _damped_inverse(state.g_factor, shift)
    return g_inv @ grad @ a_inv


def adjust_damping(state, reduction_ratio):
    """Levenberg-Marquardt damping update from actual/predicted decrease."""
    if reduction_ratio is None or not np.isfinite(reduction_ratio):
        return state
    if reduction_ratio < _LM_LOW:
        state.damping *= _LM_FACTOR
    elif reduction_ratio > _LM_HIGH:
        state.damping /= _LM_FACTOR
    state.damping = float(min(max(state.damping, DAMPING_MIN), DAMPING_MAX))
    return state


def hybrid_step(adam_state, kfac_state, params, grads, activations, out_grads,
                reduction_ratio=None, grad_scale=1.0):
    """One hybrid update: curvature-preconditioned output layer, Adam elsewhere.

    Order: factor update, damping adjustment from the previous step's
    reduction ratio, preconditioned output-layer step, Adam step on the
    remaining tensors.  Stores the quadratic-model predicted decrease for
    the applied output-layer step in ``kfac_state.predicted_decrease`` so
    the caller can form the next reduction ratio.

    The factors are per-sample second moments, so the gradient fed to the
    preconditioner must be on the same per-sample scale.  A caller whose
    loss gradient sums contributions over the statistics rows passes
    ``grad_scale = 1 / n_rows``; the applied step is
    ``-lr * precondition(grad_scale * grad)`` and the predicted decrease is
    reported in the caller's (unscaled) loss units, treating the loss
    curvature as (1 / grad_scale) times the factored estimate.
    """
    kfac_update_factors(kfac_state, activations, out_grads)
    adjust_damping(kfac_state, reduction_ratio)

    grad_out = np.hstack([grads["out.w"], grads["out.b"][:, None]])
    if not np.isfinite(grad_out).all():
        raise NumericError("non-finite output-layer gradient")
    direction = kfac_precondition(kfac_state, grad_scale * grad_out)
    delta = -kfac_state.lr * direction
    params["out.w"] += delta[:, :-1]
    params["out.b"] += delta[:, -1]

    curvature = kfac_state.g_factor @ delta @ kfac_state.a_factor
    kfac_state.predicted_decrease = float(
        np.sum(grad_out * delta)
        + (0.5 / grad_scale) * (np.sum(delta * curvature)
                                + kfac_state.damping * np.sum(delta * delta))
    )

    lstm_grads = {k: g for k, g in grads.items() if k not in ("out.w", "out.b")}
    if lstm_grads:
        adam_step(adam_state, params, lstm_grads)
    return adam_state, kfac_state, params
