"""
Normality normalization: normalize, estimate lambda, power transform, add
scaled Gaussian noise, then apply the affine transform.

Tensors are laid out ``(batch, channels, *spatial)``. Each grouping mode maps a
tensor onto a ``(groups, N)`` matrix whose rows share statistics; all group
math runs on that matrix in float64 and the result is cast back to the input
dtype.

Gradients treat the noise scale ``s`` and the estimate ``lambda_hat`` as
constants; the normalization statistics are differentiated through.
"""
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from normalnorm.exceptions import DomainError, PreconditionError, UninitializedStateError
from normalnorm.noise import NoiseStream
from normalnorm.power_transform import psi, psi_dh
from normalnorm.services import NewtonStepLambdaEstimator
from normalnorm.utils import get_estimator

logger = logging.getLogger(__name__)

DEFAULT_GROUP_SIZE = 32
UNSCALED_NOISE_SCALE = math.sqrt(2.0 / math.pi)

_default_estimator = NewtonStepLambdaEstimator()


class Grouping(str, enum.Enum):
    BATCH = 'batch'
    LAYER = 'layer'
    INSTANCE = 'instance'
    GROUP = 'group'


class NoiseMode(str, enum.Enum):
    SCALED = 'scaled'
    UNSCALED = 'unscaled'
    DROPOUT = 'dropout'
    NONE = 'none'


class NormKind(str, enum.Enum):
    NONE = 'none'
    CONVENTIONAL = 'conventional'
    NORMALITY = 'normality'


@dataclass(frozen=True)
class GroupingSpec:
    mode: Grouping = Grouping.BATCH
    group_size: int = DEFAULT_GROUP_SIZE

    def __post_init__(self):
        try:
            object.__setattr__(self, 'mode', Grouping(self.mode))
        except ValueError:
            raise DomainError('unknown grouping mode {!r}'.format(self.mode))
        if int(self.group_size) < 1:
            raise DomainError('group_size must be positive, got {}'.format(self.group_size))
        object.__setattr__(self, 'group_size', int(self.group_size))

    def as_dict(self):
        return {'mode': self.mode.value, 'group_size': self.group_size}


@dataclass
class NormLayerState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mu: np.ndarray
    running_sigma2: np.ndarray
    running_lambda: np.ndarray
    eps: float = 1e-5
    xi: float = 0.4
    alpha: float = 1.0
    noise_mode: NoiseMode = NoiseMode.SCALED
    p: float = 0.9
    momentum: float = 0.1
    power_transform: bool = True
    num_batches_tracked: int = 0

    def __post_init__(self):
        self.noise_mode = NoiseMode(self.noise_mode)
        if not self.eps > 0:
            raise DomainError('eps must be positive')
        if not self.xi >= 0:
            raise DomainError('xi must be non-negative')
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError('alpha must lie in [0, 1]')
        if not 0.0 < self.momentum < 1.0:
            raise DomainError('momentum must lie in (0, 1)')
        _check_retention(self)

    @classmethod
    def create(cls, num_channels, kind=NormKind.NORMALITY, **hyperparameters):
        kind = NormKind(kind)
        if kind is NormKind.NONE:
            raise DomainError('a normalization layer cannot have kind "none"')
        if kind is NormKind.CONVENTIONAL:
            hyperparameters.update(noise_mode=NoiseMode.NONE, xi=0.0, alpha=0.0)
        return cls(gamma=np.ones(num_channels), beta=np.zeros(num_channels),
                   running_mu=np.zeros(num_channels), running_sigma2=np.ones(num_channels),
                   running_lambda=np.ones(num_channels),
                   power_transform=kind is NormKind.NORMALITY, **hyperparameters)

    @property
    def kind(self):
        return NormKind.NORMALITY if self.power_transform else NormKind.CONVENTIONAL

    @property
    def num_channels(self):
        return self.gamma.size

    def hyperparameters(self):
        return {
            'kind': self.kind.value,
            'eps': self.eps,
            'xi': self.xi,
            'alpha': self.alpha,
            'noise_mode': self.noise_mode.value,
            'p': self.p,
            'momentum': self.momentum,
            'num_batches_tracked': self.num_batches_tracked,
        }


@dataclass
class ForwardCache:
    shape: tuple
    dtype: np.dtype
    spec: GroupingSpec
    h: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    inv_std: np.ndarray
    lambda_hat: np.ndarray
    clamped: np.ndarray
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray] = field(default=None)


def _check_retention(state):
    if state.noise_mode is NoiseMode.DROPOUT and not 0.0 < state.p <= 1.0:
        raise DomainError('retention rate p must lie in (0, 1], got {}'.format(state.p))


def _check_shape(shape, spec):
    if len(shape) < 2:
        raise PreconditionError('expected (batch, channels, *spatial), got shape {}'.format(shape))
    if spec.mode is Grouping.GROUP and shape[1] % spec.group_size:
        raise PreconditionError('{} channels are not divisible by group_size {}'
                                .format(shape[1], spec.group_size))


def to_groups(array, spec):
    """
    Rearrange ``array`` into a ``(groups, N)`` matrix of normalization groups.
    """
    shape = array.shape
    _check_shape(shape, spec)
    batch, channels = shape[0], shape[1]
    if spec.mode is Grouping.BATCH:
        return array.reshape(batch, channels, -1).transpose(1, 0, 2).reshape(channels, -1)
    if spec.mode is Grouping.LAYER:
        return array.reshape(batch, -1)
    if spec.mode is Grouping.INSTANCE:
        return array.reshape(batch * channels, -1)
    return array.reshape(batch * (channels // spec.group_size), -1)


def from_groups(matrix, shape, spec):
    """Inverse of :func:`to_groups`."""
    if spec.mode is Grouping.BATCH:
        batch, channels = shape[0], shape[1]
        return matrix.reshape(channels, batch, -1).transpose(1, 0, 2).reshape(shape)
    return matrix.reshape(shape)


def resolve_groups(shape, spec):
    """
    Partition the flat (C-order) element indices of a tensor of ``shape`` into normalization groups.
    """
    shape = tuple(int(d) for d in shape)
    indices = np.arange(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    return list(to_groups(indices, spec))


def noise_scale(x):
    """
    Zero-centered mean absolute deviation ``(1/N) sum |x_i - mean(x)|`` along the last axis.

    Treated as a constant by :func:`backward`.
    """
    x = np.asarray(getattr(x, 'values', x), dtype=np.float64)
    s = np.mean(np.abs(x - x.mean(axis=-1, keepdims=True)), axis=-1)
    return float(s) if s.ndim == 0 else s


def _needs_noise(state):
    if state.noise_mode is NoiseMode.NONE:
        return False
    if state.noise_mode is NoiseMode.DROPOUT:
        return state.p != 1.0
    return state.xi != 0.0


def _dropout_factor(state):
    return math.sqrt((1.0 - state.p) / state.p)


def apply_noise(x, s, state, z):
    """
    Perturb post-transform values ``x`` with the pre-drawn standard normals ``z``.

    ``s`` is a scalar or one scale per row of ``x``.
    """
    _check_retention(state)
    if not _needs_noise(state):
        return x
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if state.noise_mode is NoiseMode.DROPOUT:
        return x * (1.0 + z * _dropout_factor(state))
    if state.noise_mode is NoiseMode.UNSCALED:
        return x + z * state.xi * UNSCALED_NOISE_SCALE
    scale = np.asarray(s, dtype=np.float64)
    scale = scale.reshape(scale.shape + (1,) * (x.ndim - scale.ndim))
    return x + z * state.xi * scale


def _channel_view(values, ndim):
    return values.reshape((1, -1) + (1,) * (ndim - 2))


def _normalize(u, eps):
    mean = u.mean(axis=1)
    centered = u - mean[:, None]
    var = np.mean(centered * centered, axis=1)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std[:, None], mean, var, inv_std


def _update_running(state, mean, var, lmbda):
    m = state.momentum
    state.running_mu = state.running_mu + m * (mean - state.running_mu)
    state.running_sigma2 = state.running_sigma2 + m * (var - state.running_sigma2)
    if state.power_transform:
        state.running_lambda = state.running_lambda + m * (lmbda - state.running_lambda)
    state.num_batches_tracked += 1


def forward_train(input, state, spec, stream=None, estimator=None, frozen=None):
    """
    Training-mode forward pass. Returns ``(output, cache)``.

    With ``frozen`` (a cache from an earlier call on the same shape) the
    estimates lambda_hat, s and the noise draws z are reused and the running
    statistics are left alone.
    """
    values = np.asarray(input)
    if not np.all(np.isfinite(values)):
        raise DomainError('normalization input must be finite')
    u = to_groups(values.astype(np.float64), spec)
    if u.shape[1] < 2:
        if spec.mode is Grouping.INSTANCE:
            raise PreconditionError('instance grouping needs spatial extent larger than 1x1')
        raise PreconditionError('normalization groups need at least 2 elements, got {}'.format(u.shape[1]))
    if frozen is not None and frozen.shape != values.shape:
        raise PreconditionError('frozen cache shape {} does not match input {}'.format(frozen.shape, values.shape))

    h, mean, var, inv_std = _normalize(u, state.eps)

    if not state.power_transform:
        lmbda = np.ones(h.shape[0])
        clamped = np.zeros(h.shape[0], dtype=bool)
        x = h
    else:
        if frozen is not None:
            lmbda, clamped = frozen.lambda_hat, frozen.clamped
        else:
            lmbda, clamped = (estimator or _default_estimator).estimate_groups(h, state.alpha)
            if np.any(clamped):
                logger.debug('%d of %d lambda estimates clamped', int(np.count_nonzero(clamped)), clamped.size)
        x = psi(h, lmbda[:, None])

    if frozen is not None:
        s, z = frozen.s, frozen.z
    else:
        s = noise_scale(x)
        z = None
        if state.power_transform and _needs_noise(state):
            if stream is None:
                raise DomainError('training with noise requires a noise stream')
            z = to_groups(stream.gaussians_like(values.shape), spec)

    y = apply_noise(x, s, state, z) if state.power_transform else x
    out = _channel_view(state.gamma, values.ndim) * from_groups(y, values.shape, spec) \
        + _channel_view(state.beta, values.ndim)

    if frozen is None and spec.mode is Grouping.BATCH:
        _update_running(state, mean, var, lmbda)

    cache = ForwardCache(shape=values.shape, dtype=values.dtype, spec=spec, h=h, mean=mean, var=var,
                         inv_std=inv_std, lambda_hat=lmbda, clamped=clamped, x=x, s=s, y=y, z=z)
    return out.astype(values.dtype, copy=False), cache


def forward_eval(input, state, spec, estimator=None, return_transformed=False):
    """
    Evaluation-mode forward pass: no noise, no randomness, no state change.

    Batch grouping uses the running mu, sigma^2 and lambda; the per-sample
    groupings recompute their statistics from the input itself. With
    ``return_transformed`` the post-power-transform tensor is returned as well.
    """
    values = np.asarray(input)
    if not np.all(np.isfinite(values)):
        raise DomainError('normalization input must be finite')
    u = to_groups(values.astype(np.float64), spec)

    if spec.mode is Grouping.BATCH:
        if state.num_batches_tracked == 0:
            raise UninitializedStateError('running statistics are not populated; train or calibrate first')
        inv_std = 1.0 / np.sqrt(state.running_sigma2 + state.eps)
        h = (u - state.running_mu[:, None]) * inv_std[:, None]
        lmbda = state.running_lambda
    else:
        if u.shape[1] < 2:
            raise PreconditionError('normalization groups need at least 2 elements, got {}'.format(u.shape[1]))
        h = _normalize(u, state.eps)[0]
        if state.power_transform:
            lmbda = (estimator or _default_estimator).estimate_groups(h, state.alpha)[0]
        else:
            lmbda = np.ones(h.shape[0])

    x = psi(h, lmbda[:, None]) if state.power_transform else h
    transformed = from_groups(x, values.shape, spec)
    out = (_channel_view(state.gamma, values.ndim) * transformed
           + _channel_view(state.beta, values.ndim)).astype(values.dtype, copy=False)
    if return_transformed:
        return out, transformed
    return out


def backward(cache, grad_out, state):
    """
    Gradients of the layer output with respect to its input, gamma and beta.
    """
    grad = np.asarray(grad_out, dtype=np.float64)
    if grad.shape != cache.shape:
        raise PreconditionError('gradient shape {} does not match forward shape {}'.format(grad.shape, cache.shape))
    ndim = len(cache.shape)
    reduce_axes = (0,) + tuple(range(2, ndim))

    y = from_groups(cache.y, cache.shape, cache.spec)
    grad_gamma = np.sum(grad * y, axis=reduce_axes)
    grad_beta = np.sum(grad, axis=reduce_axes)

    dy = to_groups(grad * _channel_view(state.gamma, ndim), cache.spec)
    if state.power_transform and state.noise_mode is NoiseMode.DROPOUT and cache.z is not None:
        dx = dy * (1.0 + cache.z * _dropout_factor(state))
    else:
        dx = dy
    dh = dx * psi_dh(cache.h, cache.lambda_hat[:, None]) if state.power_transform else dx

    h = cache.h
    du = cache.inv_std[:, None] * (dh - dh.mean(axis=1, keepdims=True)
                                   - h * np.mean(dh * h, axis=1, keepdims=True))
    grad_input = from_groups(du, cache.shape, cache.spec).astype(cache.dtype, copy=False)
    return grad_input, grad_gamma, grad_beta


class NormLayer:
    """
    A normalization layer bound to its grouping, estimator service and noise stream.
    """

    def __init__(self, num_channels, kind=NormKind.NORMALITY, grouping=None, index=0, seed=0,
                 estimator=None, **hyperparameters):
        self.state = NormLayerState.create(num_channels, kind, **hyperparameters)
        self.spec = grouping if grouping is not None else GroupingSpec()
        self.index = index
        self.stream = NoiseStream(seed=seed, stream_id=index + 1)
        self.estimator = estimator if estimator is not None else get_estimator()

    @property
    def kind(self):
        return self.state.kind

    def forward(self, input, training=True, step=0, frozen=None):
        if training:
            return forward_train(input, self.state, self.spec, self.stream.at_step(step),
                                 self.estimator, frozen)
        return forward_eval(input, self.state, self.spec, self.estimator), None

    def evaluate(self, input, return_transformed=False):
        return forward_eval(input, self.state, self.spec, self.estimator, return_transformed)

    def backward(self, cache, grad_out):
        return backward(cache, grad_out, self.state)
