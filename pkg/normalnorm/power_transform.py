"""
The Yeo-Johnson power transform, its profile negative log-likelihood and the
closed-form one-step estimate of lambda.

All lambda math runs in float64. Functions taking a ``sample`` accept either a
:class:`Sample` or anything ``numpy.asarray`` turns into a 1-d float array.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from normalnorm.exceptions import DegenerateSampleError, DomainError, PreconditionError

logger = logging.getLogger(__name__)

LOG_2PI_PLUS_1 = math.log(2.0 * math.pi) + 1.0

LAMBDA_MIN = -3.0
LAMBDA_MAX = 5.0
CURVATURE_FLOOR = 1e-8
VARIANCE_FLOOR = 1e-12

# how far a sample may sit from zero mean / unit variance and still count as normalized
MEAN_TOLERANCE = 1e-3
VARIANCE_TOLERANCE = 1e-2

GRID_LOWER = -1.0
GRID_UPPER = 3.0
GRID_STEP = 1e-3


@dataclass(frozen=True)
class Sample:
    """
    One normalization group's pre-activations ``h``.
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise DomainError('a sample must be 1-dimensional, got shape {}'.format(values.shape))
        if values.size < 2:
            raise DomainError('a sample needs at least 2 values, got {}'.format(values.size))
        _check_finite(values)
        object.__setattr__(self, 'values', values)

    @classmethod
    def standardized(cls, values):
        """
        Shift and scale ``values`` to zero mean and unit (biased) variance.
        """
        values = np.asarray(values, dtype=np.float64)
        _check_finite(values)
        var = values.var()
        if not var > VARIANCE_FLOOR:
            raise DegenerateSampleError('cannot standardize a sample with variance {:g}'.format(var))
        return cls((values - values.mean()) / math.sqrt(var))

    @property
    def n(self):
        return self.values.size

    @property
    def mean(self):
        return float(self.values.mean())

    @property
    def variance(self):
        return float(self.values.var())

    def is_normalized(self):
        return abs(self.mean) <= MEAN_TOLERANCE and abs(self.variance - 1.0) <= VARIANCE_TOLERANCE


@dataclass(frozen=True)
class LambdaEstimate:
    lambda_hat: float
    nll_at_1: float
    d1: float
    d2: float
    clamped: bool
    alpha_used: float

    def as_dict(self):
        return {
            'lambda_hat': self.lambda_hat,
            'nll_at_1': self.nll_at_1,
            'd1': self.d1,
            'd2': self.d2,
            'clamped': self.clamped,
            'alpha_used': self.alpha_used,
        }


def _check_finite(*arrays):
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise DomainError('expected finite values')


def _as_sample(sample):
    return sample if isinstance(sample, Sample) else Sample(sample)


def _scalar_or_array(out):
    return float(out) if out.ndim == 0 else out


def psi(h, lmbda):
    """
    Unchecked, broadcasting Yeo-Johnson transform. ``lmbda`` may hold one value
    per row (shape ``(G, 1)`` against ``h`` of shape ``(G, N)``).
    """
    h, lmbda = np.broadcast_arrays(np.asarray(h, dtype=np.float64), np.asarray(lmbda, dtype=np.float64))
    upper_branch = h >= 0
    mu = 2.0 - lmbda
    with np.errstate(over='ignore', invalid='ignore'):
        log_upper = np.log1p(np.where(upper_branch, h, 0.0))
        log_lower = np.log1p(np.where(upper_branch, 0.0, -h))
        upper = np.where(lmbda == 0, log_upper,
                         np.expm1(lmbda * log_upper) / np.where(lmbda == 0, 1.0, lmbda))
        lower = np.where(mu == 0, -log_lower,
                         -np.expm1(mu * log_lower) / np.where(mu == 0, 1.0, mu))
    # lambda == 1 is the identity, kept bit-exact
    return np.where(lmbda == 1, h, np.where(upper_branch, upper, lower))


def psi_dh(h, lmbda):
    """
    Unchecked derivative of the transform with respect to its input.
    """
    h = np.asarray(h, dtype=np.float64)
    lmbda = np.asarray(lmbda, dtype=np.float64)
    return np.exp((lmbda - 1.0) * np.sign(h) * np.log1p(np.abs(h)))


def yeo_johnson(h, lmbda):
    """
    Apply the four-branch Yeo-Johnson transform elementwise.
    """
    h = np.asarray(h, dtype=np.float64)
    lmbda = np.asarray(lmbda, dtype=np.float64)
    _check_finite(h, lmbda)
    return _scalar_or_array(psi(h, lmbda))


def yeo_johnson_inverse(x, lmbda):
    """
    Invert :func:`yeo_johnson`; ``x`` must lie in the image of the transform for ``lmbda``.
    """
    x = np.asarray(x, dtype=np.float64)
    lmbda = np.asarray(lmbda, dtype=np.float64)
    _check_finite(x, lmbda)
    x, lmbda = np.broadcast_arrays(x, lmbda)
    upper_branch = x >= 0
    mu = 2.0 - lmbda

    upper_arg = np.where(upper_branch, lmbda * x, 0.0)
    lower_arg = np.where(upper_branch, 0.0, -mu * x)
    if np.any(upper_branch & (lmbda != 0) & (upper_arg <= -1.0)) or \
            np.any(~upper_branch & (mu != 0) & (lower_arg <= -1.0)):
        raise DomainError('value outside the image of the Yeo-Johnson transform')

    with np.errstate(over='ignore'):
        upper = np.where(lmbda == 0, np.expm1(np.where(upper_branch, x, 0.0)),
                         np.expm1(np.log1p(upper_arg) / np.where(lmbda == 0, 1.0, lmbda)))
        lower = np.where(mu == 0, -np.expm1(np.where(upper_branch, 0.0, -x)),
                         -np.expm1(np.log1p(lower_arg) / np.where(mu == 0, 1.0, mu)))
    out = np.where(lmbda == 1, x, np.where(upper_branch, upper, lower))
    return _scalar_or_array(out)


def _dpsi_dlambda_at1(h):
    t = np.abs(h)
    return (1.0 + t) * np.log1p(t) - t


def _d2psi_dlambda2_at1(h):
    t = np.abs(h)
    log_t = np.log1p(t)
    return np.sign(h) * ((1.0 + t) * log_t * log_t - 2.0 * ((1.0 + t) * log_t - t))


def psi_dlambda_at1(h):
    """
    First derivative of the transform in lambda, at lambda = 1.

    ``(1+h)log(1+h) - h`` for h >= 0 and ``(1-h)log(1-h) + h`` for h < 0; the
    function is even in ``h``.
    """
    h = np.asarray(h, dtype=np.float64)
    _check_finite(h)
    return _scalar_or_array(_dpsi_dlambda_at1(h))


def psi_d2lambda_at1(h):
    """
    Second derivative of the transform in lambda, at lambda = 1.

    ``(1+h)log(1+h)^2 - 2 dpsi`` for h >= 0; the h < 0 branch is its odd mirror.
    """
    h = np.asarray(h, dtype=np.float64)
    _check_finite(h)
    return _scalar_or_array(_d2psi_dlambda2_at1(h))


def log_jacobian_mean(h):
    """(1/N) sum sgn(h_i) log(1 + |h_i|) along the last axis."""
    h = np.asarray(h, dtype=np.float64)
    return np.mean(np.sign(h) * np.log1p(np.abs(h)), axis=-1)


def nll(sample, lmbda):
    """
    Profile negative log-likelihood of ``sample`` under the transform with ``lmbda``.

    :raises DegenerateSampleError: if the transformed sample has (near) zero variance
    """
    sample = _as_sample(sample)
    lmbda = float(lmbda)
    _check_finite(np.asarray(lmbda))
    transformed = psi(sample.values, lmbda)
    var = transformed.var()
    if not var > VARIANCE_FLOOR:
        raise DegenerateSampleError('transformed sample has variance {:g} at lambda={}'.format(var, lmbda))
    return 0.5 * LOG_2PI_PLUS_1 + 0.5 * math.log(var) - (lmbda - 1.0) * float(log_jacobian_mean(sample.values))


def nll_curve(sample, lambdas, chunk_size=256):
    """
    Vectorized :func:`nll` over a grid of lambdas.
    """
    sample = _as_sample(sample)
    lambdas = np.asarray(lambdas, dtype=np.float64).ravel()
    _check_finite(lambdas)
    jacobian = float(log_jacobian_mean(sample.values))
    out = np.empty(lambdas.size)
    for start in range(0, lambdas.size, chunk_size):
        block = lambdas[start:start + chunk_size]
        var = psi(sample.values[None, :], block[:, None]).var(axis=1)
        if not np.all(var > VARIANCE_FLOOR):
            raise DegenerateSampleError('transformed sample is degenerate on part of the lambda grid')
        out[start:start + chunk_size] = 0.5 * LOG_2PI_PLUS_1 + 0.5 * np.log(var) - (block - 1.0) * jacobian
    return out


def grid_search_lambda(sample, lower=GRID_LOWER, upper=GRID_UPPER, step=GRID_STEP):
    """
    Exact argmin of the NLL over an evenly spaced lambda grid. Returns ``(lambda*, nll(lambda*))``.
    """
    grid = lower + step * np.arange(int(round((upper - lower) / step)) + 1)
    curve = nll_curve(sample, grid)
    best = int(np.argmin(curve))
    return float(grid[best]), float(curve[best])


def quadratic_terms(h):
    """
    NLL value, first and second lambda-derivatives at lambda = 1, along the last axis.

    The sample mean and variance enter explicitly, so the result is the exact
    expansion of :func:`nll` even when ``h`` is only approximately normalized.
    """
    h = np.asarray(h, dtype=np.float64)
    centered = h - h.mean(axis=-1, keepdims=True)
    var = np.maximum(np.mean(centered * centered, axis=-1), VARIANCE_FLOOR)

    dpsi = _dpsi_dlambda_at1(h)
    d2psi = _d2psi_dlambda2_at1(h)
    dpsi_c = dpsi - dpsi.mean(axis=-1, keepdims=True)
    d2psi_c = d2psi - d2psi.mean(axis=-1, keepdims=True)

    dvar = 2.0 * np.mean(centered * dpsi_c, axis=-1)
    d2var = 2.0 * np.mean(centered * d2psi_c + dpsi_c * dpsi_c, axis=-1)

    l0 = 0.5 * LOG_2PI_PLUS_1 + 0.5 * np.log(var)
    d1 = dvar / (2.0 * var) - log_jacobian_mean(h)
    d2 = d2var / (2.0 * var) - dvar * dvar / (2.0 * var * var)
    return l0, d1, d2


def nll_quadratic(sample):
    """
    Second-order expansion coefficients ``(l0, d1, d2)`` of the NLL around lambda = 1.

    :raises PreconditionError: if the sample is not normalized
    """
    sample = _as_sample(sample)
    if not sample.is_normalized():
        raise PreconditionError('expected a normalized sample, got mean={:.3g} var={:.3g}'
                                .format(sample.mean, sample.variance))
    l0, d1, d2 = quadratic_terms(sample.values)
    return float(l0), float(d1), float(d2)


def nll_quadratic_eval(sample, lmbda):
    l0, d1, d2 = nll_quadratic(sample)
    delta = float(lmbda) - 1.0
    return l0 + delta * d1 + 0.5 * delta * delta * d2


def newton_step(d1, d2, alpha=1.0):
    """
    ``1 - alpha * d1 / d2`` clamped to [LAMBDA_MIN, LAMBDA_MAX]; flat curvature falls back to 1.

    Returns ``(lambda_hat, clamped)`` with the shape of the inputs.
    """
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    flat = ~(d2 > CURVATURE_FLOOR)
    step = np.where(flat, 0.0, d1 / np.where(flat, 1.0, d2))
    raw = 1.0 - alpha * step
    lmbda = np.clip(raw, LAMBDA_MIN, LAMBDA_MAX)
    return lmbda, flat | (lmbda != raw)


def _check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise DomainError('alpha must lie in [0, 1], got {}'.format(alpha))
    return alpha


def estimate_lambda(sample, alpha=1.0):
    """
    One Newton-Raphson step from lambda = 1 on the quadratic NLL, attenuated by ``alpha``.
    """
    alpha = _check_alpha(alpha)
    l0, d1, d2 = nll_quadratic(sample)
    lmbda, clamped = newton_step(d1, d2, alpha)
    if clamped:
        logger.debug('lambda estimate clamped (d1=%g, d2=%g, lambda=%g)', d1, d2, float(lmbda))
    return LambdaEstimate(lambda_hat=float(lmbda), nll_at_1=l0, d1=d1, d2=d2,
                          clamped=bool(clamped), alpha_used=alpha)


def estimate_lambdas(h, alpha=1.0):
    """
    Row-wise :func:`estimate_lambda` for a ``(groups, N)`` matrix, without the
    normalization precondition. Returns ``(lambda_hat, clamped)`` arrays.
    """
    alpha = _check_alpha(alpha)
    _, d1, d2 = quadratic_terms(h)
    return newton_step(d1, d2, alpha)
