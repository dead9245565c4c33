"""
Normality, dependence and noise-robustness measurements on samples and on
the hidden layers of a trained :class:`~normalnorm.nn.Mlp`.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy import special, stats
from scipy.spatial.distance import pdist

from normalnorm import compat
from normalnorm.exceptions import DegenerateSampleError, DomainError, PreconditionError
from normalnorm.noise import ROBUSTNESS_STREAM_BASE, NoiseStream

logger = logging.getLogger(__name__)

MIN_QQ_SAMPLES = 8
MIN_HZ_SAMPLES = 8
MIN_AMI_SAMPLES = 16
CONDITION_LIMIT = 1e12

DEFAULT_CHANNELS = 20
DEFAULT_BATCHES = 10
DEFAULT_PAIRS = 10
DEFAULT_DELTA = 0.5
DEFAULT_DRAWS = 6

REPORT_COLUMNS = ['layer', 'channel', 'batch', 'metric', 'value']


def _values(sample, minimum, what):
    values = np.asarray(getattr(sample, 'values', sample), dtype=np.float64)
    if values.ndim != 1:
        raise DomainError('{} expects a 1-dimensional sample'.format(what))
    if values.size < minimum:
        raise PreconditionError('{} needs at least {} values, got {}'.format(what, minimum, values.size))
    if not np.all(np.isfinite(values)):
        raise DomainError('{} expects finite values'.format(what))
    return values


def _pair(x, y, minimum, what):
    x = _values(x, minimum, what)
    y = _values(y, minimum, what)
    if x.size != y.size:
        raise PreconditionError('{} needs samples of equal length, got {} and {}'.format(what, x.size, y.size))
    return x, y


def normal_quantile(p):
    """Inverse standard normal CDF."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all((p > 0) & (p < 1)):
        raise DomainError('normal quantiles need probabilities in (0, 1)')
    out = special.ndtri(p)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QqResult:
    r2: float
    slope: float
    intercept: float
    n: int


def qq_r2(sample):
    """
    R^2 of the least-squares line through (normal quantile of (i - 0.5)/n, i-th order statistic).
    """
    values = np.sort(_values(sample, MIN_QQ_SAMPLES, 'qq_r2'))
    if values[0] == values[-1]:
        raise DegenerateSampleError('R^2 is undefined for a constant sample')
    n = values.size
    quantiles = special.ndtri((np.arange(1, n + 1) - 0.5) / n)
    fit = stats.linregress(quantiles, values)
    return QqResult(r2=float(fit.rvalue ** 2), slope=float(fit.slope), intercept=float(fit.intercept), n=n)


def pearson(x, y):
    x, y = _pair(x, y, 2, 'pearson')
    if x.min() == x.max() or y.min() == y.max():
        raise DegenerateSampleError('correlation is undefined for a constant sample')
    return float(stats.pearsonr(x, y)[0])


def hz_statistic(x, y):
    """
    Negative Henze-Zirkler statistic of the bivariate sample ``(x, y)``; higher
    means closer to jointly normal.

    Uses the biased covariance and the smoothing bandwidth
    ``beta = ((2d + 1) n / 4) ** (1 / (d + 4)) / sqrt(2)``.
    """
    x, y = _pair(x, y, MIN_HZ_SAMPLES, 'hz_statistic')
    data = np.column_stack([x, y])
    n, d = data.shape
    cov = np.cov(data, rowvar=False, bias=True)
    if not np.linalg.cond(cov) < CONDITION_LIMIT:
        raise DegenerateSampleError('singular covariance')
    inv_cov = np.linalg.inv(cov)
    beta = ((2 * d + 1) * n / 4.0) ** (1.0 / (d + 4)) / math.sqrt(2.0)
    b2 = beta * beta

    pairwise = pdist(data, 'mahalanobis', VI=inv_cov) ** 2
    centered = data - data.mean(axis=0)
    to_mean = np.einsum('ij,jk,ik->i', centered, inv_cov, centered)

    pair_term = (n + 2.0 * np.sum(np.exp(-0.5 * b2 * pairwise))) / n
    mean_term = 2.0 * (1.0 + b2) ** (-d / 2.0) * np.sum(np.exp(-b2 * to_mean / (2.0 * (1.0 + b2))))
    const_term = n * (1.0 + 2.0 * b2) ** (-d / 2.0)
    return -float(pair_term - mean_term + const_term)


def _equal_width_bins(values, bins):
    lo, hi = values.min(), values.max()
    if lo == hi:
        raise DegenerateSampleError('cannot bin a variable with zero range')
    edges = np.linspace(lo, hi, bins + 1)
    return np.digitize(values, edges[1:-1])


def adjusted_mutual_information(x, y):
    """
    AMI of ``x`` and ``y`` after uniform binning of each into ``floor(sqrt(n))``
    bins over its own range; chance-adjusted under the permutation model and
    normalized by the arithmetic mean of the entropies.
    """
    assert compat.adjusted_mutual_info_score, '`adjusted_mutual_information` requires `scikit-learn` package'
    x, y = _pair(x, y, MIN_AMI_SAMPLES, 'adjusted_mutual_information')
    bins = math.isqrt(x.size)
    labels = sorted([_equal_width_bins(x, bins), _equal_width_bins(y, bins)], key=lambda a: a.tobytes())
    return float(compat.adjusted_mutual_info_score(labels[0], labels[1], average_method='arithmetic'))


@dataclass(frozen=True)
class PairStats:
    pearson_rho: float
    hz_neg: float
    ami: float


def pair_stats(x, y):
    return PairStats(pearson_rho=pearson(x, y), hz_neg=hz_statistic(x, y), ami=adjusted_mutual_information(x, y))


@dataclass
class DiagnosticsReport:
    """
    Long-format measurement records plus a per-layer summary.
    """
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, layer, channel, batch, metric, value):
        self.records.append({'layer': int(layer), 'channel': str(channel), 'batch': int(batch),
                             'metric': metric, 'value': float(value)})

    def extend(self, other):
        self.records.extend(other.records)
        for key, value in other.summary.items():
            self.summary.setdefault(key, {}).update(value)
        return self

    def to_frame(self):
        return pd.DataFrame(self.records, columns=REPORT_COLUMNS)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def to_json(self, path):
        with open(path, 'w') as f:
            json.dump({'summary': self.summary, 'records': self.records}, f, indent=2, sort_keys=True)


def eval_batches(data, batch_size=128, count=DEFAULT_BATCHES, seed=0):
    """The first ``count`` full batches of a seeded permutation of ``data``."""
    order = np.random.default_rng(seed).permutation(len(data))
    batches = []
    for start in range(0, order.size - batch_size + 1, batch_size):
        if len(batches) == count:
            break
        batches.append(data.features[order[start:start + batch_size]])
    if not batches:
        raise PreconditionError('need at least {} examples for one evaluation batch'.format(batch_size))
    return batches


def transformed_values(model, features):
    """
    Per hidden layer: post-power-transform values for normality layers,
    normalized values for conventional layers and pre-activations otherwise.
    """
    return model.hidden_outputs(features)[1]


def _measured_layers(model):
    return [i for i, _ in model.norm_layers()]


def layer_r2_aggregate(model, batches, channels=DEFAULT_CHANNELS, seed=0):
    """
    Mean Q-Q R^2 per normalization layer over ``channels`` sampled channels
    times ``batches``. Returns ``({layer: mean_r2}, report)``.
    """
    rng = np.random.default_rng(seed)
    layers = _measured_layers(model)
    picked = {i: np.sort(rng.choice(model.spec.hidden_widths[i], size=min(channels, model.spec.hidden_widths[i]),
                                    replace=False)) for i in layers}
    report = DiagnosticsReport()
    scores = {i: [] for i in layers}
    for b, features in enumerate(batches):
        values = transformed_values(model, features)
        for i in layers:
            for c in picked[i]:
                try:
                    r2 = qq_r2(values[i][:, c]).r2
                except DegenerateSampleError:
                    logger.warning('skipping constant channel %d of layer %d in batch %d', c, i, b)
                    continue
                scores[i].append(r2)
                report.add(i, c, b, 'qq_r2', r2)
    aggregate = {i: float(np.mean(s)) if s else float('nan') for i, s in scores.items()}
    report.summary['qq_r2'] = {str(i): r2 for i, r2 in aggregate.items()}
    return aggregate, report


def pair_protocol(model, batches, pairs=DEFAULT_PAIRS, seed=0):
    """
    Correlation, joint normality and AMI for ``pairs`` random channel pairs per
    normalization layer, in every batch. Returns a report whose summary holds
    per-layer means.
    """
    rng = np.random.default_rng(seed)
    report = DiagnosticsReport()
    layers = [i for i in _measured_layers(model) if model.spec.hidden_widths[i] >= 2]
    picked = {i: [tuple(np.sort(rng.choice(model.spec.hidden_widths[i], size=2, replace=False)))
                  for _ in range(pairs)] for i in layers}
    totals = {metric: {i: [] for i in layers} for metric in ('pearson', 'hz_neg', 'ami')}
    for b, features in enumerate(batches):
        values = transformed_values(model, features)
        for i in layers:
            for first, second in picked[i]:
                try:
                    result = pair_stats(values[i][:, first], values[i][:, second])
                except DegenerateSampleError as e:
                    logger.warning('skipping pair (%d, %d) of layer %d in batch %d: %s', first, second, i, b, e)
                    continue
                channel = '{}-{}'.format(first, second)
                for metric, value in (('pearson', result.pearson_rho), ('hz_neg', result.hz_neg),
                                      ('ami', result.ami)):
                    report.add(i, channel, b, metric, value)
                    totals[metric][i].append(value)
    for metric, per_layer in totals.items():
        report.summary[metric] = {str(i): float(np.mean(v)) if v else float('nan') for i, v in per_layer.items()}
    return report


def diagnose(model, data, channels=DEFAULT_CHANNELS, batches=DEFAULT_BATCHES, pairs=DEFAULT_PAIRS,
             batch_size=128, seed=0):
    """Q-Q aggregate and pair protocol on ``batches`` seeded evaluation batches of ``data``."""
    features = eval_batches(data, batch_size, batches, seed)
    _, report = layer_r2_aggregate(model, features, channels, seed)
    return report.extend(pair_protocol(model, features, pairs, seed))


def global_noise_scale(model, data):
    """
    Per hidden layer, the zero-centered L1 norm ``mean |o_j - mean(o_j)|`` of
    every unit's block output over the whole of ``data``.
    """
    outputs = model.hidden_outputs(data.features)[0]
    return [np.mean(np.abs(o - o.mean(axis=0)), axis=0) for o in outputs]


@dataclass(frozen=True)
class RobustnessEntry:
    inject_layer: int
    probe_layer: int
    mean_zeta: float
    stderr: float
    delta: float
    draws: int


@dataclass
class RobustnessReport:
    entries: list = field(default_factory=list)

    def to_frame(self):
        return pd.DataFrame([asdict(e) for e in self.entries],
                            columns=['inject_layer', 'probe_layer', 'mean_zeta', 'stderr', 'delta', 'draws'])

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def to_json(self, path):
        with open(path, 'w') as f:
            json.dump({'entries': [asdict(e) for e in self.entries]}, f, indent=2, sort_keys=True)


def noise_robustness(model, data, inject_layer, probe_layers=None, delta=DEFAULT_DELTA, draws=DEFAULT_DRAWS,
                     seed=0, scales=None, train_data=None):
    """
    Relative L1 discrepancy at each probe layer after perturbing the output of
    hidden block ``inject_layer`` by ``z * delta * scale``, averaged over the
    points of ``data`` and ``draws`` noise draws.

    The per-unit ``scales`` are given directly or computed by
    :func:`global_noise_scale` over ``train_data``.
    """
    k = int(inject_layer)
    if not 0 <= k < model.num_hidden:
        raise DomainError('inject layer {} outside 0..{}'.format(k, model.num_hidden - 1))
    probes = list(range(k, model.num_hidden)) if probe_layers is None else [int(p) for p in probe_layers]
    if any(not k <= p < model.num_hidden for p in probes):
        raise DomainError('probe layers must lie in {}..{}'.format(k, model.num_hidden - 1))
    if delta < 0:
        raise DomainError('delta must be non-negative')
    if draws < 1:
        raise DomainError('draws must be at least 1')

    clean = model.hidden_outputs(data.features)[0]
    if scales is None:
        if train_data is None:
            raise PreconditionError('noise scales come from the training set; pass scales or train_data')
        scales = global_noise_scale(model, train_data)
    denominators = {}
    for p in probes:
        denominators[p] = np.sum(np.abs(clean[p]), axis=1)
        if np.any(denominators[p] == 0):
            raise DegenerateSampleError('zero L1 norm at probe layer {}'.format(p))

    stream = NoiseStream(seed=seed, stream_id=ROBUSTNESS_STREAM_BASE + k)
    per_draw = {p: [] for p in probes}
    for t in range(draws):
        z = stream.at_step(t).gaussians_like(clean[k].shape)
        perturbed, _ = model.forward_from(k, clean[k] + z * delta * scales[k])
        for p in probes:
            zeta = np.sum(np.abs(clean[p] - perturbed[p - k]), axis=1) / denominators[p]
            per_draw[p].append(float(np.mean(zeta)))

    report = RobustnessReport()
    for p in probes:
        values = np.asarray(per_draw[p])
        stderr = float(stats.sem(values)) if draws > 1 else 0.0
        report.entries.append(RobustnessEntry(inject_layer=k, probe_layer=p, mean_zeta=float(values.mean()),
                                              stderr=stderr, delta=float(delta), draws=draws))
        logger.info('zeta(%d -> %d) = %.4g +- %.2g', k, p, values.mean(), stderr)
    return report
