"""
A multilayer perceptron with optional normalization before each hidden
activation, trained by minibatch SGD with momentum on the autodiff tape.
"""
import contextlib
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from normalnorm import autodiff
from normalnorm.datasets import iterate_minibatches
from normalnorm.exceptions import DivergenceError, DomainError, PreconditionError
from normalnorm.normalization import Grouping, GroupingSpec, NoiseMode, NormKind, NormLayer

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = 6


@dataclass(frozen=True)
class MlpSpec:
    """
    ``widths`` runs from the input dimension through the hidden widths to the
    number of classes. ``norm`` is one kind for every hidden layer or one per
    hidden layer; ``layer_options`` are passed to each normalization layer.
    """
    widths: tuple
    norm: object = NormKind.NORMALITY
    grouping: GroupingSpec = field(default_factory=GroupingSpec)
    layer_options: dict = field(default_factory=dict)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise DomainError('widths must hold at least an input and an output size, all >= 1')
        object.__setattr__(self, 'widths', widths)
        hidden = len(widths) - 2
        kinds = self.norm
        if isinstance(kinds, (str, NormKind)):
            kinds = (kinds,) * hidden
        try:
            kinds = tuple(NormKind(k) for k in kinds)
        except ValueError as e:
            raise DomainError(str(e))
        if len(kinds) != hidden:
            raise DomainError('expected {} normalization kinds, got {}'.format(hidden, len(kinds)))
        object.__setattr__(self, 'norm', kinds)
        if self.grouping.mode is Grouping.INSTANCE and any(k is not NormKind.NONE for k in kinds):
            raise PreconditionError('instance grouping needs spatial extent; an MLP has none')
        if self.grouping.mode is Grouping.GROUP:
            for width, kind in zip(widths[1:-1], kinds):
                if kind is not NormKind.NONE and width % self.grouping.group_size:
                    raise PreconditionError('hidden width {} is not divisible by group_size {}'
                                            .format(width, self.grouping.group_size))

    @property
    def hidden_widths(self):
        return self.widths[1:-1]

    def as_dict(self):
        options = dict(self.layer_options)
        if 'noise_mode' in options:
            options['noise_mode'] = NoiseMode(options['noise_mode']).value
        return {
            'widths': list(self.widths),
            'norm': [k.value for k in self.norm],
            'grouping': self.grouping.as_dict(),
            'layer_options': options,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(widths=tuple(data['widths']), norm=tuple(data['norm']),
                   grouping=GroupingSpec(**data['grouping']), layer_options=dict(data.get('layer_options', {})))


class Mlp:
    """
    Hidden block ``i`` computes ``norm_i(a @ W_i + b_i)`` and feeds its ReLU to
    the next block; the last linear layer produces the logits.
    """

    def __init__(self, spec, weights, biases, norms, seed=0):
        self.spec = spec
        self.weights = weights
        self.biases = biases
        self.norms = norms
        self.seed = seed

    @property
    def num_hidden(self):
        return len(self.spec.hidden_widths)

    @property
    def num_classes(self):
        return self.spec.widths[-1]

    def parameters(self):
        """Ordered ``(name, array)`` pairs; the arrays are updated in place by the optimizer."""
        params = []
        for i, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            params.append(('linear{}.weight'.format(i), weight))
            params.append(('linear{}.bias'.format(i), bias))
            if i < self.num_hidden and self.norms[i] is not None:
                params.append(('norm{}.gamma'.format(i), self.norms[i].state.gamma))
                params.append(('norm{}.beta'.format(i), self.norms[i].state.beta))
        return params

    def num_parameters(self):
        return sum(array.size for _, array in self.parameters())

    def norm_layers(self):
        return [(i, layer) for i, layer in enumerate(self.norms) if layer is not None]

    def _forward(self, tape, features, step=0, frozen=None):
        leaves = {name: tape.leaf(array) for name, array in self.parameters()}
        out = tape.leaf(np.asarray(features, dtype=np.float64))
        caches = []
        for i in range(len(self.weights)):
            out = out @ leaves['linear{}.weight'.format(i)] + leaves['linear{}.bias'.format(i)]
            if i == self.num_hidden:
                break
            cache = None
            if self.norms[i] is not None:
                out, cache = autodiff.norm(self.norms[i], out, leaves['norm{}.gamma'.format(i)],
                                           leaves['norm{}.beta'.format(i)], step,
                                           frozen[i] if frozen is not None else None)
            caches.append(cache)
            out = autodiff.relu(out)
        return out, caches, leaves

    def loss(self, features, labels, step=0, frozen=None):
        """Training-mode loss; with ``frozen`` caches the normalization layers reuse their estimates."""
        tape = autodiff.Tape()
        logits, _, _ = self._forward(tape, features, step, frozen)
        return float(autodiff.softmax_cross_entropy(logits, labels).data)

    def loss_and_grads(self, features, labels, step=0, frozen=None):
        """
        Returns ``(loss, grads, caches, logits)`` for one training-mode minibatch.
        """
        tape = autodiff.Tape()
        logits, caches, leaves = self._forward(tape, features, step, frozen)
        loss = autodiff.softmax_cross_entropy(logits, labels)
        tape.backward(loss)
        grads = {name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
                 for name, leaf in leaves.items()}
        return float(loss.data), grads, caches, logits.data

    def calibrate(self, batches):
        """
        Populate running statistics with training-mode forwards; parameters are untouched.
        """
        count = 0
        for step, features in enumerate(batches):
            self._forward(autodiff.Tape(), features, step)
            count += 1
        logger.info('Calibrated running statistics on %d batches', count)
        return count

    def _hidden_block(self, i, inputs, return_transformed=False):
        pre = inputs @ self.weights[i] + self.biases[i]
        layer = self.norms[i]
        if layer is None:
            return (pre, pre) if return_transformed else pre
        return layer.evaluate(pre, return_transformed)

    def _head(self, hidden):
        return np.maximum(hidden, 0.0) @ self.weights[-1] + self.biases[-1]

    def hidden_outputs(self, features):
        """
        Eval-mode pass. Returns per hidden block ``(outputs, transformed)`` lists
        and the logits: ``outputs`` are post-normalization (after the affine),
        ``transformed`` are post-power-transform values for normality layers and
        normalized values for conventional ones.
        """
        outputs, transformed = [], []
        a = np.asarray(features, dtype=np.float64)
        for i in range(self.num_hidden):
            out, values = self._hidden_block(i, a, return_transformed=True)
            outputs.append(out)
            transformed.append(values)
            a = np.maximum(out, 0.0)
        return outputs, transformed, a @ self.weights[-1] + self.biases[-1]

    def forward_from(self, k, block_output):
        """
        Continue an eval-mode pass from hidden block ``k``'s output. Returns the
        outputs of blocks ``k ... num_hidden - 1`` (the first being
        ``block_output`` itself) and the logits.
        """
        outputs = [np.asarray(block_output, dtype=np.float64)]
        for i in range(k + 1, self.num_hidden):
            outputs.append(self._hidden_block(i, np.maximum(outputs[-1], 0.0)))
        return outputs, self._head(outputs[-1])

    def logits(self, features):
        a = np.asarray(features, dtype=np.float64)
        if self.num_hidden == 0:
            return a @ self.weights[-1] + self.biases[-1]
        for i in range(self.num_hidden):
            a = self._hidden_block(i, a)
            if i < self.num_hidden - 1:
                a = np.maximum(a, 0.0)
        return self._head(a)

    def predict(self, features):
        return np.argmax(self.logits(features), axis=1)


def build_mlp(spec, seed=0, estimator=None):
    """
    Weights ~ U(-a, a) with ``a = sqrt(6 / fan_in)`` drawn from ``seed``; biases zero.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    norms = []
    for i, (width, kind) in enumerate(zip(spec.hidden_widths, spec.norm)):
        if kind is NormKind.NONE:
            norms.append(None)
            continue
        norms.append(NormLayer(width, kind, grouping=spec.grouping, index=i, seed=seed, estimator=estimator,
                               **spec.layer_options))
    return Mlp(spec, weights, biases, norms, seed=seed)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    lr_decay: float = 0.1
    lr_step: Optional[int] = None
    milestones: tuple = ()

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise DomainError('lr and weight_decay must be non-negative')
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError('momentum must lie in [0, 1)')
        if self.batch_size < 2:
            raise DomainError('batch_size must be at least 2')
        if self.epochs < 1:
            raise DomainError('epochs must be positive')
        if not 0.0 < self.lr_decay <= 1.0:
            raise DomainError('lr_decay must lie in (0, 1]')
        if self.lr_step is not None and self.lr_step < 1:
            raise DomainError('lr_step must be positive')
        object.__setattr__(self, 'milestones', tuple(sorted(int(m) for m in self.milestones)))

    def lr_at(self, epoch):
        """Step decay: one factor of ``lr_decay`` per milestone passed, or per ``lr_step`` epochs."""
        if self.milestones:
            drops = sum(1 for m in self.milestones if epoch >= m)
        elif self.lr_step:
            drops = epoch // self.lr_step
        else:
            drops = 0
        return self.lr * self.lr_decay ** drops

    def as_dict(self):
        data = asdict(self)
        data['milestones'] = list(self.milestones)
        return data


class SGD:
    """
    ``v <- momentum * v + grad + weight_decay * w``; ``w <- w - lr * v``.
    """

    def __init__(self, parameters, momentum=0.9, weight_decay=5e-4):
        self.parameters = list(parameters)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(array) for name, array in self.parameters}

    def step(self, grads, lr):
        for name, weight in self.parameters:
            velocity = self.velocity[name]
            velocity *= self.momentum
            velocity += grads[name] + self.weight_decay * weight
            weight -= lr * velocity


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    @property
    def final_val_accuracy(self):
        return self.records[-1].val_accuracy if self.records else float('nan')

    def to_frame(self):
        return pd.DataFrame([asdict(r) for r in self.records],
                            columns=['epoch', 'lr', 'train_loss', 'train_accuracy', 'val_accuracy'])

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)


def accuracy(model, data):
    if data is None or len(data) == 0:
        return float('nan')
    return float(np.mean(model.predict(data.features) == data.labels))


def train(model, train_data, config, val_data=None):
    """
    Minibatch SGD with momentum and weight decay. Data order, initialization
    and noise all derive from seeds, so reruns give identical logs.

    :raises DivergenceError: as soon as a minibatch loss is not finite
    """
    if len(train_data) < 2:
        raise PreconditionError('training needs at least 2 examples')
    if train_data.num_features != model.spec.widths[0]:
        raise PreconditionError('data has {} features, model expects {}'
                                .format(train_data.num_features, model.spec.widths[0]))
    if train_data.labels.max() >= model.num_classes:
        raise PreconditionError('labels exceed the model\'s {} classes'.format(model.num_classes))

    rng = np.random.default_rng(config.seed)
    optimizer = SGD(model.parameters(), config.momentum, config.weight_decay)
    log = TrainingLog()
    step = 0
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        total_loss, correct, seen = 0.0, 0, 0
        for features, labels in iterate_minibatches(train_data, config.batch_size, rng):
            loss, grads, _, logits = model.loss_and_grads(features, labels, step)
            if not math.isfinite(loss):
                raise DivergenceError('loss became {} at epoch {}, step {}'.format(loss, epoch, step),
                                      epoch=epoch, step=step)
            optimizer.step(grads, lr)
            total_loss += loss * labels.size
            correct += int(np.sum(np.argmax(logits, axis=1) == labels))
            seen += labels.size
            step += 1
        record = EpochRecord(epoch=epoch, lr=lr, train_loss=total_loss / seen, train_accuracy=correct / seen,
                             val_accuracy=accuracy(model, val_data))
        logger.info('epoch %d: lr=%g loss=%.4f train_acc=%.4f val_acc=%.4f', epoch, lr, record.train_loss,
                    record.train_accuracy, record.val_accuracy)
        log.records.append(record)
    return log


@dataclass(frozen=True)
class SeedSummary:
    seeds: tuple
    val_accuracies: tuple
    mean: float
    stderr: float

    def as_dict(self):
        return {'seeds': list(self.seeds), 'val_accuracies': list(self.val_accuracies),
                'mean': self.mean, 'stderr': self.stderr}


def summarize(seeds, values):
    values = np.asarray(values, dtype=np.float64)
    stderr = float(stats.sem(values)) if values.size > 1 else 0.0
    return SeedSummary(seeds=tuple(seeds), val_accuracies=tuple(float(v) for v in values),
                       mean=float(values.mean()), stderr=stderr)


def train_seeds(spec, train_data, config, val_data=None, seeds=range(DEFAULT_SEEDS), estimator=None):
    """
    Train one model per seed; returns the per-seed ``(model, log)`` pairs and a
    mean +- standard error summary of the final validation accuracy.
    """
    runs = []
    for seed in seeds:
        model = build_mlp(spec, seed, estimator)
        runs.append((model, train(model, train_data, replace(config, seed=seed), val_data)))
    summary = summarize(seeds, [log.final_val_accuracy for _, log in runs])
    logger.info('val accuracy over %d seeds: %.4f +- %.4f', len(runs), summary.mean, summary.stderr)
    return runs, summary


RUNNING_FIELDS = ('running_mu', 'running_sigma2', 'running_lambda', 'num_batches_tracked')


@contextlib.contextmanager
def preserved_running_statistics(model):
    """Restore every normalization layer's running statistics on exit."""
    saved = [(layer.state, {name: getattr(layer.state, name) for name in RUNNING_FIELDS})
             for _, layer in model.norm_layers()]
    try:
        yield
    finally:
        for state, values in saved:
            for name, value in values.items():
                setattr(state, name, value)


def gradient_check(model, features, labels, epsilon=1e-5):
    """
    Worst normwise relative error between backprop gradients and central
    finite differences, over all parameter tensors. Normalization layers run
    with their lambda estimates, noise scales and noise draws frozen from the
    unperturbed pass, and their running statistics are left as they were.
    """
    with preserved_running_statistics(model):
        _, grads, caches, _ = model.loss_and_grads(features, labels)
    worst = 0.0
    for name, param in model.parameters():
        numeric = np.empty_like(param)
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + epsilon
            plus = model.loss(features, labels, frozen=caches)
            param[index] = original - epsilon
            minus = model.loss(features, labels, frozen=caches)
            param[index] = original
            numeric[index] = (plus - minus) / (2.0 * epsilon)
        scale = max(np.linalg.norm(grads[name]), np.linalg.norm(numeric))
        error = np.linalg.norm(grads[name] - numeric) / scale if scale > 0 else 0.0
        logger.debug('gradient check %s: %.3g', name, error)
        worst = max(worst, float(error))
    return worst
