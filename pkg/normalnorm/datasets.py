"""
Desk-scale datasets: synthetic generators plus CSV and IDX ingestion.
"""
import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.datasets import make_blobs, make_moons

from normalnorm.exceptions import DataFormatError, DomainError

logger = logging.getLogger(__name__)

SYNTHETIC_KINDS = ('skewed-features', 'blobs', 'two-moons')
LABEL_COLUMN = 'label'
IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
SHARED_SCALE_SD = 1.0


@dataclass(frozen=True)
class LabeledData:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise DataFormatError('expected features (n, d) and labels (n,), got {} and {}'
                                  .format(features.shape, labels.shape))
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataFormatError('labels must lie in [0, {})'.format(self.num_classes))
        if not np.all(np.isfinite(features)):
            raise DataFormatError('features must be finite')
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)

    def __len__(self):
        return self.labels.size

    @property
    def num_features(self):
        return self.features.shape[1]

    def subset(self, index):
        return LabeledData(self.features[index], self.labels[index], self.num_classes)


def _skewed_features(n, seed, num_features=8, num_classes=3):
    # Every feature of a sample shares one log-normal scale factor, so the
    # class sits in the ratios between features and pre-activations come out
    # one-sided skewed.
    rng = np.random.default_rng(seed)
    labels = rng.integers(num_classes, size=n)
    locations = rng.normal(0.0, 0.5, size=(num_classes, num_features))
    log_scale = locations[labels] + SHARED_SCALE_SD * rng.standard_normal((n, 1))
    lognormal = np.arange(num_features) % 2 == 0
    noise = np.empty((n, num_features))
    noise[:, lognormal] = np.exp(0.5 * rng.standard_normal((n, int(lognormal.sum()))))
    noise[:, ~lognormal] = rng.standard_exponential((n, int((~lognormal).sum())))
    return LabeledData(np.exp(log_scale) * noise, labels, num_classes)


def synth_dataset(kind, n, seed=0):
    """
    Generate ``n`` labelled points of the given synthetic ``kind``.

    ``skewed-features`` draws class-conditional log-normal and exponential
    features times a per-sample log-normal scale; ``blobs`` places two unit-variance clusters 10 standard
    deviations apart; ``two-moons`` is the interleaved half-circles problem.
    """
    if n < 1:
        raise DomainError('n must be positive, got {}'.format(n))
    if kind == 'skewed-features':
        return _skewed_features(n, seed)
    if kind == 'blobs':
        features, labels = make_blobs(n_samples=n, centers=[[-5.0, 0.0], [5.0, 0.0]], cluster_std=1.0,
                                      random_state=seed)
        return LabeledData(features, labels, 2)
    if kind == 'two-moons':
        features, labels = make_moons(n_samples=n, noise=0.1, random_state=seed)
        return LabeledData(features, labels, 2)
    raise DomainError('unknown dataset kind {!r}; expected one of {}'.format(kind, ', '.join(SYNTHETIC_KINDS)))


def train_val_split(data, n_val, seed=0):
    """Seeded shuffle, then the first ``n_val`` points become the validation set."""
    if not 0 <= n_val < len(data):
        raise DomainError('n_val must lie in [0, {})'.format(len(data)))
    order = np.random.default_rng(seed).permutation(len(data))
    return data.subset(order[n_val:]), data.subset(order[:n_val])


def iterate_minibatches(data, batch_size, rng, min_size=2):
    """
    Yield ``(features, labels)`` minibatches in a shuffled order drawn from ``rng``.

    A trailing batch smaller than ``min_size`` is dropped.
    """
    order = rng.permutation(len(data))
    for start in range(0, len(data), batch_size):
        index = order[start:start + batch_size]
        if index.size < min_size:
            break
        yield data.features[index], data.labels[index]


def load_csv(path, num_classes=None):
    """
    Read a CSV with a header row; the ``label`` column holds integer class ids
    and every other column is a numeric feature.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataFormatError('could not read {}: {}'.format(path, e))
    if LABEL_COLUMN not in frame.columns:
        raise DataFormatError('{} has no "{}" column'.format(path, LABEL_COLUMN))
    features = frame.drop(columns=[LABEL_COLUMN])
    non_numeric = [c for c in features.columns if not pd.api.types.is_numeric_dtype(features[c])]
    if non_numeric:
        raise DataFormatError('non-numeric feature columns in {}: {}'.format(path, ', '.join(map(str, non_numeric))))
    labels = frame[LABEL_COLUMN]
    if not pd.api.types.is_integer_dtype(labels):
        raise DataFormatError('the "{}" column of {} must hold integers'.format(LABEL_COLUMN, path))
    labels = labels.to_numpy()
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    logger.info('Loaded %d rows with %d features from %s', len(frame), features.shape[1], path)
    return LabeledData(features.to_numpy(dtype=np.float64), labels, num_classes)


def read_csv_columns(path, columns=None):
    """
    Numeric columns of a headered CSV as a dict ``{name: values}``, in file order.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataFormatError('could not read {}: {}'.format(path, e))
    if columns:
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise DataFormatError('{} has no column(s) {}'.format(path, ', '.join(missing)))
        frame = frame[list(columns)]
    else:
        frame = frame.select_dtypes(include='number').drop(columns=[LABEL_COLUMN], errors='ignore')
    out = {}
    for name in frame.columns:
        if not pd.api.types.is_numeric_dtype(frame[name]):
            raise DataFormatError('column {!r} of {} is not numeric'.format(name, path))
        out[str(name)] = frame[name].to_numpy(dtype=np.float64)
    return out


def _open(path):
    path = Path(path)
    return gzip.open(path, 'rb') if path.suffix == '.gz' else open(path, 'rb')


def _read_idx_header(stream, path, expected_magic, ndim):
    header = stream.read(4 * (1 + ndim))
    if len(header) < 4 * (1 + ndim):
        raise DataFormatError('{} is too short to be an IDX file'.format(path))
    magic, *dims = struct.unpack('>{}I'.format(1 + ndim), header)
    if magic != expected_magic:
        raise DataFormatError('bad IDX magic {} in {} (expected {})'.format(magic, path, expected_magic))
    return dims


def load_idx_images(path):
    """IDX image file as float64 rows scaled to [0, 1], shape ``(n, rows * cols)``."""
    try:
        with _open(path) as f:
            n, rows, cols = _read_idx_header(f, path, IDX_IMAGES_MAGIC, 3)
            data = np.frombuffer(f.read(), dtype=np.uint8)
    except OSError as e:
        raise DataFormatError('could not read {}: {}'.format(path, e))
    if data.size != n * rows * cols:
        raise DataFormatError('{} holds {} bytes of pixels, expected {}'.format(path, data.size, n * rows * cols))
    return data.reshape(n, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path):
    try:
        with _open(path) as f:
            (n,) = _read_idx_header(f, path, IDX_LABELS_MAGIC, 1)
            data = np.frombuffer(f.read(), dtype=np.uint8)
    except OSError as e:
        raise DataFormatError('could not read {}: {}'.format(path, e))
    if data.size != n:
        raise DataFormatError('{} holds {} labels, expected {}'.format(path, data.size, n))
    return data.astype(np.int64)


def load_idx(images_path, labels_path):
    features = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if features.shape[0] != labels.size:
        raise DataFormatError('{} images but {} labels'.format(features.shape[0], labels.size))
    return LabeledData(features, labels, int(labels.max()) + 1 if labels.size else 0)
