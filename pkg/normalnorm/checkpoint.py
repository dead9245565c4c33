"""
Checkpoints are directories holding a JSON manifest plus one raw
little-endian float32 blob per tensor.
"""
import json
import logging
from pathlib import Path

import numpy as np

from normalnorm.exceptions import DataFormatError
from normalnorm.nn import MlpSpec, build_mlp

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
FORMAT_NAME = 'normalnorm-checkpoint'
FORMAT_VERSION = 1
BLOB_DTYPE = '<f4'

_RUNNING_STATS = ('running_mu', 'running_sigma2', 'running_lambda')


def _tensors(model):
    tensors = list(model.parameters())
    for i, layer in model.norm_layers():
        for stat in _RUNNING_STATS:
            tensors.append(('norm{}.{}'.format(i, stat), getattr(layer.state, stat)))
    return tensors


def save(model, path, metadata=None):
    """
    Write ``model`` to the directory ``path``. Returns the manifest written.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, array in _tensors(model):
        filename = '{}.f4'.format(name)
        np.ascontiguousarray(array, dtype=BLOB_DTYPE).tofile(str(path / filename))
        entries.append({'name': name, 'file': filename, 'shape': list(array.shape), 'dtype': BLOB_DTYPE})
    manifest = {
        'format': FORMAT_NAME,
        'version': FORMAT_VERSION,
        'seed': model.seed,
        'spec': model.spec.as_dict(),
        'layers': {str(i): layer.state.hyperparameters() for i, layer in model.norm_layers()},
        'tensors': entries,
        'metadata': metadata or {},
    }
    with open(path / MANIFEST_NAME, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info('Wrote checkpoint with %d tensors to %s', len(entries), path)
    return manifest


def read_manifest(path):
    manifest_path = Path(path) / MANIFEST_NAME
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise DataFormatError('no checkpoint at {}'.format(path))
    except (OSError, ValueError) as e:
        raise DataFormatError('unreadable checkpoint manifest {}: {}'.format(manifest_path, e))
    if manifest.get('format') != FORMAT_NAME or manifest.get('version') != FORMAT_VERSION:
        raise DataFormatError('{} is not a version {} normalnorm checkpoint'.format(manifest_path, FORMAT_VERSION))
    return manifest


def load(path, estimator=None):
    """
    Rebuild the model stored in the checkpoint directory ``path``.
    """
    path = Path(path)
    manifest = read_manifest(path)
    try:
        spec = MlpSpec.from_dict(manifest['spec'])
    except (KeyError, TypeError) as e:
        raise DataFormatError('malformed checkpoint spec: {}'.format(e))
    model = build_mlp(spec, manifest.get('seed', 0), estimator)

    targets = dict(_tensors(model))
    for entry in manifest['tensors']:
        name = entry['name']
        if name not in targets:
            raise DataFormatError('checkpoint tensor {!r} does not belong to the model'.format(name))
        target = targets.pop(name)
        try:
            blob = np.fromfile(str(path / entry['file']), dtype=BLOB_DTYPE)
        except OSError as e:
            raise DataFormatError('missing tensor blob for {}: {}'.format(name, e))
        if blob.size != target.size or list(target.shape) != entry['shape']:
            raise DataFormatError('tensor {} has shape {} in the checkpoint, model expects {}'
                                  .format(name, entry['shape'], list(target.shape)))
        target[...] = blob.reshape(target.shape)
    if targets:
        raise DataFormatError('checkpoint is missing tensors: {}'.format(', '.join(sorted(targets))))

    for i, layer in model.norm_layers():
        layer.state.num_batches_tracked = int(manifest['layers'][str(i)]['num_batches_tracked'])
    return model
