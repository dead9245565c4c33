import logging

import numpy as np

from normalnorm import checkpoint, diagnostics
from normalnorm.datasets import iterate_minibatches
from normalnorm.management.commands._base import DATA_DEFAULTS, NormalNormCommand, add_data_arguments, load_data
from normalnorm.nn import build_mlp

logger = logging.getLogger(__name__)


class Command(NormalNormCommand):
    help = ('measure the gaussianity (Q-Q R^2) and pairwise dependence (correlation, joint normality, AMI) '
            'of the normalized hidden units of a checkpointed model on validation batches.')

    defaults = dict(DATA_DEFAULTS, **{
        'checkpoint': None,
        'channels': diagnostics.DEFAULT_CHANNELS,
        'batches': diagnostics.DEFAULT_BATCHES,
        'pairs': diagnostics.DEFAULT_PAIRS,
        'batch_size': 128,
        'untrained': False,
    })

    def add_command_arguments(self, parser):
        parser.add_argument('checkpoint', help='checkpoint directory written by `train`.')
        add_data_arguments(parser)
        parser.add_argument('--channels', type=int, default=None, help='channels sampled per layer (default: 20).')
        parser.add_argument('--batches', type=int, default=None, help='validation minibatches (default: 10).')
        parser.add_argument('--pairs', type=int, default=None, help='channel pairs per layer (default: 10).')
        parser.add_argument('--batch-size', type=int, default=None, dest='batch_size',
                            help='validation minibatch size (default: 128).')
        parser.add_argument('--untrained', action='store_true', default=None,
                            help='measure the checkpoint\'s architecture at initialization instead, with running '
                                 'statistics calibrated on training batches.')

    def run(self):
        c = self.config
        model = checkpoint.load(c['checkpoint'])
        train_data, val_data = load_data(c)
        if c['untrained']:
            model = build_mlp(model.spec, model.seed)
            rng = np.random.default_rng(c['seed'])
            model.calibrate(features for features, _ in iterate_minibatches(train_data, c['batch_size'], rng))

        report = diagnostics.diagnose(model, val_data, channels=c['channels'], batches=c['batches'],
                                      pairs=c['pairs'], batch_size=c['batch_size'], seed=c['seed'])
        report.to_json(self.out / 'diagnostics.json')
        report.to_csv(self.out / 'diagnostics.csv')
        logger.info('Wrote %d diagnostic records to %s', len(report.records), self.out)
        for layer, r2 in sorted(report.summary.get('qq_r2', {}).items()):
            self.stdout.write('layer {}: mean Q-Q R^2 {:.4f}'.format(layer, r2))
