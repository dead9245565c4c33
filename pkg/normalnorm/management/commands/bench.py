import logging
import time

import numpy as np
import pandas as pd

from normalnorm.exceptions import DomainError
from normalnorm.management.commands._base import NormalNormCommand
from normalnorm.normalization import GroupingSpec, NormKind, NormLayer

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ['n', 'channels', 'kind', 'mode', 'repeats', 'seconds_per_call', 'seconds_per_sample']


def time_forward(layer, inputs, training, repeats):
    """Best-of-``repeats`` wall time of one forward call."""
    best = float('inf')
    for step in range(repeats):
        start = time.perf_counter()
        layer.forward(inputs, training=training, step=step)
        best = min(best, time.perf_counter() - start)
    return best


def bench(sizes, channels=16, repeats=5, seed=0):
    """
    Time train- and eval-mode forwards of conventional and normality layers
    (batch grouping) on ``(n, channels)`` standard normal inputs.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        inputs = rng.standard_normal((n, channels))
        for kind in (NormKind.CONVENTIONAL, NormKind.NORMALITY):
            layer = NormLayer(channels, kind, grouping=GroupingSpec('batch'), seed=seed)
            for mode, training in (('train', True), ('eval', False)):
                seconds = time_forward(layer, inputs, training, repeats)
                rows.append({'n': n, 'channels': channels, 'kind': kind.value, 'mode': mode, 'repeats': repeats,
                             'seconds_per_call': seconds, 'seconds_per_sample': seconds / n})
                logger.debug('n=%d %s %s: %.3gs', n, kind.value, mode, seconds)
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def slowdown(frame):
    """Normality over conventional time per (n, mode)."""
    table = frame.pivot_table(index=['n', 'mode'], columns='kind', values='seconds_per_call')
    return (table[NormKind.NORMALITY.value] / table[NormKind.CONVENTIONAL.value]).rename('ratio').reset_index()


class Command(NormalNormCommand):
    help = 'time normality against conventional normalization layer forwards for several group sizes.'

    defaults = {
        'sizes': [1024, 4096, 16384],
        'channels': 16,
        'repeats': 5,
    }

    def add_command_arguments(self, parser):
        parser.add_argument('--sizes', type=int, nargs='+', default=None,
                            help='batch sizes N, i.e. elements per group (default: 1024 4096 16384).')
        parser.add_argument('--channels', type=int, default=None, help='channels per layer (default: 16).')
        parser.add_argument('--repeats', type=int, default=None, help='timed calls per case (default: 5).')

    def run(self):
        c = self.config
        if min(c['sizes']) < 2 or c['channels'] < 1 or c['repeats'] < 1:
            raise DomainError('sizes must be >= 2, channels and repeats >= 1')
        frame = bench(c['sizes'], c['channels'], c['repeats'], c['seed'])
        frame.to_csv(self.out / 'bench.csv', index=False)
        ratios = slowdown(frame)
        ratios.to_csv(self.out / 'bench_ratio.csv', index=False)
        logger.info('Wrote timings for %d sizes to %s', len(c['sizes']), self.out)
        self.stdout.write(ratios.to_string(index=False))
