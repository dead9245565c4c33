import logging

import pandas as pd

from normalnorm import power_transform
from normalnorm.datasets import read_csv_columns
from normalnorm.management.commands._base import NormalNormCommand
from normalnorm.power_transform import Sample
from normalnorm.utils import get_estimator, write_json

logger = logging.getLogger(__name__)


class Command(NormalNormCommand):
    help = ('standardize the selected columns of a CSV file and report the one-step lambda estimate, '
            'the NLL derivatives at lambda=1 and optionally the grid-search optimum.')

    defaults = {
        'input': None,
        'columns': [],
        'alpha': 1.0,
        'oracle': False,
    }

    def add_command_arguments(self, parser):
        parser.add_argument('input', help='CSV file with a header row.')
        parser.add_argument('--columns', '-c', nargs='+', default=None,
                            help='columns to fit (default: every numeric column except `label`).')
        parser.add_argument('--alpha', type=float, default=None, help='attenuation of the Newton step (default: 1).')
        parser.add_argument('--oracle', action='store_true', default=None,
                            help='also report the grid-search argmin on [-1, 3] with step 0.001.')

    def run(self):
        estimator = get_estimator()
        rows = []
        for name, values in read_csv_columns(self.config['input'], self.config['columns']).items():
            sample = Sample.standardized(values)
            estimate = estimator.estimate(sample, self.config['alpha'])
            row = {'column': name, 'n': sample.n}
            row.update(estimate.as_dict())
            row['nll_at_lambda_hat'] = power_transform.nll(sample, estimate.lambda_hat)
            if self.config['oracle']:
                row['lambda_star'], row['nll_at_lambda_star'] = power_transform.grid_search_lambda(sample)
            if estimate.clamped:
                logger.warning('lambda estimate for column %s was clamped', name)
            logger.info('column %s: lambda_hat=%.4f', name, estimate.lambda_hat)
            rows.append(row)

        frame = pd.DataFrame(rows)
        frame.to_csv(self.out / 'fit_lambda.csv', index=False)
        write_json(self.out / 'fit_lambda.json', {'columns': rows})
        self.stdout.write(frame.to_string(index=False))
