import json
import logging
from pathlib import Path

import pandas as pd

from normalnorm.datasets import read_csv_columns
from normalnorm.diagnostics import qq_r2
from normalnorm.exceptions import DataFormatError
from normalnorm.management.commands._base import NormalNormCommand
from normalnorm.power_transform import Sample, yeo_johnson, yeo_johnson_inverse
from normalnorm.utils import get_estimator, write_json

logger = logging.getLogger(__name__)

PARAMS_SUFFIX = '.lambdas.json'


class Command(NormalNormCommand):
    help = ('gaussianize the numeric columns of a CSV file: standardize each column and apply the power '
            'transform with its estimated lambda. With --inverse, undo a previous run.')

    defaults = {
        'input': None,
        'output': None,
        'columns': [],
        'alpha': 1.0,
        'inverse': False,
        'params': None,
    }

    def add_command_arguments(self, parser):
        parser.add_argument('input', help='CSV file with a header row.')
        parser.add_argument('--output', '-o', default=None,
                            help='output CSV (default: <out>/gaussianized.csv); lambdas go to <output>.lambdas.json.')
        parser.add_argument('--columns', '-c', nargs='+', default=None,
                            help='columns to transform (default: every numeric column except `label`).')
        parser.add_argument('--alpha', type=float, default=None, help='attenuation of the Newton step (default: 1).')
        parser.add_argument('--inverse', action='store_true', default=None,
                            help='apply the inverse transform with the lambdas from --params.')
        parser.add_argument('--params', default=None,
                            help='lambdas file written by a forward run (default: <input>.lambdas.json).')

    def run(self):
        output = Path(self.config['output'] or self.out / 'gaussianized.csv')
        if self.config['inverse']:
            self.invert(output)
        else:
            self.transform(output)

    def transform(self, output):
        estimator = get_estimator()
        columns = read_csv_columns(self.config['input'], self.config['columns'])
        frame = pd.read_csv(self.config['input'])
        params = {}
        for name, values in columns.items():
            sample = Sample.standardized(values)
            estimate = estimator.estimate(sample, self.config['alpha'])
            transformed = yeo_johnson(sample.values, estimate.lambda_hat)
            before, after = qq_r2(sample.values).r2, qq_r2(transformed).r2
            params[name] = {
                'lambda_hat': estimate.lambda_hat,
                'clamped': estimate.clamped,
                'mean': float(values.mean()),
                'std': float(values.std()),
                'qq_r2_before': before,
                'qq_r2_after': after,
            }
            frame[name] = transformed
            logger.info('column %s: lambda_hat=%.4f, Q-Q R^2 %.4f -> %.4f', name, estimate.lambda_hat, before, after)
            self.stdout.write('{}: lambda_hat={:.6f} qq_r2 {:.6f} -> {:.6f}'.format(
                name, estimate.lambda_hat, before, after))

        frame.to_csv(output, index=False, float_format='%.17g')
        write_json(str(output) + PARAMS_SUFFIX, {'alpha': self.config['alpha'], 'columns': params})

    def invert(self, output):
        params_path = self.config['params'] or self.config['input'] + PARAMS_SUFFIX
        try:
            with open(params_path) as f:
                params = json.load(f)['columns']
        except (OSError, ValueError, KeyError) as e:
            raise DataFormatError('could not read lambdas from {}: {}'.format(params_path, e))

        columns = read_csv_columns(self.config['input'], list(params))
        frame = pd.read_csv(self.config['input'])
        for name, values in columns.items():
            frame[name] = yeo_johnson_inverse(values, params[name]['lambda_hat'])
        frame.to_csv(output, index=False, float_format='%.17g')
        self.stdout.write('inverted {} column(s) into {}'.format(len(columns), output))
