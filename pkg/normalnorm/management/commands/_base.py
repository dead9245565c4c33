import contextlib
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from normalnorm import compat
from normalnorm.datasets import load_csv, load_idx, synth_dataset, train_val_split, SYNTHETIC_KINDS
from normalnorm.exceptions import NormalNormError
from normalnorm.utils import get_output_dir, get_thread_limit, resolve_run_config, write_json

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = 'resolved_config.json'

DATA_DEFAULTS = {
    'dataset': 'skewed-features',
    'n_train': 2000,
    'n_val': 500,
    'data': None,
    'labels': None,
}


def add_data_arguments(parser):
    parser.add_argument('--dataset', choices=SYNTHETIC_KINDS, default=None,
                        help='synthetic dataset kind, used when no --data is given (default: skewed-features).')
    parser.add_argument('--n-train', type=int, default=None, dest='n_train',
                        help='number of synthetic training points.')
    parser.add_argument('--n-val', type=int, default=None, dest='n_val',
                        help='number of validation points (held out from --data files as well).')
    parser.add_argument('--data', default=None,
                        help='CSV file with a `label` column, or an IDX image file when --labels is given.')
    parser.add_argument('--labels', default=None, help='IDX label file matching --data.')


def load_data(config):
    """
    Returns ``(train, val)`` for the data options in ``config``.
    """
    seed = config['seed']
    if config['data']:
        data = load_idx(config['data'], config['labels']) if config['labels'] else load_csv(config['data'])
        return train_val_split(data, config['n_val'], seed)
    data = synth_dataset(config['dataset'], config['n_train'] + config['n_val'], seed)
    return train_val_split(data, config['n_val'], seed)


class NormalNormCommand(BaseCommand):
    """
    Shared plumbing: config resolution, the output directory, the thread cap
    and the mapping of library errors to exit codes.

    Subclasses declare ``defaults`` and implement ``add_command_arguments`` and ``run``.
    """
    defaults = {}

    def add_arguments(self, parser):
        parser.add_argument('--config', default=None, help='JSON file with option values; flags override it.')
        parser.add_argument('--out', default=None, help='output directory (default: NORMALNORM_OUTPUT_DIR).')
        parser.add_argument('--seed', type=int, default=None, help='random seed (default: 0).')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def set_options(self, **options):
        defaults = dict(self.defaults, seed=0, out=get_output_dir())
        self.config = resolve_run_config(defaults, options.get('config'), options)
        self.out = Path(self.config['out'])

    def handle(self, *args, **options):
        self.set_options(**options)
        self.out.mkdir(parents=True, exist_ok=True)
        write_json(self.out / RESOLVED_CONFIG_NAME, self.config)

        limit = get_thread_limit()
        if limit is not None:
            assert compat.threadpoolctl, '`NORMALNORM_THREADS` requires `threadpoolctl` package'
            limits = compat.threadpoolctl.threadpool_limits(limits=limit)
        else:
            limits = contextlib.nullcontext()
        with limits:
            try:
                self.run()
            except NormalNormError as e:
                logger.error('%s failed: %s', self.__class__.__module__.rsplit('.', 1)[-1], e)
                raise CommandError(str(e), returncode=e.exit_code)

    def run(self):
        raise NotImplementedError('.run() must be overridden.')
