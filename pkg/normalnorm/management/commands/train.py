import logging

from normalnorm import checkpoint
from normalnorm.exceptions import DomainError
from normalnorm.management.commands._base import DATA_DEFAULTS, NormalNormCommand, add_data_arguments, load_data
from normalnorm.nn import MlpSpec, TrainConfig, train_seeds
from normalnorm.normalization import GroupingSpec, NoiseMode, NormKind
from normalnorm.utils import write_json

logger = logging.getLogger(__name__)


def run_dir_name(alpha):
    return 'alpha-{:g}'.format(alpha)


class Command(NormalNormCommand):
    help = ('train MLPs with normality, conventional or no normalization on a synthetic, CSV or IDX dataset; '
            'writes one training log and checkpoint per seed and alpha.')

    defaults = dict(DATA_DEFAULTS, **{
        'hidden': [64, 64],
        'norm': NormKind.NORMALITY.value,
        'grouping': 'batch',
        'group_size': 32,
        'alpha': [1.0],
        'xi': 0.4,
        'noise_mode': NoiseMode.SCALED.value,
        'p': 0.9,
        'eps': 1e-5,
        'stats_momentum': 0.1,
        'lr': 0.05,
        'momentum': 0.9,
        'weight_decay': 5e-4,
        'batch_size': 128,
        'epochs': 10,
        'lr_decay': 0.1,
        'lr_step': None,
        'milestones': [],
        'seeds': 1,
    })

    def add_command_arguments(self, parser):
        add_data_arguments(parser)
        parser.add_argument('--hidden', type=int, nargs='+', default=None, help='hidden layer widths (default: 64 64).')
        parser.add_argument('--norm', choices=[k.value for k in NormKind], default=None,
                            help='normalization before each hidden activation (default: normality).')
        parser.add_argument('--grouping', choices=['batch', 'layer', 'instance', 'group'], default=None,
                            help='normalization grouping (default: batch).')
        parser.add_argument('--group-size', type=int, default=None, dest='group_size',
                            help='channels per group in group mode (default: 32).')
        parser.add_argument('--alpha', type=float, nargs='+', default=None,
                            help='one or more attenuation values; each gets its own run directory (default: 1).')
        parser.add_argument('--xi', type=float, default=None, help='noise factor (default: 0.4).')
        parser.add_argument('--noise-mode', choices=[m.value for m in NoiseMode], default=None, dest='noise_mode',
                            help='training noise (default: scaled).')
        parser.add_argument('--p', type=float, default=None, help='retention rate for dropout noise (default: 0.9).')
        parser.add_argument('--lr', type=float, default=None, help='learning rate (default: 0.05).')
        parser.add_argument('--momentum', type=float, default=None, help='SGD momentum (default: 0.9).')
        parser.add_argument('--weight-decay', type=float, default=None, dest='weight_decay',
                            help='weight decay (default: 5e-4).')
        parser.add_argument('--batch-size', type=int, default=None, dest='batch_size',
                            help='minibatch size (default: 128).')
        parser.add_argument('--epochs', type=int, default=None, help='number of epochs (default: 10).')
        parser.add_argument('--lr-decay', type=float, default=None, dest='lr_decay',
                            help='step-decay factor (default: 0.1).')
        parser.add_argument('--lr-step', type=int, default=None, dest='lr_step',
                            help='decay the learning rate every this many epochs.')
        parser.add_argument('--milestones', type=int, nargs='+', default=None,
                            help='decay the learning rate at these epochs instead of every --lr-step.')
        parser.add_argument('--seeds', type=int, default=None,
                            help='number of seeds, starting at --seed; reports mean and standard error (default: 1).')

    def model_spec(self, num_features, num_classes, alpha):
        c = self.config
        return MlpSpec(
            widths=(num_features,) + tuple(c['hidden']) + (num_classes,),
            norm=c['norm'],
            grouping=GroupingSpec(c['grouping'], c['group_size']),
            layer_options={'alpha': alpha, 'xi': c['xi'], 'noise_mode': c['noise_mode'], 'p': c['p'],
                           'eps': c['eps'], 'momentum': c['stats_momentum']},
        )

    def train_config(self):
        c = self.config
        return TrainConfig(lr=c['lr'], momentum=c['momentum'], weight_decay=c['weight_decay'],
                           batch_size=c['batch_size'], epochs=c['epochs'], seed=c['seed'], lr_decay=c['lr_decay'],
                           lr_step=c['lr_step'], milestones=tuple(c['milestones']))

    def run(self):
        alphas = self.config['alpha']
        alphas = [alphas] if isinstance(alphas, (int, float)) else list(alphas)
        if self.config['seeds'] < 1:
            raise DomainError('--seeds must be at least 1')
        seeds = range(self.config['seed'], self.config['seed'] + self.config['seeds'])

        train_data, val_data = load_data(self.config)
        config = self.train_config()
        for alpha in alphas:
            run_dir = self.out / run_dir_name(alpha) if len(alphas) > 1 else self.out
            run_dir.mkdir(parents=True, exist_ok=True)
            spec = self.model_spec(train_data.num_features, train_data.num_classes, alpha)
            runs, summary = train_seeds(spec, train_data, config, val_data, seeds)
            for seed, (model, log) in zip(seeds, runs):
                seed_dir = run_dir / 'seed-{}'.format(seed)
                seed_dir.mkdir(exist_ok=True)
                log.to_csv(seed_dir / 'train_log.csv')
                checkpoint.save(model, seed_dir / 'checkpoint',
                                metadata={'train_config': config.as_dict(), 'seed': seed,
                                          'final_val_accuracy': log.final_val_accuracy})
            write_json(run_dir / 'summary.json', dict(summary.as_dict(), alpha=alpha))
            logger.info('Wrote %d run(s) for alpha=%g to %s', len(runs), alpha, run_dir)
            self.stdout.write('alpha={:g}: val accuracy {:.4f} +- {:.4f} over {} seed(s)'.format(
                alpha, summary.mean, summary.stderr, len(summary.seeds)))
