import logging

from normalnorm import checkpoint, diagnostics
from normalnorm.management.commands._base import DATA_DEFAULTS, NormalNormCommand, add_data_arguments, load_data

logger = logging.getLogger(__name__)


class Command(NormalNormCommand):
    help = ('perturb the output of one hidden block with scaled Gaussian noise and report the relative L1 '
            'discrepancy it causes at the same and later blocks, averaged over the validation set.')

    defaults = dict(DATA_DEFAULTS, **{
        'checkpoint': None,
        'delta': diagnostics.DEFAULT_DELTA,
        'draws': diagnostics.DEFAULT_DRAWS,
        'inject': None,
        'probes': None,
    })

    def add_command_arguments(self, parser):
        parser.add_argument('checkpoint', help='checkpoint directory written by `train`.')
        add_data_arguments(parser)
        parser.add_argument('--delta', type=float, default=None, help='noise factor (default: 0.5).')
        parser.add_argument('--draws', type=int, default=None, help='Monte Carlo draws (default: 6).')
        parser.add_argument('--inject', type=int, nargs='+', default=None,
                            help='hidden blocks to perturb (default: all).')
        parser.add_argument('--probes', type=int, nargs='+', default=None,
                            help='hidden blocks to measure; those before the injected block are skipped '
                                 '(default: the injected block and every later one).')

    def run(self):
        c = self.config
        model = checkpoint.load(c['checkpoint'])
        train_data, val_data = load_data(c)
        scales = diagnostics.global_noise_scale(model, train_data)

        report = diagnostics.RobustnessReport()
        inject = c['inject'] if c['inject'] is not None else range(model.num_hidden)
        for k in inject:
            probes = None if c['probes'] is None else [p for p in c['probes'] if p >= k]
            if probes == []:
                continue
            report.entries.extend(diagnostics.noise_robustness(
                model, val_data, k, probes, delta=c['delta'], draws=c['draws'], seed=c['seed'], scales=scales).entries)

        report.to_json(self.out / 'robustness.json')
        report.to_csv(self.out / 'robustness.csv')
        logger.info('Wrote %d robustness entries to %s', len(report.entries), self.out)
        self.stdout.write(report.to_frame().to_string(index=False))
