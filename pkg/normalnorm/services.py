import numpy as np

from normalnorm import power_transform


class BaseLambdaEstimator:
    """
    Defines the base methods that should be implemented
    """

    def estimate(self, sample, alpha=1.0):
        """
        Returns a :class:`~normalnorm.power_transform.LambdaEstimate` for a single normalized sample.
        """
        raise NotImplementedError('.estimate() must be overridden.')

    def estimate_groups(self, h, alpha=1.0):
        """
        Returns ``(lambda_hat, clamped)`` arrays, one entry per row of the ``(groups, N)`` matrix ``h``.
        """
        raise NotImplementedError('.estimate_groups() must be overridden.')


class NewtonStepLambdaEstimator(BaseLambdaEstimator):
    """
    Closed-form estimate: one Newton-Raphson step on the quadratic expansion of the NLL at lambda = 1.
    """

    def estimate(self, sample, alpha=1.0):
        return power_transform.estimate_lambda(sample, alpha)

    def estimate_groups(self, h, alpha=1.0):
        return power_transform.estimate_lambdas(h, alpha)


class GridSearchLambdaEstimator(BaseLambdaEstimator):
    """
    Brute-force argmin of the exact NLL over an evenly spaced grid.

    Used as the accuracy oracle for the one-step estimate; ``alpha`` attenuates
    the distance from 1 the same way it does for the Newton step.
    """

    def __init__(self, lower=power_transform.GRID_LOWER, upper=power_transform.GRID_UPPER,
                 step=power_transform.GRID_STEP):
        assert lower < upper, '`lower` should be below `upper`'
        assert step > 0, '`step` should be positive'
        self.lower = lower
        self.upper = upper
        self.step = step

    def estimate(self, sample, alpha=1.0):
        l0, d1, d2 = power_transform.nll_quadratic(sample)
        best, _ = power_transform.grid_search_lambda(sample, self.lower, self.upper, self.step)
        alpha = float(alpha)
        return power_transform.LambdaEstimate(lambda_hat=1.0 + alpha * (best - 1.0), nll_at_1=l0,
                                              d1=d1, d2=d2, clamped=False, alpha_used=alpha)

    def estimate_groups(self, h, alpha=1.0):
        h = np.atleast_2d(h)
        best = np.array([power_transform.grid_search_lambda(row, self.lower, self.upper, self.step)[0]
                         for row in h])
        return 1.0 + float(alpha) * (best - 1.0), np.zeros(best.shape, dtype=bool)
