import importlib
import json
import os

from django.conf import settings

from normalnorm.exceptions import DataFormatError

DEFAULT_LAMBDA_ESTIMATOR = 'normalnorm.services.NewtonStepLambdaEstimator'
DEFAULT_OUTPUT_DIR = 'normalnorm-out'


def get_setting(name, default=None):
    """
    Read a Django setting, falling back to ``default`` when normalnorm is used
    outside a configured Django project.
    """
    if not settings.configured:
        return default
    return getattr(settings, name, default)


def perform_import(val, setting_name):
    """
    If the given setting is a string import notation,
    then perform the necessary import; classes pass through unchanged.
    Credits: https://github.com/tomchristie/django-rest-framework/blob/master/rest_framework/settings.py#L138
    """
    if val is None:
        return None
    elif isinstance(val, str):
        return import_from_string(val, setting_name)
    return val


def import_from_string(val, setting_name):
    """
    Attempt to import a class from a string representation.
    """
    try:
        parts = val.split('.')
        module_path, class_name = '.'.join(parts[:-1]), parts[-1]
        module = importlib.import_module(module_path)
        return getattr(module, class_name)
    except (ImportError, AttributeError, ValueError) as e:
        raise ImportError('Could not import {} for setting {}. {}: {}.'
                          .format(val, setting_name, e.__class__.__name__, e))


def get_estimator():
    """
    Returns the configured lambda estimator service.
    """
    Estimator = get_setting('NORMALNORM_LAMBDA_ESTIMATOR', DEFAULT_LAMBDA_ESTIMATOR)
    return perform_import(Estimator, 'NORMALNORM_LAMBDA_ESTIMATOR')()


def get_thread_limit():
    """
    Thread cap from the ``NORMALNORM_THREADS`` environment variable, else the setting of the same name.
    """
    value = os.environ.get('NORMALNORM_THREADS') or get_setting('NORMALNORM_THREADS')
    if value in (None, ''):
        return None
    limit = int(value)
    assert limit > 0, '`NORMALNORM_THREADS` should be a positive integer'
    return limit


def get_output_dir():
    return get_setting('NORMALNORM_OUTPUT_DIR', DEFAULT_OUTPUT_DIR)


def resolve_run_config(defaults, config_file=None, overrides=None):
    """
    Merge command defaults, an optional JSON config file and explicit flags, in
    that order of precedence. ``None`` flag values count as not given.
    """
    resolved = dict(defaults)
    if config_file:
        try:
            with open(config_file) as f:
                from_file = json.load(f)
        except FileNotFoundError:
            raise DataFormatError('config file {} does not exist'.format(config_file))
        except ValueError as e:
            raise DataFormatError('config file {} is not valid JSON: {}'.format(config_file, e))
        if not isinstance(from_file, dict):
            raise DataFormatError('config file {} must hold a JSON object'.format(config_file))
        unknown = sorted(set(from_file) - set(defaults))
        if unknown:
            raise DataFormatError('unknown config keys in {}: {}'.format(config_file, ', '.join(unknown)))
        resolved.update(from_file)
    for key, value in (overrides or {}).items():
        if key in defaults and value is not None:
            resolved[key] = value
    return resolved


def write_json(path, data):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
