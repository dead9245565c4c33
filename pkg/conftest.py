# Test wiring for pytest: mirror tox.ini / tests/manage.py so the Django-based
# suite runs against tests/test_project/settings.py.
import os
import sys

import django

ROOT = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(ROOT, 'tests'))
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'test_project.settings')
os.environ.setdefault('NORMALNORM_THREADS', '1')
django.setup()
