"""Run the Django test modules under pytest.

Mirrors ``python manage.py test``: Django is configured with the project
settings, a throwaway test database is created for the session, and tests
tagged 'benchmark' are skipped unless ``--benchmark`` is given (the same
default as fedakd_lab.test_runner.LabTestRunner).
"""
import os

import django
import pytest

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'fedakd_lab.settings')
django.setup()


def pytest_addoption(parser):
    parser.addoption('--benchmark', action='store_true', default=False,
                     help="also run tests tagged 'benchmark'")


def pytest_collection_modifyitems(config, items):
    if config.getoption('--benchmark'):
        return
    skip = pytest.mark.skip(reason="tagged 'benchmark'; pass --benchmark to run")
    for item in items:
        test_cls = getattr(item, 'cls', None)
        method = getattr(item, 'obj', None)
        tags = set(getattr(test_cls, 'tags', ()) or ()) | set(getattr(method, 'tags', ()) or ())
        if 'benchmark' in tags:
            item.add_marker(skip)


@pytest.fixture(scope='session', autouse=True)
def _django_test_environment():
    from django.test.utils import setup_databases, setup_test_environment, teardown_databases, teardown_test_environment

    setup_test_environment()
    old_config = setup_databases(verbosity=0, interactive=False)
    yield
    teardown_databases(old_config, verbosity=0)
    teardown_test_environment()
