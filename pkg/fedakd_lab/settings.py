"""
Django settings for the fedakd_lab project.

The project is a batch laboratory: there are no views, only apps holding the
simulation code, management commands that run experiments, and a small
database recording what was run.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    'DJANGO_SECRET_KEY',
    'django-insecure-fedakd-lab-development-key-not-for-deployment',
)

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'data_gen',
    'shift_theory',
    'classifiers',
    'fl_engine',
    'metrics',
    'analysis',
    'experiments',
]


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('FEDAKD_DB_PATH', BASE_DIR / 'fedakd.sqlite3'),
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Default primary key field type

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Tests tagged 'benchmark' are seed-averaged replications; they run only on request
TEST_RUNNER = 'fedakd_lab.test_runner.LabTestRunner'


# Logging

LOG_LEVEL = os.environ.get('FEDAKD_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        app: {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False}
        for app in INSTALLED_APPS
    },
}


# Laboratory configuration
FEDAKD = {
    # Relative --out directories are resolved against this root
    'OUTPUT_ROOT': BASE_DIR / 'runs',
    # Significant digits for floats written to CSV
    'CSV_PRECISION': 17,
    # Thread pool size for client updates when a config does not set one
    'WORKERS': 1,
    # Record each command invocation in the database
    'RECORD_RUNS': True,
}
