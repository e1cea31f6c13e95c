"""
Django settings for the tsgan_lab project.

The project has no web surface: Django hosts the management commands
(datagen, ingest, train, synth, eval, attack), the run-config serializers and
the Celery app used to fan out training sweeps.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Base directory of the project.
BASE_DIR = Path(__file__).resolve().parent.parent
# Loads environment variables from the .env file.
load_dotenv(os.path.join(BASE_DIR, ".env"))

# ==============================================================================
# CORE DJANGO SETTINGS
# ==============================================================================

SECRET_KEY = os.getenv('SECRET_KEY', 'tsgan-lab-local-only')
DEBUG = os.getenv('DEBUG', 'false').lower() == 'true'
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'rest_framework',
    'synthesis',  # Operator commands, run configs and sweep tasks.
]

# --- DATABASE CONFIGURATION ---
# Nothing is persisted in a database; sqlite keeps Django's checks satisfied.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

# --- INTERNATIONALIZATION ---
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ==============================================================================
# DJANGO REST FRAMEWORK (DRF) CONFIGURATION
# ==============================================================================
# Serializers validate JSON run configs only; no API is served.
REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [],
    'UNAUTHENTICATED_USER': None,
}

# ==============================================================================
# TIME-SERIES GAN LAB
# ==============================================================================

# Default parent directory for command outputs when --out is not given.
TSGAN_ARTIFACT_ROOT = Path(os.getenv('TSGAN_ARTIFACT_ROOT', BASE_DIR / 'artifacts'))
# Parallel sweep members (Celery worker concurrency).
TSGAN_WORKERS = int(os.getenv('TSGAN_WORKERS', '1'))
TSGAN_LOG_LEVEL = os.getenv('TSGAN_LOG_LEVEL', 'INFO').upper()
# Fallback when `git describe` is unavailable.
TSGAN_VERSION = os.getenv('TSGAN_VERSION', '0.1.0')

# ==============================================================================
# LOGGING CONFIGURATION
# ==============================================================================
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {'format': '%(asctime)s %(levelname)s %(name)s %(message)s'},
    },
    'handlers': {
        'console': {'class': 'logging.StreamHandler', 'formatter': 'plain'},
    },
    'loggers': {
        'apps': {'handlers': ['console'], 'level': TSGAN_LOG_LEVEL, 'propagate': False},
        'synthesis': {'handlers': ['console'], 'level': TSGAN_LOG_LEVEL, 'propagate': False},
    },
}

# --- CELERY CONFIGURATION ---
# The in-memory broker runs sweeps inline; point it at Redis to fan out.
CELERY_BROKER_URL = os.getenv('CELERY_BROKER_URL', 'memory://')
CELERY_RESULT_BACKEND = os.getenv('CELERY_RESULT_BACKEND', 'cache+memory://')
CELERY_TASK_ALWAYS_EAGER = CELERY_BROKER_URL.startswith('memory://')
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_WORKER_CONCURRENCY = TSGAN_WORKERS
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
