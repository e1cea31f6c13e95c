# tsgan_lab/celery.py
import os

from celery import Celery

# Set the default Django settings module for the 'celery' program.
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'tsgan_lab.settings')

app = Celery('tsgan_lab')
app.config_from_object('django.conf:settings', namespace='CELERY')
# Picks up synthesis/tasks.py (the minibatch-discrimination sweep).
app.autodiscover_tasks()
