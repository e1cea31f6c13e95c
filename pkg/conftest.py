import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'tsgan_lab.settings')
django.setup()
