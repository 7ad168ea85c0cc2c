from django.apps import AppConfig


class FlEngineConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'fl_engine'
    verbose_name = 'Federation engine'
