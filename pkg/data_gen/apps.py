from django.apps import AppConfig


class DataGenConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'data_gen'
    verbose_name = 'Federated data generation'
