from django.apps import AppConfig


class ShiftTheoryConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'shift_theory'
    verbose_name = 'Covariate shift quantification'
