from django.apps import AppConfig


class HumConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'hum'
    verbose_name = 'Hybrid Uplift Model'
