from django.apps import AppConfig


class DdmConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'ddm'
    verbose_name = 'Dynamische Entscheidung'
