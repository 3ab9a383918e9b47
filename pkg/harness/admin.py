from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['command', 'variant', 'status', 'seed', 'exit_code', 'created_at']
    list_filter = ['command', 'status', 'variant', 'created_at']
    search_fields = ['output_dir', 'error_message']
    readonly_fields = ['config', 'summary', 'exit_code', 'started_at', 'completed_at',
                       'created_at', 'updated_at']
    fieldsets = (
        ('Lauf', {
            'fields': ('command', 'variant', 'status', 'seed', 'output_dir')
        }),
        ('Konfiguration', {
            'fields': ('config',)
        }),
        ('Ergebnisse', {
            'fields': ('summary', 'exit_code', 'error_message')
        }),
        ('Zeitstempel', {
            'fields': ('started_at', 'completed_at', 'created_at', 'updated_at')
        }),
    )
