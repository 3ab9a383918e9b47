from django.db import models
from django.utils import timezone
from django.utils.translation import gettext_lazy as _


class ExperimentRun(models.Model):
    """Ledger-Eintrag für jeden Aufruf eines Harness-Commands"""

    STATUS_CHOICES = [
        ('pending', _('Wartend')),
        ('running', _('Läuft')),
        ('completed', _('Abgeschlossen')),
        ('failed', _('Fehlgeschlagen')),
    ]

    COMMAND_CHOICES = [
        ('gen-data', _('Daten generieren')),
        ('train', _('Training')),
        ('evaluate', _('Evaluation')),
        ('score', _('Scoring')),
        ('weights-train', _('Gewichtsmodell-Training')),
        ('simulate', _('Simulation')),
    ]

    command = models.CharField(_('Command'), max_length=20, choices=COMMAND_CHOICES)
    variant = models.CharField(_('Variante'), max_length=20, blank=True)
    status = models.CharField(_('Status'), max_length=20, choices=STATUS_CHOICES, default='pending')
    seed = models.IntegerField(_('Seed'), null=True, blank=True)

    config = models.JSONField(
        _('Konfiguration'),
        default=dict,
        blank=True,
        help_text=_('Aufgelöste Konfiguration des Laufs')
    )
    summary = models.JSONField(
        _('Zusammenfassung'),
        default=dict,
        blank=True,
        help_text=_('Kennzahlen und Artefakte des Laufs')
    )
    output_dir = models.CharField(_('Ausgabeverzeichnis'), max_length=500, blank=True)
    exit_code = models.PositiveSmallIntegerField(_('Exit-Code'), null=True, blank=True)
    error_message = models.TextField(_('Fehlermeldung'), blank=True)

    started_at = models.DateTimeField(_('Gestartet um'), null=True, blank=True)
    completed_at = models.DateTimeField(_('Abgeschlossen um'), null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        verbose_name = _('Experiment-Lauf')
        verbose_name_plural = _('Experiment-Läufe')
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.command} - {self.get_status_display()} ({self.created_at.strftime('%d.%m.%Y %H:%M')})"

    @property
    def is_completed(self):
        return self.status == 'completed'

    @property
    def duration_seconds(self):
        if self.started_at and self.completed_at:
            return (self.completed_at - self.started_at).total_seconds()
        return None

    def mark_completed(self, summary: dict, exit_code: int = 0):
        self.status = 'completed'
        self.summary = summary
        self.exit_code = exit_code
        self.completed_at = timezone.now()
        self.save()

    def mark_failed(self, message: str, exit_code: int):
        self.status = 'failed'
        self.error_message = message
        self.exit_code = exit_code
        self.completed_at = timezone.now()
        self.save()
