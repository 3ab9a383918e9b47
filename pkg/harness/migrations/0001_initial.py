# Generated by Django 5.2.5 on 2026-10-18 10:00

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "command",
                    models.CharField(
                        choices=[
                            ("gen-data", "Daten generieren"),
                            ("train", "Training"),
                            ("evaluate", "Evaluation"),
                            ("score", "Scoring"),
                            ("weights-train", "Gewichtsmodell-Training"),
                            ("simulate", "Simulation"),
                        ],
                        max_length=20,
                        verbose_name="Command",
                    ),
                ),
                (
                    "variant",
                    models.CharField(blank=True, max_length=20, verbose_name="Variante"),
                ),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("pending", "Wartend"),
                            ("running", "Läuft"),
                            ("completed", "Abgeschlossen"),
                            ("failed", "Fehlgeschlagen"),
                        ],
                        default="pending",
                        max_length=20,
                        verbose_name="Status",
                    ),
                ),
                (
                    "seed",
                    models.IntegerField(blank=True, null=True, verbose_name="Seed"),
                ),
                (
                    "config",
                    models.JSONField(
                        blank=True,
                        default=dict,
                        help_text="Aufgelöste Konfiguration des Laufs",
                        verbose_name="Konfiguration",
                    ),
                ),
                (
                    "summary",
                    models.JSONField(
                        blank=True,
                        default=dict,
                        help_text="Kennzahlen und Artefakte des Laufs",
                        verbose_name="Zusammenfassung",
                    ),
                ),
                (
                    "output_dir",
                    models.CharField(blank=True, max_length=500, verbose_name="Ausgabeverzeichnis"),
                ),
                (
                    "exit_code",
                    models.PositiveSmallIntegerField(blank=True, null=True, verbose_name="Exit-Code"),
                ),
                (
                    "error_message",
                    models.TextField(blank=True, verbose_name="Fehlermeldung"),
                ),
                (
                    "started_at",
                    models.DateTimeField(blank=True, null=True, verbose_name="Gestartet um"),
                ),
                (
                    "completed_at",
                    models.DateTimeField(blank=True, null=True, verbose_name="Abgeschlossen um"),
                ),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
            ],
            options={
                "verbose_name": "Experiment-Lauf",
                "verbose_name_plural": "Experiment-Läufe",
                "ordering": ["-created_at"],
            },
        ),
    ]
