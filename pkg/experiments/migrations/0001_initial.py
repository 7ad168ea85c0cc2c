# Generated by Django 5.2.4 on 2026-10-17 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('gen_data', 'Generate data'), ('run', 'Run federation'), ('validate_theory', 'Validate theory'), ('analyze', 'Analyze divergence')], max_length=20)),
                ('seed', models.CharField(max_length=20)),
                ('config', models.JSONField(default=dict)),
                ('output_dir', models.CharField(max_length=500)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('undefined_metric', 'Completed with undefined metric'), ('failed', 'Failed')], default='running', max_length=20)),
                ('message', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
                'indexes': [models.Index(fields=['command', 'started_at'], name='experiments_run_command_idx'), models.Index(fields=['status'], name='experiments_run_status_idx')],
            },
        ),
        migrations.CreateModel(
            name='RunSummary',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('algo', models.CharField(max_length=20)),
                ('seed', models.CharField(max_length=20)),
                ('cf', models.FloatField(blank=True, null=True)),
                ('max_acc', models.FloatField()),
                ('avg_acc', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='summaries', to='experiments.experimentrun')),
            ],
            options={
                'unique_together': {('run', 'algo', 'seed')},
            },
        ),
    ]
