from django.db import models


class ExperimentRun(models.Model):
    """One invocation of a lab command"""

    class Command(models.TextChoices):
        GEN_DATA = 'gen_data', 'Generate data'
        RUN = 'run', 'Run federation'
        VALIDATE_THEORY = 'validate_theory', 'Validate theory'
        ANALYZE = 'analyze', 'Analyze divergence'

    class Status(models.TextChoices):
        RUNNING = 'running', 'Running'
        COMPLETED = 'completed', 'Completed'
        UNDEFINED_METRIC = 'undefined_metric', 'Completed with undefined metric'
        FAILED = 'failed', 'Failed'

    command = models.CharField(max_length=20, choices=Command.choices)
    seed = models.CharField(max_length=20)  # U64 does not fit a signed 64-bit column
    config = models.JSONField(default=dict)
    output_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=20, choices=Status.choices, default=Status.RUNNING)
    message = models.TextField(blank=True)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(blank=True, null=True)

    class Meta:
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['command', 'started_at'], name='experiments_run_command_idx'),
            models.Index(fields=['status'], name='experiments_run_status_idx'),
        ]

    def __str__(self):
        return f"{self.command} seed={self.seed} ({self.status})"


class RunSummary(models.Model):
    """Fairness and accuracy of one algorithm in one repetition"""
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='summaries')
    algo = models.CharField(max_length=20)
    seed = models.CharField(max_length=20)
    cf = models.FloatField(blank=True, null=True)  # null when the correlation is undefined
    max_acc = models.FloatField()
    avg_acc = models.FloatField()

    class Meta:
        unique_together = ['run', 'algo', 'seed']

    def __str__(self):
        return f"{self.algo} seed={self.seed}: cf={self.cf}"
