"""Downstream fine-tuning: task files, metrics, heads and synthetic task generators."""

from .finetune import (FinetuneConfig, FinetuneResult, TaskData, TaskModel, finetune, finetune_seeds,
                       linear_schedule, metric_rows)
from .metrics import (KINDS, Metrics, bio_spans, compute_metrics, entity_f1, micro_f1_labels, repair_bio,
                      token_f1, validate_bio)
from .tasks import Example, TaskSpec, read_examples, write_cls_file, write_conll_file

__all__ = [
    "FinetuneConfig", "FinetuneResult", "TaskData", "TaskModel", "finetune", "finetune_seeds", "linear_schedule",
    "metric_rows", "KINDS", "Metrics", "bio_spans", "compute_metrics", "entity_f1", "micro_f1_labels",
    "repair_bio", "token_f1", "validate_bio", "Example", "TaskSpec", "read_examples", "write_cls_file",
    "write_conll_file",
]
