"""Tasks, ranking, training loops."""

from .loop import (JOINT_MODES, NESTED_GATE_MODES, TrainConfig, TrainResult, apply_nested_gate_mode, evaluate, fit,
                   headline, joint_train, make_optimizer, train_epoch, train_triple_prediction)
from .model import Model, entity_rows, group_queries
from .ranking import RankingReport, metrics, rank, rank_rows
from .tasks import (CATEGORY_ROLES, FILTER_MODES, TASK_KINDS, FilterIndex, TaskSpec, build_queries, filter_key,
                    split_queries)
