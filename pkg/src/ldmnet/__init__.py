"""Localized differentiable memory networks with activation binning, a
digital loss, algorithmic-task generators, a curriculum training harness,
and computational-state analysis."""

from .analysis import ExpFit, StateCountResult, count_states, fit_exponential
from .autodiff import (Node, Tape, backpropagate, finite_difference_check)
from .binning import (BinSpec, bin_index, bin_value, combined_loss,
                      digital_loss, find_bin_count)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, default_config, dump_config, parse_config
from .model import (LdmModel, LdmRuntimeState, controller_step, head_update,
                    memory_read, memory_write, run, training_graph)
from .tasks import (LengthRange, TaskSample, dyck_oracle, gen_adversarial_sum,
                    gen_binary_sum, gen_copy, gen_dyck, generate)
from .training import (Adam, EvalReport, TrainConfig, TrainResult,
                       baseline_loss, evaluate, train_run)

__version__ = "0.1.0"
