"""Group-robust knowledge distillation for small classifiers.

Trains a student classifier against a frozen teacher while a simplex
weight vector over data groups shifts attention toward groups where the
student currently performs worst, improving worst-group accuracy under
sub-population shift. Includes plain group-robust training and vanilla
distillation baselines, a synthetic shifted-group benchmark, and a
multi-seed comparison harness.
"""

from .data import (
    Dataset,
    GroupShiftSpec,
    LabeledBatch,
    draw_domain,
    generate,
    load_dataset,
    sample_domain_batch,
    sample_pooled_batch,
    save_dataset,
    split_by_domain,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    ShapeError,
)
from .experiment import (
    ArmConfig,
    ExperimentConfig,
    default_experiment_config,
    load_experiment_config,
    run_experiment,
    run_seed,
    summarize,
)
from .losses import (
    GroupLossVector,
    KdConfig,
    cross_entropy,
    group_distil_loss,
    kd_loss,
    kl_div,
    one_hot,
    softmax_ce,
    softmax_tau,
)
from .network import (
    ForwardCache,
    Matrix,
    MlpParams,
    backward,
    forward,
    grad_check,
    init_mlp,
    params_checksum,
)
from .optim import OptConfig, OptState, adam_step, apply_update, init_opt_state, sgd_step
from .robust_weights import EgConfig, eg_update, init_uniform, snapshot
from .training import (
    Metrics,
    OracleTeacher,
    RunRecord,
    TrainConfig,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    train_erm,
    train_for_method,
    train_group_distil,
    train_group_dro,
    train_kd,
)

__version__ = "0.1.0"
