from .io import dump_policy, load_policy, metrics_to_csv, read_metrics_csv, read_policy, write_policy
from .policies import DenseSoftmaxPolicy, SoftmaxPolicy, softmax
from .training import (
    MetricsRow,
    TrainConfig,
    TrainConfigError,
    TrainRun,
    lagrange_mc_train,
    rcpo_train,
    reward_shaping_train,
)
from .updates import (
    CriticTable,
    LagrangeState,
    critic_regression_update,
    critic_td_update,
    gae_advantages,
    lambda_update,
    policy_gradient_step,
)
