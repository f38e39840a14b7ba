from .base import Environment
from .random import random_cmdp
from .rover import (
    RoverConfig,
    default_rover_config,
    generate_rover_layout,
    parse_layout,
    rover_build,
    rover_env,
    rover_reference_policies,
    rover_restart_dist,
    shortest_path_policy,
)
from .torque import TorqueToyConfig, torque_toy_build, torque_toy_env, torque_toy_optimum
