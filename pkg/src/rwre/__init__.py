"""Random walks in random environments seen from the particle.

Modules: ``env_model`` (environments, translations, assumption checks),
``pvp_core`` (the interval skew-product map and its coding), ``evp_exact``
(torus linear algebra), ``mc_stats`` (ensembles and estimators), ``cli``.
"""

from .env_model import (
    ColumnAB,
    Environment,
    JumpDistribution,
    Periodic,
    SeededIID,
    dist_at,
    local_drift,
    shift,
    simple_random_walk,
)
from .pvp_core import (
    PvpState,
    Trajectory,
    build_partition,
    cylinder_log_measure,
    decode_trajectory,
    encode_trajectory,
    iterate,
    locate,
    phi,
    step,
)

__all__ = [
    "ColumnAB", "Environment", "JumpDistribution", "Periodic", "SeededIID", "dist_at", "local_drift", "shift",
    "simple_random_walk", "PvpState", "Trajectory", "build_partition", "cylinder_log_measure", "decode_trajectory",
    "encode_trajectory", "iterate", "locate", "phi", "step",
]
