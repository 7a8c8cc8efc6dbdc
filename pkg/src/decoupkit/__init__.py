"""decoupkit: numerics for Renyi entropies, 2-design twirls, decoupling
bounds with explicit exponents, and the protocol constructions built on them.
"""

from .qmat import (
    DensityOp,
    LabeledOperator,
    LabelError,
    PartialIsom,
    PureState,
    SpaceMismatchError,
    SubsystemSpace,
    fidelity,
    mes,
    partial_trace,
    purify,
    space,
    tensor,
    tensor_states,
    trace_norm,
    truncation_isometry,
    xi,
)
from .entropy import (
    CondEntropyResult,
    RenyiParams,
    d_alpha,
    duality_check,
    h_cond,
    renyi_entropy,
    von_neumann_entropy,
    von_neumann_suite,
)
from .channels import (
    ChoiMatrix,
    KrausMap,
    ThetaReport,
    choi,
    compose,
    compressive_map,
    depolarizing_map,
    heisenberg_weyl,
    identity_map,
    is_class1,
    map_from_choi,
    measurement_map,
    randomizing_map,
    t_w_map,
    theta,
    trace_map,
)
from .twirl import (
    McEstimate,
    RngSeed,
    UnitaryEnsemble,
    clifford_qubit,
    haar_unitary,
    mc_average,
    twirl_moment1,
    twirl_moment2,
)
from .decouple import (
    BoundReport,
    CqInstance,
    DecouplingInstance,
    WitnessReport,
    corollary1_search,
    covering_bound,
    hayashi_bounds,
    mc_lhs,
    mc_lhs_cq,
    simultaneous_witness,
    thm1_2_rhs,
    thm1_rhs,
    thm1_rhs_iid,
    zeta_opt,
)
from .protocols import (
    MergeConfig,
    ProtocolResult,
    destroy_run,
    fqsw_run,
    fuchs_vdg_check,
    merge_run,
    schumacher_run,
    uhlmann_extend,
)
from .config import ConfigError, ExperimentConfig, parse_config, serialize_config

__version__ = "0.1.0"
