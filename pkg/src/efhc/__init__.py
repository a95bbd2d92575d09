"""Event-triggered decentralized federated learning over time-varying graphs.

Devices hold local objectives and exchange parameters only when their own
drift crosses a bandwidth-weighted, decaying threshold.  The package provides
the synchronous simulation engine, baseline broadcast policies, transition
matrix construction with certification of the recorded information flow, and
the analysis helpers used to verify convergence behavior.
"""

from .analysis import RateFit, bernoulli_bound_check, fit_rate, plateau_level, tradeoff_table
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import (
    BandwidthProfile,
    IdxFormatError,
    LabeledDataset,
    assign_bandwidths,
    label_partition,
    read_idx,
    synth_quadratic,
)
from .engine import (
    DeviceState,
    IterationEvents,
    MetricsTrace,
    NetworkState,
    RunResult,
    TriggerPolicy,
    aggregate,
    broadcast_trigger,
    iterate,
    run,
    transmission_score,
)
from .learning import (
    ConstantEstimates,
    HingeTask,
    QuadraticTask,
    StepPolicy,
    estimate_constants,
    global_optimum,
    local_grad,
    local_loss,
    step_size,
    stochastic_grad,
)
from .mixing import (
    TriggerVector,
    build_transition,
    consensus_spectral_norm,
    metropolis_weight,
    validate_stochasticity,
    window_product,
)
from .topology import (
    GraphSnapshot,
    InfoFlowLog,
    TopologySchedule,
    certify_B_connectivity,
    compute_window_B,
    gen_rgg,
    is_connected,
    snapshot_at,
    union_graph,
)

__version__ = "0.1.0"
