"""Federated-learning crowdsensing framework: campaign server, client
runtime, wire protocol, aggregation, and a deterministic simulation harness."""

from .aggregation import ClientUpdate, EvalResult, fed_avg, weighted_metrics
from .client import ClientCore, ClientSession, DeviceProfile, LocalStore
from .errors import (
    AggregationError,
    ConfigError,
    EvaluationError,
    FloatError,
    InputError,
    ProtocolError,
)
from .model import (
    Hyperparameters,
    LabeledExample,
    ModelSpec,
    ParameterVector,
    forward_loss,
    gradient,
    init_parameters,
    local_train,
    sgd_step,
)
from .protocol import CampaignConfig, ClientTaskConfig, Message, ResourceCriteria, decode, encode
from .server import (
    Campaign,
    CampaignState,
    InProcessBackend,
    RoundReport,
    TcpClientPool,
    evaluate_server,
    run_campaign,
    select_participants,
)
from .sim import DatasetSpec, SweepSpec, partition_iid, run_sweep, synthesize

__version__ = "0.1.0"
