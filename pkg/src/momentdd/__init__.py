"""Moment-cancelling dynamical decoupling: Pauli algebra, pulse schedules,
sequence generation, open-system simulation and scaling analysis."""

from importlib.metadata import PackageNotFoundError, version

from .pauli import (
    SINGLE_QUBIT_GROUP,
    DecouplingGroup,
    PauliString,
    character_table,
    pauli_product,
    sign_character,
    verify_decoupling_group,
)
from .schedule import (
    PulseSchedule,
    ScheduleError,
    SchemaError,
    compile_pulses,
    moments,
    pulse_count,
    switching_profile,
    verify_order,
)
from .generators import (
    OptimizerConfig,
    optimize_schedule,
    qdd_schedule,
    table_s1_schedule,
    udd_schedule,
    xy4_schedule,
)
from .dynamics import QuantumNoiseModel, evolve, reduced_error, sample_model

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
