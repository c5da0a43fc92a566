"""Amplification exoskeleton toolkit: plants, robust PI design, simulation and identification."""

__version__ = "0.1.0"

from .control import (  # noqa: E402
    AGGRESSIVE,
    ROBUST,
    AmplifierConfig,
    EnsembleSpec,
    ensemble_sweep,
    expected_amplification,
    make_amplification_controller,
    margins,
    open_loop,
)
from .lti import Polynomial, TransferFunction, tf_eval, tf_feedback, tf_parallel, tf_series  # noqa: E402
from .plant import (  # noqa: E402
    TESTBED_ACTUATOR,
    ActuatorParams,
    ExoParams,
    HumanParams,
    SpringLoopConfig,
    amplification_plant,
    force_plant_dob,
    reflect_to_linear,
)

__all__ = [
    "__version__",
    "AGGRESSIVE",
    "ROBUST",
    "AmplifierConfig",
    "EnsembleSpec",
    "ensemble_sweep",
    "expected_amplification",
    "make_amplification_controller",
    "margins",
    "open_loop",
    "Polynomial",
    "TransferFunction",
    "tf_eval",
    "tf_feedback",
    "tf_parallel",
    "tf_series",
    "TESTBED_ACTUATOR",
    "ActuatorParams",
    "ExoParams",
    "HumanParams",
    "SpringLoopConfig",
    "amplification_plant",
    "force_plant_dob",
    "reflect_to_linear",
]
