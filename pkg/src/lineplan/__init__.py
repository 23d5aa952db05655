"""Line planning with service-dependent demand."""
from .instance import (
    Achievable,
    CostParameters,
    Edge,
    HeadwayProfile,
    Instance,
    InstanceError,
    Line,
    ODPair,
    PublicTransportNetwork,
    Stop,
    ThresholdRule,
    VehicleType,
    achievable_headway,
    make_line,
    next_smaller_headway,
    vehicles_required,
)
from .cgn import ChangeAndGoNetwork, build_cgn
from .paths import PassengerPath, PathSet, generate_paths, restrict_paths
from .milp import LppSolution, ModelOptions, build_model, solve, solve_direct

__version__ = "0.1.0"
