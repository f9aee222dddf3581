"""rownav: synthetic row-crop fields, waypoint-map coding, coverage path
planning, and a closed-loop navigation simulator."""

__version__ = "0.1.0"

from .field import FieldSpec, FieldWorld, OccupancyGrid, generate_field
from .metrics import RunMetrics, trajectory_errors
from .planner import GlobalPath, OrderedWaypoints, build_global_path, \
    cluster_and_order, estimate_row_orientation
from .rowctl import RowController, VelocityCommand
from .sim import MissionResult, SimConfig, run_mission
from .waymap import WaypointMap, average_precision, decode_waypoint_map, \
    encode_waypoint_map, perturb_map

__all__ = [
    "FieldSpec", "FieldWorld", "OccupancyGrid", "generate_field",
    "RunMetrics", "trajectory_errors",
    "GlobalPath", "OrderedWaypoints", "build_global_path",
    "cluster_and_order", "estimate_row_orientation",
    "RowController", "VelocityCommand",
    "MissionResult", "SimConfig", "run_mission",
    "WaypointMap", "average_precision", "decode_waypoint_map",
    "encode_waypoint_map", "perturb_map",
    "__version__",
]
