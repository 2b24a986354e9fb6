from .baseline import BaselineResult, thermostat_baseline
from .channel import LossyChannel
from .draws import DrawProfileModel, DrawSet, generate_draws, rate_curve
from .loop import Fleet, RunLog, build_fleet, run_closed_loop
from .metrics import metrics, normed_deviation
from .wind import WindTraces, generate_wind

__all__ = [
    "BaselineResult", "thermostat_baseline", "LossyChannel", "DrawProfileModel", "DrawSet",
    "generate_draws", "rate_curve", "Fleet", "RunLog", "build_fleet", "run_closed_loop",
    "metrics", "normed_deviation", "WindTraces", "generate_wind",
]
