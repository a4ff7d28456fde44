"""Max-min energy-efficient beamforming for an IRS-aided SWIPT downlink.

The package is organized around the building blocks of the simulator:

- ``model``      physical-layer quantities (effective channels, SINR, power
                 splitting, non-linear energy harvesting, rates, per-user EE)
                 and feasibility checks.
- ``chanfab``    reproducible scenario generation: geometry, path loss,
                 steering vectors, Rician channel realizations.
- ``conic``      a self-contained cone-program solver (zero / nonnegative /
                 second-order / Hermitian-PSD / exponential cones) used by all
                 optimization front-ends.
- ``linz``       convexification toolbox: DC splits, SCA linearizations,
                 phase lifting, spectral-norm MM bound, Frobenius trace bounds.
- ``penalty``    Dinkelbach + SCA beamforming stage and penalty-based phase
                 stage, alternated.
- ``ia``         inner-approximation pipeline: scalar PS-ratio stage and the
                 joint beam/phase program.
- ``bench``      baselines, experiment sweeps, CSV persistence.
"""

from .model import (
    ScenarioConfig,
    ChannelSet,
    Solution,
    effective_channel,
    sinr,
    split_power,
    eh_nonlinear,
    eh_inverse,
    rate_power_ee,
    check_feasibility,
)
from .chanfab import GeometrySpec, FadingSpec, steering_vector, path_loss, sample_channels
from .penalty import ao_loop, dinkelbach_loop
from .ia import ia_loop

__all__ = [
    "ScenarioConfig",
    "ChannelSet",
    "Solution",
    "effective_channel",
    "sinr",
    "split_power",
    "eh_nonlinear",
    "eh_inverse",
    "rate_power_ee",
    "check_feasibility",
    "GeometrySpec",
    "FadingSpec",
    "steering_vector",
    "path_loss",
    "sample_channels",
    "ao_loop",
    "dinkelbach_loop",
    "ia_loop",
]

__version__ = "0.1.0"
