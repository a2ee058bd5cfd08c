"""Deception-based anti-jamming: oracles, analytic bounds, learners and a slot simulator."""

from .errors import (ConfigurationError, DecoyJamError, DegenerateChannelError, DomainError,
                     NumericalError)
from .jammer import JammerState, react
from .model import (Allocation, ChannelState, ScenarioConfig, SlotOutcome, draw_channels,
                    interference_free, make_rng, power_levels, sensed_spectrum, trp_at_ap,
                    upsilon_top)

__version__ = "0.1.0"
