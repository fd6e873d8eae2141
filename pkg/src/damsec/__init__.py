"""Delay-alignment modulation toolkit for secure wideband ISAC systems."""

__version__ = "0.1.0"

from .channel import (ArrayConfig, ChannelSet, MultipathChannel, PathComponent,
                      ScenarioConfig, array_response, generate_channels,
                      large_scale_gain, spatial_vector)
from .waveform import (PrecoderSet, qpsk_stream, receive_oracle,
                       strongest_path_reference, synthesize_transmit)

__all__ = [
    "ArrayConfig", "ChannelSet", "MultipathChannel", "PathComponent",
    "ScenarioConfig", "array_response", "generate_channels",
    "large_scale_gain", "spatial_vector", "PrecoderSet", "qpsk_stream",
    "receive_oracle", "strongest_path_reference", "synthesize_transmit",
    "__version__",
]
