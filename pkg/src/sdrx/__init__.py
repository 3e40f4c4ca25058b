"""Streaming receiver DSP for short-reach optical links.

Direct-detection PAM and Kramers-Kronig QAM receiver chains built on
overlap-save block filtering, run buffer by buffer through a multi-lane
pipeline whose lanes hand continuity state to each other.
"""

from .channel import AdcConfig, ChannelConfig, LinkSimulator, SampleBuffer
from .experiments import Link
from .pipeline import PipelineConfig, PipelineFault, run_pipeline, throughput_report
from .signal import Format, Waveform, constellation
from .tx import TxConfig

__version__ = "0.1.0"

__all__ = [
    "AdcConfig",
    "ChannelConfig",
    "Format",
    "Link",
    "LinkSimulator",
    "PipelineConfig",
    "PipelineFault",
    "SampleBuffer",
    "TxConfig",
    "Waveform",
    "constellation",
    "run_pipeline",
    "throughput_report",
]
