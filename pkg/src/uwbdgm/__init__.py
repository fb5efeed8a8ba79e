"""Joint NLOS range-error mitigation and environment identification from UWB waveforms."""

__version__ = "0.1.0"
