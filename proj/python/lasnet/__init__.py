"""Lightweight stereo matching: inference, metrics, synthetic data and I/O."""

from ._core import (
    ConfigError,
    CorruptFileError,
    Error,
    IoError,
    NetworkConfig,
    ShapeError,
    VersionError,
    WeightStore,
    bad_x,
    d1,
    epe,
    forward,
    gen_synthetic,
    macs,
    read_pfm,
    read_png,
    write_pfm,
    write_png,
)

__all__ = [
    "ConfigError",
    "CorruptFileError",
    "Error",
    "IoError",
    "NetworkConfig",
    "ShapeError",
    "VersionError",
    "WeightStore",
    "bad_x",
    "d1",
    "epe",
    "forward",
    "gen_synthetic",
    "macs",
    "read_pfm",
    "read_png",
    "write_pfm",
    "write_png",
]
