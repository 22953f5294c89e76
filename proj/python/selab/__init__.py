"""Speech enhancement toolkit: SEB1 embedding files, STFT, metrics and lag analysis."""

from ._core import (
    SEB_VERSION,
    ConfigError,
    FormatError,
    IoError,
    SelabError,
    ShapeError,
    box_stats,
    decode_seb,
    encode_seb,
    enhance,
    frame_count,
    istft,
    lag_correlation,
    lag_distance,
    load_embeddings,
    manifest_stems,
    save_embeddings,
    sisdr,
    stft,
    stoi,
)

__version__ = "0.1.0"

__all__ = [
    "SEB_VERSION",
    "ConfigError",
    "FormatError",
    "IoError",
    "SelabError",
    "ShapeError",
    "box_stats",
    "decode_seb",
    "encode_seb",
    "enhance",
    "frame_count",
    "istft",
    "lag_correlation",
    "lag_distance",
    "load_embeddings",
    "manifest_stems",
    "save_embeddings",
    "sisdr",
    "stft",
    "stoi",
]
