"""The 32-electrode montage and the fixed feature-index layout.

Feature vectors concatenate alpha then beta band power across channels:
index = band * 32 + channel, band 0 = alpha, 1 = beta, channels in
``CHANNELS_32`` order.
"""

from __future__ import annotations

CHANNELS_32: tuple[str, ...] = (
    "FP1", "FPz", "FP2", "F7", "F3", "Fz", "F4", "F8",
    "FC5", "FC1", "FC2", "FC6", "M1", "T7", "C3", "Cz",
    "C4", "T8", "M2", "CP5", "CP1", "CP2", "CP6", "P7",
    "P3", "Pz", "P4", "P8", "POz", "O1", "Oz", "O2",
)

N_CHANNELS = len(CHANNELS_32)

ALPHA, BETA = 0, 1
BAND_NAMES = ("alpha", "beta")

# Channels where the paper's subject showed beta increases; used as the
# default modulation targets of the synthetic subject.
DEFAULT_BETA_CHANNELS: tuple[str, ...] = (
    "F3", "F4", "FC1", "FC5", "C3", "Cz", "CP1", "CP2",
)
DEFAULT_ALPHA_CHANNELS: tuple[str, ...] = ("Pz",)


def channel_index(name: str) -> int:
    """Index of a channel label in the montage (case-sensitive)."""
    try:
        return CHANNELS_32.index(name)
    except ValueError:
        raise KeyError(f"unknown channel label: {name!r}") from None


def feature_index(channel: int, band: int) -> int:
    """Flat feature index for (channel, band)."""
    return band * N_CHANNELS + channel


def feature_label(index: int) -> str:
    """Human-readable label, e.g. 'beta:Cz'."""
    band, channel = divmod(index, N_CHANNELS)
    return f"{BAND_NAMES[band]}:{CHANNELS_32[channel]}"
