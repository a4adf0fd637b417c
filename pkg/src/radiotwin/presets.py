"""Built-in 4G / 5G / 6G system presets."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SystemPreset:
    name: str
    carrier_frequency_hz: float
    bandwidth_hz: float
    array_rows: int  # vertical element count M_v
    array_cols: int  # horizontal element count M_h
    codebook_size: int
    tx_power_per_cell_dbm: float
    tx_power_per_subcarrier_dbm: float
    subcarrier_count: int
    noise_power_per_subcarrier_dbm: float

    @property
    def wavelength_m(self) -> float:
        from .materials import SPEED_OF_LIGHT

        return SPEED_OF_LIGHT / self.carrier_frequency_hz


PRESETS: dict[str, SystemPreset] = {
    "4G": SystemPreset(
        name="4G",
        carrier_frequency_hz=2.0e9,
        bandwidth_hz=20e6,
        array_rows=2,
        array_cols=2,
        codebook_size=4,
        tx_power_per_cell_dbm=43.0,
        tx_power_per_subcarrier_dbm=12.2,
        subcarrier_count=1200,
        noise_power_per_subcarrier_dbm=-132.0,
    ),
    "5G": SystemPreset(
        name="5G",
        carrier_frequency_hz=3.5e9,
        bandwidth_hz=100e6,
        array_rows=4,
        array_cols=8,
        codebook_size=32,
        tx_power_per_cell_dbm=49.0,
        tx_power_per_subcarrier_dbm=13.85,
        subcarrier_count=3276,
        noise_power_per_subcarrier_dbm=-129.0,
    ),
    "6G": SystemPreset(
        name="6G",
        carrier_frequency_hz=10.0e9,
        bandwidth_hz=200e6,
        array_rows=4,
        array_cols=16,
        codebook_size=64,
        tx_power_per_cell_dbm=44.0,
        tx_power_per_subcarrier_dbm=8.85,
        subcarrier_count=3276,
        noise_power_per_subcarrier_dbm=-126.0,
    ),
}


def get_preset(name: str) -> SystemPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
