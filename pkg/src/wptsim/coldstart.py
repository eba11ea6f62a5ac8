"""Cold-start space search: wake a depleted backscatter node.

All slaves first beam at the leader; random per-slave phase perturbations
within +/- sigma then sweep the resulting side lobes through the space
around the leader until the node's incident power crosses its wake
threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    DEFAULT_FREQ_HZ,
    DEFAULT_TX_GAIN_DBI,
    ChannelError,
    MediumMap,
    Position,
    SPEED_OF_LIGHT,
    channel,
)


@dataclass(frozen=True)
class ColdStartConfig:
    sigma_deg: float = 55.0
    search_cube_m: float = 2.0
    voxel_m: float = 0.05
    max_perturbations: int = 200
    wake_power_floor: float = 0.30

    def __post_init__(self):
        if not 0.0 <= self.sigma_deg < 180.0:
            raise ValueError("sigma must lie in [0, 180) degrees")
        if self.search_cube_m <= 0 or self.voxel_m <= 0:
            raise ValueError("cube and voxel sizes must be positive")


def leader_focused_phases(slave_channels) -> np.ndarray:
    """Conjugate phases that combine coherently at the leader position."""
    return np.array([(-c.phase_rad) % (2.0 * math.pi) for c in slave_channels])


def perturbation_round(base_phases, sigma_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Base phases plus independent uniform draws in (-sigma, +sigma)."""
    sigma = math.radians(sigma_deg)
    base = np.asarray(base_phases, dtype=float)
    return (base + rng.uniform(-sigma, sigma, base.size)) % (2.0 * math.pi)


def cube_grid(center: Position, edge_m: float, voxel_m: float) -> np.ndarray:
    """(V, 3) voxel centers of a cube centered on ``center``."""
    half = edge_m / 2.0
    axis = np.arange(-half + voxel_m / 2.0, half, voxel_m)
    gx, gy, gz = np.meshgrid(axis + center.x, axis + center.y, axis + center.z,
                             indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def field_matrix(
    slave_positions,
    points: np.ndarray,
    freq_hz: float = DEFAULT_FREQ_HZ,
    tx_gain_dbi: float = DEFAULT_TX_GAIN_DBI,
    static_phases=None,
    tx_amplitudes=None,
) -> np.ndarray:
    """Complex per-slave field coefficients at each grid point, shape (V, N).

    Free-space propagation: amplitude 1/d law via the free-space loss and
    geometric phase 2 pi d / lambda, plus each slave's static phase offset.
    """
    if points.ndim != 2 or points.shape[1] != 3:
        raise ChannelError("points must be (V, 3)")
    pos = np.array([[p.x, p.y, p.z] for p in slave_positions])
    d = np.linalg.norm(points[:, None, :] - pos[None, :, :], axis=2)
    if np.any(d <= 0):
        raise ChannelError("grid point coincides with a slave antenna")
    wavelength = SPEED_OF_LIGHT / freq_hz
    gain = (wavelength / (4.0 * math.pi * d)) * 10.0 ** (tx_gain_dbi / 20.0)
    phase = 2.0 * math.pi * d / wavelength
    if static_phases is not None:
        phase = phase + np.asarray(static_phases)[None, :]
    g = gain * np.exp(1j * phase)
    if tx_amplitudes is not None:
        g = g * np.asarray(tx_amplitudes)[None, :]
    return g


def coherent_optimum_power(matrix: np.ndarray) -> np.ndarray:
    """Per-point power when every slave combines coherently there."""
    return np.abs(matrix).sum(axis=1) ** 2


def field_power(matrix: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Received power per point for one set of transmit phases."""
    return np.abs(matrix @ np.exp(1j * np.asarray(phases))) ** 2


def field_power_rounds(matrix: np.ndarray, phase_rounds: np.ndarray) -> np.ndarray:
    """Power per point and round; ``phase_rounds`` has shape (R, N)."""
    e = np.exp(1j * np.asarray(phase_rounds)).T  # (N, R)
    return np.abs(matrix @ e) ** 2


@dataclass
class ScanResult:
    scanning_ratio: float
    cumulative_power: np.ndarray     # per-voxel max power over rounds
    optimal_power: np.ndarray        # per-voxel coherent optimum
    ratio_by_round: np.ndarray


def scanning_ratio(
    matrix: np.ndarray,
    base_phases: np.ndarray,
    sigma_deg: float,
    n_perturbations: int,
    rng: np.random.Generator,
    wake_power_floor: float = 0.30,
) -> ScanResult:
    """Fraction of voxels swept above the floor by the perturbed beams.

    Successive rounds accumulate the perturbations, so the beam pattern walks
    away from the leader-focused start and its lobes drift through the cube.
    A voxel counts as scanned once its received power, averaged over two
    consecutive rounds, reaches ``wake_power_floor`` times its own coherent
    optimum; a harvesting node must hold that power across a full
    perturb-and-measure cycle before it can come up, so one-round flickers
    do not count.
    """
    if matrix.size == 0:
        raise ValueError("empty grid")
    opt = coherent_optimum_power(matrix)
    phases = np.asarray(base_phases, dtype=float).copy()
    floor = wake_power_floor * opt
    scanned = np.zeros(matrix.shape[0], dtype=bool)
    cum = np.zeros(matrix.shape[0])
    prev = None
    ratio_by_round = np.empty(n_perturbations + 1)
    for r in range(n_perturbations + 1):
        p = field_power(matrix, phases)
        if prev is not None:
            scanned |= 0.5 * (p + prev) >= floor
        prev = p
        np.maximum(cum, p, out=cum)
        ratio_by_round[r] = scanned.mean()
        phases = perturbation_round(phases, sigma_deg, rng)
    return ScanResult(
        scanning_ratio=float(ratio_by_round[-1]),
        cumulative_power=cum,
        optimal_power=opt,
        ratio_by_round=ratio_by_round,
    )


@dataclass
class ColdStartResult:
    success: bool
    rounds_used: int
    incident_power_w: float


class ColdStartRunner:
    """Round-by-round cold start against explicit node-side channels."""

    def __init__(self, node, leader_channels, node_channels, tx_amplitudes,
                 config: ColdStartConfig, rng: np.random.Generator):
        self.node = node
        self.base_phases = leader_focused_phases(leader_channels)
        self.node_coeffs = np.array([c.complex for c in node_channels])
        self.tx_amplitudes = np.asarray(tx_amplitudes, dtype=float)
        self.config = config
        self.rng = rng

    def incident_power_w(self, phases: np.ndarray) -> float:
        field = np.sum(self.tx_amplitudes * self.node_coeffs * np.exp(1j * phases))
        return float(np.abs(field) ** 2)

    def run(self) -> ColdStartResult:
        # Round 0 is the unperturbed leader-focused beam; later rounds keep
        # perturbing the previous phases so the lobes walk through space.
        phases = self.base_phases.copy()
        power = self.incident_power_w(phases)
        self.node.harvest_step(power)
        if self.node.awake:
            return ColdStartResult(True, 0, power)
        for rnd in range(1, self.config.max_perturbations + 1):
            phases = perturbation_round(phases, self.config.sigma_deg, self.rng)
            power = self.incident_power_w(phases)
            self.node.harvest_step(power)
            if self.node.awake:
                return ColdStartResult(True, rnd, power)
        return ColdStartResult(False, self.config.max_perturbations, power)


def export_heatmap(points: np.ndarray, power_w: np.ndarray, path) -> None:
    """CSV export: x_m, y_m, z_m, power_w."""
    data = np.column_stack([points, power_w])
    np.savetxt(path, data, delimiter=",", header="x_m,y_m,z_m,power_w", comments="")
