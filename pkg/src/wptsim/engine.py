"""Scenario orchestration: sync, cold start, alignment, mobility, metrics.

A scenario owns the geometry, medium, chirp parameters and seed; running it
executes the full pipeline and accumulates power-percentage, round-count and
heatmap metrics, optionally alongside a random-phase incoherent baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import coldstart as cs
from .backscatter import BackscatterNode, TransferCurve
from .beamform import BoundSchedule, KalmanSmoother, OneBitAligner, compute_bound_schedule
from .channel import (
    DEFAULT_FREQ_HZ,
    DEFAULT_TX_GAIN_DBI,
    DEFAULT_TX_POWER_DBM,
    ChannelError,
    MediumMap,
    Position,
    channel,
    dbm_to_watt,
)
from .chirp import ChirpParams, ComplexSignal, awgn, generate_chirp, p_ccs0
from .sync import run_sync


class EngineError(ValueError):
    pass


@dataclass
class SyncSettings:
    enabled: bool = True
    offset_range: int = 8000          # initial clock offsets, samples
    residual_jitter: int = 60         # post-coarse processing-delay spread
    fine_window_symbols: int = 64


@dataclass
class Scenario:
    slave_positions: list
    leader_position: Position
    node_position: Position
    medium: MediumMap = field(default_factory=MediumMap)
    chirp: ChirpParams = field(default_factory=ChirpParams)
    seed: int = 0
    tx_power_dbm: float = DEFAULT_TX_POWER_DBM
    tx_gain_dbi: float = DEFAULT_TX_GAIN_DBI
    freq_hz: float = DEFAULT_FREQ_HZ
    noise_floor_dbm: float | None = -70.0
    rounds: int = 300
    bound: object = "adaptive"        # "adaptive", or a fixed bound in degrees
    baseline: str = "none"            # "none" | "random_phase"
    trajectory: list = field(default_factory=list)  # [(time_s, Position), ...]
    feedback_latency_s: float = 1e-3
    sync: SyncSettings = field(default_factory=SyncSettings)
    cold_start: cs.ColdStartConfig = field(default_factory=cs.ColdStartConfig)
    transfer_curve: TransferCurve = field(default_factory=TransferCurve)
    wake_threshold_dbm: float = -20.0
    measurement: str = "signal"       # "signal" | "ideal"
    deadband_frac: float = 0.001
    cold_start_enabled: bool = True   # off: node starts awake (bench mode)

    def __post_init__(self):
        if len(self.slave_positions) < 1:
            raise EngineError("need at least one slave")
        times = [t for t, _ in self.trajectory]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise EngineError("trajectory times must be strictly increasing")

    @property
    def n_slaves(self) -> int:
        return len(self.slave_positions)

    @property
    def round_time_s(self) -> float:
        return self.chirp.symbol_time_s + self.feedback_latency_s

    @property
    def tx_amplitude(self) -> float:
        return math.sqrt(dbm_to_watt(self.tx_power_dbm))


@dataclass
class Metrics:
    power_percentage: float = 0.0
    baseline_power_percentage: float | None = None
    rounds_to_converge: int = -1
    sync_residuals: list = field(default_factory=list)
    sync_rounds: list = field(default_factory=list)
    sync_failed: bool = False
    cold_start_success: bool = False
    cold_start_rounds: int = -1
    power_trace: list = field(default_factory=list)       # achieved amplitude fraction
    baseline_trace: list = field(default_factory=list)
    metric_trace: list = field(default_factory=list)      # (round, y_raw, y_smoothed, phi_deg)
    stage_log: list = field(default_factory=list)
    final_phases: list = field(default_factory=list)
    optimal_amplitude_v: float = 0.0
    total_radiated_power_w: float = 0.0

    def to_json(self) -> str:
        doc = asdict(self)
        return json.dumps(doc, sort_keys=True, indent=1)


def node_position_at(trajectory, t: float) -> Position:
    """Piecewise-linear interpolation of the node trajectory."""
    if not trajectory:
        raise EngineError("empty trajectory")
    times = [w[0] for w in trajectory]
    if t < times[0] or t > times[-1]:
        raise EngineError("time outside trajectory span")
    for (t0, p0), (t1, p1) in zip(trajectory, trajectory[1:]):
        if t0 <= t <= t1:
            a = (t - t0) / (t1 - t0)
            return Position(
                p0.x + a * (p1.x - p0.x),
                p0.y + a * (p1.y - p0.y),
                p0.z + a * (p1.z - p0.z),
            )
    return trajectory[-1][1]


class _Channels:
    """Per-round channel coefficients; static phases drawn once per run."""

    def __init__(self, scn: Scenario, static_phases: np.ndarray):
        self.scn = scn
        self.static_phases = static_phases

    def to_node(self, node_pos: Position) -> np.ndarray:
        scn = self.scn
        out = np.empty(scn.n_slaves, dtype=np.complex128)
        for i, sp in enumerate(scn.slave_positions):
            c = channel(sp, node_pos, scn.medium, scn.freq_hz, scn.tx_gain_dbi,
                        static_phase_rad=self.static_phases[i], inbound=True)
            out[i] = c.complex
        return out

    def to_leader(self) -> list:
        scn = self.scn
        return [
            channel(sp, scn.leader_position, MediumMap(), scn.freq_hz, scn.tx_gain_dbi,
                    static_phase_rad=self.static_phases[i], inbound=True)
            for i, sp in enumerate(scn.slave_positions)
        ]

    def node_to_leader(self, node_pos: Position) -> complex:
        scn = self.scn
        c = channel(node_pos, scn.leader_position, scn.medium, scn.freq_hz,
                    tx_gain_dbi=0.0, inbound=False)
        return c.complex


def optimal_amplitude(scn: Scenario, node_coeffs=None) -> float:
    """Sum of per-slave lone amplitudes at the node (the coherent optimum)."""
    if node_coeffs is None:
        rng = np.random.default_rng(scn.seed)
        static = rng.uniform(0.0, 2.0 * math.pi, scn.n_slaves)
        node_coeffs = _Channels(scn, static).to_node(scn.node_position)
    return float(scn.tx_amplitude * np.abs(np.asarray(node_coeffs)).sum())


def _bound_for(scn: Scenario):
    if scn.bound == "adaptive":
        if scn.n_slaves < 2:
            return lambda n: math.radians(30.0)
        return compute_bound_schedule(scn.n_slaves, scn.transfer_curve, horizon=scn.rounds)
    return lambda n, b=math.radians(float(scn.bound)): b


def run_scenario(scn: Scenario) -> Metrics:
    rng = np.random.default_rng(scn.seed)
    metrics = Metrics()
    static = rng.uniform(0.0, 2.0 * math.pi, scn.n_slaves)
    chans = _Channels(scn, static)

    node = BackscatterNode(
        position=scn.node_position,
        wake_threshold_dbm=scn.wake_threshold_dbm,
        transfer_curve=scn.transfer_curve,
    )

    # --- stage 1: chirp synchronization -----------------------------------
    if scn.sync.enabled and scn.n_slaves >= 2:
        metrics.stage_log.append("sync")
        offsets = rng.integers(0, scn.sync.offset_range + 1, scn.n_slaves)
        noise_power = 0.0
        if scn.noise_floor_dbm is not None:
            noise_power = dbm_to_watt(scn.noise_floor_dbm) * (
                scn.chirp.sample_rate_hz / scn.chirp.bandwidth_hz
            )
        try:
            res = run_sync(
                offsets, scn.chirp, rng,
                noise_power=noise_power,
                residual_jitter=scn.sync.residual_jitter,
                fine_window_symbols=scn.sync.fine_window_symbols,
            )
            metrics.sync_residuals = [int(r) for r in res.residual_offsets]
            metrics.sync_rounds = [int(r) for r in res.rounds_per_period]
        except Exception:
            metrics.sync_failed = True
            return metrics

    # --- stage 2: cold start ----------------------------------------------
    node_coeffs = chans.to_node(scn.node_position)
    amps = np.full(scn.n_slaves, scn.tx_amplitude)
    if scn.cold_start_enabled:
        metrics.stage_log.append("cold_start")
        runner = cs.ColdStartRunner(
            node,
            leader_channels=chans.to_leader(),
            node_channels=[_Coeff(c) for c in node_coeffs],
            tx_amplitudes=amps,
            config=scn.cold_start,
            rng=rng,
        )
        cs_res = runner.run()
        metrics.cold_start_success = cs_res.success
        metrics.cold_start_rounds = cs_res.rounds_used
        if not cs_res.success:
            return metrics
    else:
        # Bench mode: node is externally primed and never browns out.
        node.awake = True
        node.dynamic_power_draw_w = 0.0
        metrics.cold_start_success = True
        metrics.cold_start_rounds = 0

    # --- stage 3: one-bit alignment ---------------------------------------
    metrics.stage_log.append("alignment")
    opt_amp = optimal_amplitude(scn, node_coeffs)
    metrics.optimal_amplitude_v = opt_amp
    metrics.total_radiated_power_w = float(np.sum(amps ** 2))

    bound = _bound_for(scn)
    smoother = KalmanSmoother() if scn.measurement == "signal" else None
    aligner = OneBitAligner(scn.n_slaves, rng, bound, smoother=smoother,
                            deadband_frac=scn.deadband_frac)

    ref_sym = generate_chirp(scn.chirp)
    t = np.arange(scn.chirp.n_samples) / scn.chirp.sample_rate_hz
    shifted_ref = ComplexSignal(
        ref_sym.samples * np.exp(1j * 2.0 * np.pi * node.shift_freq_hz * t),
        scn.chirp.sample_rate_hz,
    )
    mobile = len(scn.trajectory) >= 2
    node_pos = scn.node_position
    ret_coeff = chans.node_to_leader(node_pos)

    y_best_history = []
    converged_at = -1
    for n in range(scn.rounds):
        if mobile:
            t_now = min(n * scn.round_time_s, scn.trajectory[-1][0])
            node_pos = node_position_at(scn.trajectory, t_now)
            node_coeffs = chans.to_node(node_pos)
            ret_coeff = chans.node_to_leader(node_pos)
            opt_amp = float(scn.tx_amplitude * np.abs(node_coeffs).sum())

        phases = aligner.propose()
        h = scn.tx_amplitude * np.sum(node_coeffs * np.exp(1j * phases))
        p_in = float(np.abs(h) ** 2)
        node.harvest_step(p_in, scn.round_time_s)

        y_raw = _measure(scn, node, h, p_in, ret_coeff, ref_sym, shifted_ref, t, rng)
        aligner.record(y_raw)

        achieved = abs(h) / opt_amp if opt_amp > 0 else 0.0
        metrics.power_trace.append(achieved)
        rnd, raw, smoothed, phi, _ = aligner.trace[-1]
        metrics.metric_trace.append((rnd, raw, smoothed, math.degrees(phi)))

        y_best_history.append(aligner.y_best)
        if converged_at < 0 and len(y_best_history) > 20:
            old = y_best_history[-21]
            if old > 0 and (y_best_history[-1] - old) / old < 0.005:
                converged_at = n
    metrics.rounds_to_converge = converged_at if converged_at >= 0 else scn.rounds
    metrics.final_phases = [float(p) for p in aligner.ref_phases]

    window = max(1, scn.rounds // 4)
    tail = np.asarray(metrics.power_trace[-window:])
    metrics.power_percentage = float(np.mean(tail) ** 2)

    # --- optional incoherent baseline -------------------------------------
    if scn.baseline == "random_phase":
        brng = np.random.default_rng(scn.seed + 0x9E3779B9)
        btrace = []
        node_pos_b = scn.node_position
        coeffs_b = chans.to_node(node_pos_b)
        opt_b = float(scn.tx_amplitude * np.abs(coeffs_b).sum())
        for n in range(scn.rounds):
            if mobile:
                t_now = min(n * scn.round_time_s, scn.trajectory[-1][0])
                node_pos_b = node_position_at(scn.trajectory, t_now)
                coeffs_b = chans.to_node(node_pos_b)
                opt_b = float(scn.tx_amplitude * np.abs(coeffs_b).sum())
            phases = brng.uniform(0.0, 2.0 * math.pi, scn.n_slaves)
            hb = scn.tx_amplitude * np.sum(coeffs_b * np.exp(1j * phases))
            btrace.append(abs(hb) / opt_b if opt_b > 0 else 0.0)
        metrics.baseline_trace = btrace
        tail_b = np.asarray(btrace[-window:])
        metrics.baseline_power_percentage = float(np.mean(np.asarray(tail_b) ** 2))

    return metrics


def _measure(scn, node, h, p_in, ret_coeff, ref_sym, shifted_ref, t, rng):
    """One backscatter power-metric measurement at the leader."""
    if scn.measurement == "ideal":
        return node.transfer_curve.reflected_power_w(p_in) if node.awake else 0.0
    incident = ComplexSignal(h * ref_sym.samples, scn.chirp.sample_rate_hz)
    reflected = node.reflect(incident)
    rx = reflected.samples * ret_coeff
    if scn.noise_floor_dbm is not None:
        rx = rx + awgn(
            rx.size, rng,
            noise_floor_dbm=scn.noise_floor_dbm,
            bandwidth_hz=scn.chirp.bandwidth_hz,
            sample_rate_hz=scn.chirp.sample_rate_hz,
        )
    return p_ccs0(ComplexSignal(rx, scn.chirp.sample_rate_hz), shifted_ref)


class _Coeff:
    """Minimal channel-coefficient shim for the cold-start runner."""

    def __init__(self, z: complex):
        self.complex = z


def heatmap(scn: Scenario, phases, grid_points: np.ndarray) -> np.ndarray:
    """Coherent field power per grid point for the given transmit phases."""
    if scn.n_slaves == 0 or len(phases) == 0:
        return np.zeros(grid_points.shape[0])
    rng = np.random.default_rng(scn.seed)
    static = rng.uniform(0.0, 2.0 * math.pi, scn.n_slaves)
    m = cs.field_matrix(
        scn.slave_positions, grid_points, scn.freq_hz, scn.tx_gain_dbi,
        static_phases=static,
        tx_amplitudes=np.full(scn.n_slaves, scn.tx_amplitude),
    )
    return cs.field_power(m, np.asarray(phases))


def aligned_phases(scn: Scenario) -> np.ndarray:
    """Conjugate phases focusing the array on the node position (oracle)."""
    rng = np.random.default_rng(scn.seed)
    static = rng.uniform(0.0, 2.0 * math.pi, scn.n_slaves)
    coeffs = _Channels(scn, static).to_node(scn.node_position)
    return (-np.angle(coeffs)) % (2.0 * math.pi)


def region_axis_ratio(points: np.ndarray, power: np.ndarray, drop_db: float = 3.0) -> float:
    """Principal-axis length ratio of the region within ``drop_db`` of peak.

    On a regular voxel grid only the connected component holding the peak is
    measured, so detached side lobes that graze the threshold do not smear
    the shape estimate.
    """
    mask = power >= power.max() * 10.0 ** (-drop_db / 10.0)
    mask = _peak_component(points, power, mask)
    sel = points[mask]
    if sel.shape[0] < 2:
        return 1.0
    centered = sel - sel.mean(axis=0)
    cov = np.cov(centered.T)
    ev = np.sort(np.linalg.eigvalsh(cov))[::-1]
    ev = ev[ev > 1e-18]
    if ev.size < 2:
        return float("inf")
    return float(math.sqrt(ev[0] / ev[-1]))


def _peak_component(points: np.ndarray, power: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Restrict a voxel mask to the connected blob containing the power peak."""
    from scipy import ndimage

    axes = [np.unique(points[:, k]) for k in range(3)]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != points.shape[0]:
        return mask  # not a full regular grid; keep the raw threshold mask
    idx = [np.searchsorted(axes[k], points[:, k]) for k in range(3)]
    flat = np.ravel_multi_index(idx, shape)
    order = np.argsort(flat)
    grid_mask = np.zeros(shape, dtype=bool)
    grid_mask.ravel()[flat[order]] = mask[order]
    labels, _ = ndimage.label(grid_mask)
    peak = int(np.argmax(power))
    peak_label = labels[idx[0][peak], idx[1][peak], idx[2][peak]]
    if peak_label == 0:
        return mask
    keep = labels.ravel()[flat] == peak_label
    return mask & keep


# ---------------------------------------------------------------------------
# Geometry helpers for canonical testbeds.

def ring_positions(n: int, radius_m: float = 6.0, height_m: float = 3.0) -> list:
    """Slaves distributed on a ceiling ring, mirroring the testbed layout."""
    out = []
    for i in range(n):
        a = 2.0 * math.pi * i / n
        out.append(Position(radius_m * math.cos(a), radius_m * math.sin(a), height_m))
    return out


def linear_positions(n: int, spacing_m: float | None = None,
                     freq_hz: float = DEFAULT_FREQ_HZ) -> list:
    """Co-located half-wavelength linear array along x at the origin."""
    from .channel import SPEED_OF_LIGHT

    if spacing_m is None:
        spacing_m = SPEED_OF_LIGHT / freq_hz / 2.0
    x0 = -(n - 1) * spacing_m / 2.0
    return [Position(x0 + i * spacing_m, 0.0, 0.0) for i in range(n)]
