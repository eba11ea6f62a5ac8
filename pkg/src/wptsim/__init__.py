"""Deterministic simulator of backscatter-assisted distributed beamforming
for deep-tissue wireless power transfer.

Modules:
    channel      link-budget path loss and complex channel coefficients
    chirp        chirp DSP: generation, cross-correlation, envelope beats
    backscatter  passive node model: wake threshold, harvest, reflection
    sync         two-step chirp time synchronization
    beamform     one-bit phase alignment and the adaptive bound schedule
    coldstart    side-lobe space search that wakes a depleted node
    engine       scenario orchestration and metrics
    cli          config-driven runs, sweeps and reports
"""

__version__ = "0.1.0"
