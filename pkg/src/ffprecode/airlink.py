"""Link-level simulation: Rayleigh channels, Gray-mapped QAM, AWGN, UE-side
scaling with hard decisions, and Monte Carlo BER accounting.

Random numbers come from ``numpy.random.SeedSequence`` substreams keyed on
``(seed, trial, subcarrier, stream)``. A trial therefore draws the same
channel, bits and noise no matter which precoder is simulated, in which
order, or in which process, which is what makes PD-WF and centralized WF
produce identical bit errors and serial and parallel runs identical reports.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, PrecodingError
from .fabric import ClusterPartition, WorkloadShape, partition_channel, run_fd_wf, run_pd_wf, superpose
from .numerics import CDTYPE
from .precoding import (
    DEFAULT_TAU,
    PrecoderConfig,
    effective_rx_scale,
    mrt_prepare,
    wf_precode,
    wf_prepare,
    zf_prepare,
)

PRECODERS = ("central-wf", "zf", "mrt", "pd-wf", "fd-wf")

STREAM_CHANNEL = 0
STREAM_BITS = 1
STREAM_NOISE = 2


class Constellation:
    """Square QAM with per-axis binary-reflected Gray labels.

    ``points[i]`` carries the bit label ``i`` (MSB first); the upper half of
    the label selects the in-phase level and the lower half the quadrature
    level.
    """

    def __init__(self, order: int = 64, symbol_energy: float = 1.0):
        bits = int(round(math.log2(order))) if order > 1 else 0
        if order not in (4, 16, 64, 256) or bits % 2:
            raise InvalidInputError(f"square QAM order must be 4, 16, 64 or 256, got {order}")
        self.order = order
        self.bits_per_symbol = bits
        self.symbol_energy = float(symbol_energy)
        half = bits // 2
        levels = 1 << half
        gray = np.array([i ^ (i >> 1) for i in range(levels)])
        amplitude = np.empty(levels)
        amplitude[gray] = 2 * np.arange(levels) - (levels - 1)
        scale = math.sqrt(self.symbol_energy / (2 * (levels**2 - 1) / 3))
        labels = np.arange(order)
        self.points = scale * (amplitude[labels >> half] + 1j * amplitude[labels & (levels - 1)])
        self.bit_map = ((labels[:, None] >> np.arange(bits - 1, -1, -1)) & 1).astype(np.uint8)

    def __repr__(self):
        return f"Constellation(order={self.order}, symbol_energy={self.symbol_energy})"

    def modulate(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.shape[-1] % self.bits_per_symbol:
            raise InvalidInputError(
                f"bit count {bits.shape[-1]} is not a multiple of {self.bits_per_symbol}"
            )
        groups = bits.reshape(*bits.shape[:-1], -1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return self.points[groups @ weights]

    def detect(self, s_hat) -> np.ndarray:
        """Index of the nearest point; exact ties go to the lowest index."""
        s_hat = np.asarray(s_hat, dtype=CDTYPE)
        d = np.abs(s_hat[..., None] - self.points) ** 2
        return np.argmin(d, axis=-1)

    def demodulate(self, s_hat) -> np.ndarray:
        """Hard-decision bits, ``bits_per_symbol`` per estimate, flattened on the last axis."""
        s_hat = np.asarray(s_hat, dtype=CDTYPE)
        bits = self.bit_map[self.detect(s_hat)]
        return bits.reshape(*s_hat.shape[:-1], -1)


@dataclass(frozen=True)
class SymbolFrame:
    """Bits and symbols of one frame; ``symbols`` has shape ``(N_sc, K, U)``."""

    shape: WorkloadShape
    bits: np.ndarray
    symbols: np.ndarray
    constellation: Constellation

    def __post_init__(self):
        n_sub, K, U = self.symbols.shape
        if (n_sub, K) != (self.shape.n_subcarriers, self.shape.n_slots):
            raise InvalidInputError("symbols do not match the workload shape")
        if self.bits.size != n_sub * K * U * self.constellation.bits_per_symbol:
            raise InvalidInputError("bit count does not match symbol count")

    @property
    def users(self) -> int:
        return self.symbols.shape[-1]


def modulate(bits, constellation: Constellation, shape: WorkloadShape, users: int) -> SymbolFrame:
    """Map a flat bit array onto a ``(N_sc, K, U)`` symbol frame."""
    m = constellation.bits_per_symbol
    bits = np.asarray(bits, dtype=np.uint8).reshape(shape.n_subcarriers, shape.n_slots, users * m)
    return SymbolFrame(shape, bits, constellation.modulate(bits), constellation)


def demodulate(s_hat, constellation: Constellation) -> np.ndarray:
    return constellation.demodulate(s_hat)


def complex_normal(shape, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian with unit variance per entry."""
    z = rng.standard_normal((*np.atleast_1d(shape), 2))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2)


def rayleigh_channel(users: int, bs_antennas: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Rayleigh-fading ``U x B`` channel, unit variance per entry."""
    return complex_normal((users, bs_antennas), rng)


def awgn(y0, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    if noise_var < 0:
        raise InvalidInputError(f"noise variance must be >= 0, got {noise_var}")
    y0 = np.asarray(y0, dtype=CDTYPE)
    if noise_var == 0:
        return y0.copy()
    return y0 + math.sqrt(noise_var) * complex_normal(y0.shape, rng)


def noise_var_for_snr(snr_db: float, rho_sq: float = 1.0) -> float:
    """N0 for ``SNR = rho^2 / N0`` (total transmit power over per-entry noise)."""
    return rho_sq / 10 ** (snr_db / 10)


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


# -- Monte Carlo ------------------------------------------------------------


@dataclass(frozen=True)
class LinkConfig:
    """Everything a BER run needs besides the SNR grid and trial count."""

    users: int
    cluster_sizes: tuple[int, ...]
    order: int = 64
    tau: float = DEFAULT_TAU
    rho_sq: float = 1.0
    n_subcarriers: int = 1
    n_slots: int = 7
    seed: int = 0
    fabric_mode: str = "serial"

    def __post_init__(self):
        object.__setattr__(self, "cluster_sizes", tuple(int(b) for b in self.cluster_sizes))
        ClusterPartition(self.cluster_sizes)
        WorkloadShape(self.n_subcarriers, self.n_slots)
        Constellation(self.order)

    @property
    def bs_antennas(self) -> int:
        return sum(self.cluster_sizes)

    @property
    def partition(self) -> ClusterPartition:
        return ClusterPartition(self.cluster_sizes)

    @cached_property
    def constellation(self) -> Constellation:
        return Constellation(self.order)

    def precoder_config(self, noise_var: float) -> PrecoderConfig:
        return PrecoderConfig(
            users=self.users,
            bs_antennas=self.bs_antennas,
            noise_var=noise_var,
            rho_sq=self.rho_sq,
            symbol_energy=self.constellation.symbol_energy,
            tau=self.tau,
        )


@dataclass
class BerReport:
    precoder: str
    snr_db: float
    trials: int
    bit_errors: int
    bits_total: int
    error: str | None = None
    config: dict = field(default_factory=dict)

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else float("nan")


def check_precoders(precoders: Sequence[str], users: int, cluster_sizes: Sequence[int]):
    if not precoders:
        raise InvalidInputError("at least one precoder is required")
    B = sum(cluster_sizes)
    for p in precoders:
        if p not in PRECODERS:
            raise InvalidInputError(f"unknown precoder {p!r}; choose from {', '.join(PRECODERS)}")
        if p in ("central-wf", "zf", "pd-wf") and B < users:
            raise InvalidInputError(f"{p} needs B >= U (B={B}, U={users})")


def received_estimates(
    precoder: str, H: np.ndarray, link: LinkConfig, cfg: PrecoderConfig, symbols: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless received signal and the UE receive scale, per subcarrier.

    ``H`` is ``(N_sc, U, B)``, ``symbols`` ``(N_sc, K, U)``. Returns ``y0`` of
    shape ``(N_sc, K, U)`` and ``scale`` of shape ``(N_sc,)``.
    """
    n_sub = H.shape[0]
    if precoder in ("pd-wf", "fd-wf"):
        run = (run_pd_wf if precoder == "pd-wf" else run_fd_wf)(
            H, link.partition, cfg, symbols, mode=link.fabric_mode
        )
        y0 = superpose(run.outputs, partition_channel(H, link.partition))
        if precoder == "pd-wf":
            scale = np.array([st.beta for st in run.states])
        else:
            scale = np.array(
                [effective_rx_scale(H[w], run.states[w], cfg, "genie_mmse") for w in range(n_sub)]
            )
        return y0, scale
    y0 = np.empty(symbols.shape, dtype=CDTYPE)
    scale = np.empty(n_sub)
    for w in range(n_sub):
        if precoder == "mrt":
            st = mrt_prepare(H[w], cfg)
            x = symbols[w] @ st.P.T
            scale[w] = effective_rx_scale(H[w], [st], cfg, "genie_mmse")
        else:
            st = (wf_prepare if precoder == "central-wf" else zf_prepare)(H[w], cfg)
            x = wf_precode(st, symbols[w])
            scale[w] = st.beta
        y0[w] = x @ H[w].T
    return y0, scale


def simulate_trial(
    trial: int, link: LinkConfig, precoders: Sequence[str], snr_grid: Sequence[float]
) -> tuple[np.ndarray, list[list[str | None]]]:
    """Bit errors of one channel realization, shape ``(len(precoders), len(snr_grid))``."""
    const = link.constellation
    n_sub, K, U, B = link.n_subcarriers, link.n_slots, link.users, link.bs_antennas
    H = np.empty((n_sub, U, B), dtype=CDTYPE)
    bits = np.empty((n_sub, K, U * const.bits_per_symbol), dtype=np.uint8)
    unit_noise = np.empty((n_sub, K, U), dtype=CDTYPE)
    for w in range(n_sub):
        H[w] = rayleigh_channel(U, B, substream(link.seed, trial, w, STREAM_CHANNEL))
        bits[w] = substream(link.seed, trial, w, STREAM_BITS).integers(
            0, 2, size=(K, U * const.bits_per_symbol), dtype=np.uint8
        )
        unit_noise[w] = complex_normal((K, U), substream(link.seed, trial, w, STREAM_NOISE))
    frame = modulate(bits, const, WorkloadShape(n_sub, K), U)

    errors = np.zeros((len(precoders), len(snr_grid)), dtype=np.int64)
    failures: list[list[str | None]] = [[None] * len(snr_grid) for _ in precoders]
    for j, snr_db in enumerate(snr_grid):
        N0 = noise_var_for_snr(snr_db, link.rho_sq)
        cfg = link.precoder_config(N0)
        y_noise = math.sqrt(N0) * unit_noise
        for i, p in enumerate(precoders):
            try:
                y0, scale = received_estimates(p, H, link, cfg, frame.symbols)
            except PrecodingError as exc:
                failures[i][j] = f"{type(exc).__name__}: {exc}"
                continue
            s_hat = scale[:, None, None] * (y0 + y_noise)
            errors[i, j] = int(np.count_nonzero(const.demodulate(s_hat) != frame.bits))
    return errors, failures


def _simulate_chunk(args):
    trials, link, precoders, snr_grid = args
    total = np.zeros((len(precoders), len(snr_grid)), dtype=np.int64)
    failures: dict[tuple[int, int], str] = {}
    for t in trials:
        errs, fails = simulate_trial(t, link, precoders, snr_grid)
        total += errs
        for i, row in enumerate(fails):
            for j, msg in enumerate(row):
                if msg is not None:
                    failures.setdefault((i, j), f"trial {t}: {msg}")
    return total, failures


def measure_ber(
    precoders: str | Sequence[str],
    link: LinkConfig,
    snr_grid: Iterable[float],
    trials: int,
    workers: int = 1,
    chunk_size: int = 50,
) -> list[BerReport]:
    """Monte Carlo uncoded BER of each precoder at each SNR point.

    All precoders share the same channels, bits and noise. ``workers > 1``
    spreads chunks of trials over processes; integer error counts are summed
    in trial-chunk order, so the reports do not depend on ``workers``.
    """
    if isinstance(precoders, str):
        precoders = [precoders]
    precoders = list(precoders)
    snr_grid = [float(v) for v in snr_grid]
    if trials < 1:
        raise InvalidInputError(f"trials must be >= 1, got {trials}")
    check_precoders(precoders, link.users, link.cluster_sizes)

    chunks = [
        (range(start, min(start + chunk_size, trials)), link, precoders, snr_grid)
        for start in range(0, trials, chunk_size)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, chunks))
    else:
        parts = [_simulate_chunk(c) for c in chunks]

    total = np.zeros((len(precoders), len(snr_grid)), dtype=np.int64)
    failures: dict[tuple[int, int], str] = {}
    for errs, fails in parts:
        total += errs
        for key, msg in fails.items():
            failures.setdefault(key, msg)

    bits_per_trial = link.n_subcarriers * link.n_slots * link.users * link.constellation.bits_per_symbol
    reports = []
    for i, p in enumerate(precoders):
        for j, snr_db in enumerate(snr_grid):
            reports.append(
                BerReport(
                    precoder=p,
                    snr_db=snr_db,
                    trials=trials,
                    bit_errors=int(total[i, j]),
                    bits_total=bits_per_trial * trials,
                    error=failures.get((i, j)),
                )
            )
    return reports
