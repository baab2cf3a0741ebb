"""Linear downlink precoders: centralized WF, ZF, MRT and the per-cluster pieces
of the partially (PD) and fully (FD) decentralized Wiener-filter precoders.

Conventions
-----------
``H`` is the ``U x B`` downlink channel, ``s`` the length-``U`` symbol vector
(or a stack ``(n, U)`` of them, one per slot) and ``x`` the length-``B``
transmit vector. The precoding matrix is always ``P = Q / beta``; the UE side
multiplies its received sample by a scalar receive gain (``beta`` for WF).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Literal, Sequence, Union

import numpy as np

from .errors import InvalidInputError, NumericalError, SingularityError
from .numerics import (
    CDTYPE,
    as_cmatrix,
    gram,
    hpd_inverse,
    q_direct,
    regularize,
    searle_trace,
    searle_trace_direct,
    trace_and_frob,
)

DEFAULT_TAU = 0.125

RxScaleMode = Literal["wf_beta", "genie_mmse"]


@dataclass(frozen=True)
class PrecoderConfig:
    """Scalars that govern every precoder.

    ``noise_var`` is the per-entry complex noise variance N0, ``rho_sq`` the
    total transmit power budget and ``symbol_energy`` the average
    constellation energy Es. ``tau`` scales the FD-WF regularizer and is
    shared by all clusters.
    """

    users: int
    bs_antennas: int
    noise_var: float
    rho_sq: float = 1.0
    symbol_energy: float = 1.0
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.users < 1 or self.bs_antennas < 1:
            raise InvalidInputError(
                f"need U >= 1 and B >= 1, got U={self.users}, B={self.bs_antennas}"
            )
        if not (self.noise_var >= 0 and np.isfinite(self.noise_var)):
            raise InvalidInputError(f"noise_var must be finite and >= 0, got {self.noise_var}")
        if not self.rho_sq > 0:
            raise InvalidInputError(f"rho_sq must be > 0, got {self.rho_sq}")
        if not self.symbol_energy > 0:
            raise InvalidInputError(f"symbol_energy must be > 0, got {self.symbol_energy}")
        if not self.tau >= 0:
            raise InvalidInputError(f"tau must be >= 0, got {self.tau}")

    @property
    def kappa(self) -> float:
        """Centralized WF regularizer ``U N0 / rho^2``."""
        return self.users * self.noise_var / self.rho_sq

    def with_noise(self, noise_var: float) -> "PrecoderConfig":
        return dataclasses.replace(self, noise_var=noise_var)


@dataclass(frozen=True)
class CentralWfState:
    """Per-channel quantities of the centralized WF precoder.

    ``Q`` is ``None`` when the state was built at a whitening node that only
    sees the Gram matrix, never the channel itself.
    """

    kappa: float
    A_inv: np.ndarray
    beta: float
    Q: np.ndarray | None = None

    @property
    def P(self) -> np.ndarray:
        if self.Q is None:
            raise InvalidInputError("state was prepared from a Gram matrix and has no Q")
        return self.Q / self.beta


@dataclass(frozen=True)
class LocalWfState:
    """FD-WF state of one cluster under its share ``rho_sq / C`` of the power."""

    cluster_id: int
    kappa_c: float
    Q_c: np.ndarray
    beta_c: float
    rho_c_sq: float

    @property
    def P(self) -> np.ndarray:
        return self.Q_c / self.beta_c


@dataclass(frozen=True)
class MrtState:
    gamma: float
    P: np.ndarray


State = Union[CentralWfState, LocalWfState, MrtState]


def _symbols(s, users: int) -> np.ndarray:
    s = np.asarray(s, dtype=CDTYPE)
    if s.ndim == 0 or s.shape[-1] != users:
        raise InvalidInputError(f"symbol vector must end in dimension U={users}, got {s.shape}")
    return s


def _check_channel(H, cfg: PrecoderConfig) -> np.ndarray:
    H = as_cmatrix(H, "H")
    if H.shape != (cfg.users, cfg.bs_antennas):
        raise InvalidInputError(
            f"channel shape {H.shape} does not match config U={cfg.users}, B={cfg.bs_antennas}"
        )
    return H


# -- centralized WF ---------------------------------------------------------


def wf_beta_fast(A_inv: np.ndarray, G: np.ndarray, kappa: float, cfg: PrecoderConfig) -> float:
    """Precoding factor from the whitening matrix alone.

    Uses ``tr(Q^H Q) = tr(A^-1) - kappa ||A^-1||_F^2``. When ``kappa`` dwarfs
    the Gram spectrum the subtraction cancels catastrophically; in that case
    the explicit ``tr(A^-1 G A^-1)`` is used instead.
    """
    power = searle_trace(A_inv, G, kappa)
    trace, _ = trace_and_frob(A_inv)
    if not power > 1e-4 * abs(trace.real):
        power = searle_trace_direct(A_inv, G)
    if not power > 0:
        raise NumericalError("precoder has zero output power (all-zero channel?)")
    return float(np.sqrt(cfg.symbol_energy * power / cfg.rho_sq))


def beta_from_q(Q: np.ndarray, symbol_energy: float, rho_sq: float) -> float:
    """``sqrt(tr(Q^H Q) Es / rho^2)`` evaluated literally."""
    power = float(np.sum(Q.real**2 + Q.imag**2))
    if not power > 0:
        raise NumericalError("precoder has zero output power (all-zero channel?)")
    return float(np.sqrt(power * symbol_energy / rho_sq))


def whitening_prepare(G, cfg: PrecoderConfig, kappa: float | None = None) -> CentralWfState:
    """WF state computed from the Gram matrix only (what the whitening node can do)."""
    G = as_cmatrix(G, "G")
    if G.shape != (cfg.users, cfg.users):
        raise InvalidInputError(f"Gram shape {G.shape} does not match U={cfg.users}")
    k = cfg.kappa if kappa is None else kappa
    try:
        A_inv = hpd_inverse(regularize(G, k))
    except SingularityError as exc:
        raise SingularityError(
            f"WF precoder: regularized Gram G + {k:g} I is not positive definite; "
            "channel is rank deficient and N0 = 0"
        ) from exc
    beta = wf_beta_fast(A_inv, G, k, cfg)
    return CentralWfState(kappa=k, A_inv=A_inv, beta=beta)


def wf_prepare(H, cfg: PrecoderConfig) -> CentralWfState:
    """Centralized Wiener-filter precoder for channel ``H``.

    ``Q = H^H A^-1`` with ``A = H H^H + kappa I_U`` and ``kappa = U N0 / rho^2``;
    ``beta`` comes from the trace of ``A^-1`` and its Frobenius norm, so no
    ``B x B`` matrix is ever formed.
    """
    H = _check_channel(H, cfg)
    if cfg.bs_antennas < cfg.users:
        raise InvalidInputError(
            f"centralized precoding needs B >= U (B={cfg.bs_antennas}, U={cfg.users})"
        )
    return _central_prepare(H, cfg, cfg.kappa)


def zf_prepare(H, cfg: PrecoderConfig) -> CentralWfState:
    """Zero-forcing precoder: the WF precoder with its regularizer removed."""
    H = _check_channel(H, cfg)
    if cfg.bs_antennas < cfg.users:
        raise InvalidInputError(
            f"ZF precoding needs B >= U (B={cfg.bs_antennas}, U={cfg.users})"
        )
    return _central_prepare(H, cfg, 0.0)


def _central_prepare(H: np.ndarray, cfg: PrecoderConfig, kappa: float) -> CentralWfState:
    white = whitening_prepare(gram(H), cfg, kappa=kappa)
    return dataclasses.replace(white, Q=H.conj().T @ white.A_inv)


def wf_precode(state: CentralWfState, s) -> np.ndarray:
    """``x = Q s / beta`` for one symbol vector or a stack of them."""
    if state.Q is None:
        raise InvalidInputError("state has no Q; use whiten + local_matched_filter")
    s = _symbols(s, state.Q.shape[1])
    return (s @ state.Q.T) / state.beta


def whiten(state: CentralWfState, s) -> np.ndarray:
    """Whitened vector ``z = A^-1 s / beta`` computed at the whitening node."""
    s = _symbols(s, state.A_inv.shape[0])
    return (s @ state.A_inv.T) / state.beta


def local_matched_filter(H_c, z) -> np.ndarray:
    """Cluster output ``x_c = H_c^H z``."""
    H_c = as_cmatrix(H_c, "H_c")
    z = _symbols(z, H_c.shape[0])
    return z @ H_c.conj()


# -- MRT --------------------------------------------------------------------


def mrt_prepare(H, cfg: PrecoderConfig) -> MrtState:
    H = _check_channel(H, cfg)
    energy = float(np.sum(H.real**2 + H.imag**2))
    if energy == 0:
        raise InvalidInputError("MRT is undefined for an all-zero channel")
    gamma = float(np.sqrt(cfg.rho_sq / (energy * cfg.symbol_energy)))
    return MrtState(gamma=gamma, P=gamma * H.conj().T)


def mrt_precode(H, cfg: PrecoderConfig, s) -> np.ndarray:
    """Matched-filter precoding ``x = gamma H^H s`` meeting the power budget with equality."""
    state = mrt_prepare(H, cfg)
    s = _symbols(s, cfg.users)
    return s @ state.P.T


# -- FD-WF ------------------------------------------------------------------


def fd_prepare(H_c, cfg: PrecoderConfig, n_clusters: int, cluster_id: int) -> LocalWfState:
    """Local WF precoder of one cluster, using only its own channel block.

    The cluster gets ``rho^2 / C`` of the power and regularizes with
    ``tau U N0 / rho_c^2``. Which matrix gets inverted depends on the cluster
    size: ``B_c x B_c`` when ``B_c < U``, otherwise ``U x U``.
    """
    H_c = as_cmatrix(H_c, "H_c")
    if n_clusters < 1:
        raise InvalidInputError(f"need at least one cluster, got C={n_clusters}")
    if not 0 <= cluster_id < n_clusters:
        raise InvalidInputError(f"cluster_id {cluster_id} out of range for C={n_clusters}")
    U, B_c = H_c.shape
    if U != cfg.users:
        raise InvalidInputError(f"cluster channel has {U} rows, config has U={cfg.users}")
    rho_c_sq = cfg.rho_sq / n_clusters
    kappa_c = cfg.tau * cfg.users * cfg.noise_var / rho_c_sq
    try:
        if B_c < U:
            Q_c = q_direct(H_c, kappa_c)
        else:
            Q_c = H_c.conj().T @ hpd_inverse(regularize(gram(H_c), kappa_c))
    except SingularityError as exc:
        raise SingularityError(
            f"FD-WF cluster {cluster_id}: regularized local Gram (kappa_c={kappa_c:g}) "
            "is singular"
        ) from exc
    beta_c = beta_from_q(Q_c, cfg.symbol_energy, rho_c_sq)
    return LocalWfState(
        cluster_id=cluster_id, kappa_c=kappa_c, Q_c=Q_c, beta_c=beta_c, rho_c_sq=rho_c_sq
    )


def fd_precode(state: LocalWfState, s) -> np.ndarray:
    """``x_c = Q_c s / beta_c``."""
    s = _symbols(s, state.Q_c.shape[1])
    return (s @ state.Q_c.T) / state.beta_c


# -- receive side -----------------------------------------------------------


def precoding_matrix(state: State) -> np.ndarray:
    return state.P


def effective_channel(H, states: Sequence[State]) -> np.ndarray:
    """``H P`` where ``P`` stacks the precoding matrices of ``states``.

    A single centralized (or MRT) state covers all ``B`` columns; a list of
    ``LocalWfState`` is taken to cover consecutive column blocks of ``H``.
    """
    H = as_cmatrix(H, "H")
    Ps = [precoding_matrix(st) for st in states]
    rows = sum(P.shape[0] for P in Ps)
    if rows != H.shape[1]:
        raise InvalidInputError(f"precoders cover {rows} antennas, channel has {H.shape[1]}")
    out = np.zeros((H.shape[0], Ps[0].shape[1]), dtype=CDTYPE)
    start = 0
    for P in Ps:
        stop = start + P.shape[0]
        out += H[:, start:stop] @ P
        start = stop
    return out


def mse(HP: np.ndarray, scale: float, cfg: PrecoderConfig) -> float:
    """Closed-form ``E||s - scale * y||^2`` for i.i.d. symbols of energy Es."""
    U = HP.shape[0]
    err = np.eye(U, dtype=CDTYPE) - scale * HP
    return float(
        cfg.symbol_energy * np.sum(np.abs(err) ** 2) + abs(scale) ** 2 * U * cfg.noise_var
    )


def genie_scale(HP: np.ndarray, cfg: PrecoderConfig) -> float:
    """Real scalar minimizing ``E||s - b y||^2`` given the effective channel.

    ``b* = Es Re tr(HP) / (Es ||HP||_F^2 + U N0)``.
    """
    U = HP.shape[0]
    signal_power = cfg.symbol_energy * float(np.sum(np.abs(HP) ** 2))
    if not signal_power > 0:
        raise NumericalError("zero received signal power; receive scale is undefined")
    return cfg.symbol_energy * float(np.trace(HP).real) / (signal_power + U * cfg.noise_var)


def effective_rx_scale(
    H, states: Sequence[State], cfg: PrecoderConfig, mode: RxScaleMode = "genie_mmse"
) -> float:
    """Scalar the UEs apply to their received samples.

    ``wf_beta`` returns the WF precoding factor and requires a single
    centralized state. ``genie_mmse`` returns the MSE-optimal joint scalar
    for whatever precoders are given, assuming the UE knows ``H P`` and N0.
    """
    if mode == "wf_beta":
        if len(states) != 1 or not isinstance(states[0], CentralWfState):
            raise InvalidInputError("wf_beta mode needs exactly one centralized WF state")
        return states[0].beta
    if mode == "genie_mmse":
        return genie_scale(effective_channel(H, states), cfg)
    raise InvalidInputError(f"unknown receive-scale mode {mode!r}")
