"""Sounding-beam selection that minimizes the predicted angle error bound.

Candidate beam sets are scored with the Bayesian information matrix

    J = P_prior^-1 + (2 / sigma^2) * Re(O^H O)

where O is the pilot-map Jacobian with respect to the tracked angles at the
predicted mean; the objective is trace(J^-1) over the angle block, i.e. the
posterior Cramer-Rao bound surrogate. In arrival-only mode the transmit side
is pinned to the codebook beams nearest the known departure direction and the
receive pair is found by exhaustive search over all unordered codebook pairs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .arrays import Codebook
from .filtering import GaussianBelief
from .measurement import (
    SoundingConfig,
    _jacobian_from_angles,
    _measurement_factors,
)

__all__ = ["BeamSelection", "nearest_beams", "crlb_objective", "select_sounding"]

# Selection still needs a finite information weight when pilots are noiseless.
_MIN_NOISE_VAR = 1e-12


@dataclass
class BeamSelection:
    """Chosen codebook indices for one sounding round and their score."""

    tx_indices: np.ndarray
    rx_indices: np.ndarray
    objective_value: float

    def to_sounding(self, codebook: Codebook) -> SoundingConfig:
        return SoundingConfig(
            tx_angles=codebook.angles[self.tx_indices],
            rx_angles=codebook.angles[self.rx_indices],
        )


def nearest_beams(angle: float, codebook: Codebook, m: int) -> np.ndarray:
    """Indices of the m codebook entries closest to `angle`, ascending.

    Distance ties resolve toward the smaller index.
    """
    n = len(codebook)
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in [1, {n}], got {m}")
    order = np.argsort(np.abs(codebook.angles - angle), kind="stable")
    return np.sort(order[:m])


def _state_jacobian(belief, gains, sounding, geom_rx, geom_tx, aods, mode):
    num_paths = np.asarray(gains).size
    if mode == "aoa_only":
        aoas = belief.mean
        aods = np.asarray(aods, dtype=np.float64)
    else:
        aoas = belief.mean[0::2]
        aods = belief.mean[1::2]
    jac_full = _jacobian_from_angles(
        np.asarray(gains, dtype=np.complex128), aoas, aods, sounding, geom_rx, geom_tx
    )
    if mode == "aoa_only":
        return jac_full[:, 1::2]
    order = np.arange(2 * num_paths).reshape(num_paths, 2)[:, ::-1].ravel()
    return jac_full[:, order]


def crlb_objective(
    belief: GaussianBelief,
    sounding: SoundingConfig,
    gains: np.ndarray,
    noise_var: float,
    geom_rx,
    geom_tx,
    aods: np.ndarray | None = None,
    mode: str = "aoa_only",
) -> float:
    """trace(J^-1) for one candidate sounding; np.inf when J is singular."""
    if mode == "aoa_only" and aods is None:
        raise ValueError("aoa_only mode needs the known departure angles")
    jac = _state_jacobian(belief, gains, sounding, geom_rx, geom_tx, aods, mode)
    noise = max(noise_var, _MIN_NOISE_VAR)
    info = np.linalg.inv(belief.cov) + (2.0 / noise) * (jac.conj().T @ jac).real
    try:
        return float(np.trace(np.linalg.inv(info)))
    except np.linalg.LinAlgError:
        return np.inf


def _rx_pair_scores(
    belief: GaussianBelief,
    tx_angles: np.ndarray,
    codebook: Codebook,
    gains: np.ndarray,
    noise_var: float,
    geom_rx,
    geom_tx,
    aods: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Objective for every unordered receive-beam pair (arrival-only mode).

    The information matrix separates per pair: with transmit factors
    t[l, i] and receive derivative factors d[l, j], Re(O^H O)[l, l'] is the
    elementwise product of sum_i conj(t) t and sum_{j in pair} conj(d) d,
    so all pairs can be scored with one batched matrix inverse.
    """
    num_paths = gains.size
    probe = SoundingConfig(tx_angles=tx_angles, rx_angles=codebook.angles)
    scale, gt, _, _, dgr = _measurement_factors(
        gains, belief.mean, aods, probe, geom_rx, geom_tx, with_derivatives=True
    )
    t = scale[:, None] * gt  # (L, M_b)
    t_mat = t.conj() @ t.T  # (L, L): sum over tx beams
    d_mat = np.einsum("lj,mj->jlm", dgr.conj(), dgr)  # (n_beams, L, L)

    j1, j2 = np.triu_indices(len(codebook), k=1)
    pair_info = d_mat[j1] + d_mat[j2]  # (n_pairs, L, L)
    noise = max(noise_var, _MIN_NOISE_VAR)
    info = np.linalg.inv(belief.cov)[None] + (2.0 / noise) * (t_mat[None] * pair_info).real
    try:
        traces = np.trace(np.linalg.inv(info), axis1=1, axis2=2)
    except np.linalg.LinAlgError:
        traces = np.empty(j1.size)
        for k in range(j1.size):
            try:
                traces[k] = np.trace(np.linalg.inv(info[k]))
            except np.linalg.LinAlgError:
                traces[k] = np.inf
    return j1, j2, traces


def select_sounding(
    belief: GaussianBelief,
    codebook: Codebook,
    gains: np.ndarray,
    noise_var: float,
    geom_rx,
    geom_tx,
    mode: str = "aoa_only",
    known_aod: float | None = None,
    aods: np.ndarray | None = None,
    num_tx: int = 2,
    num_rx: int = 2,
) -> BeamSelection:
    """Pick the sounding beams that minimize the predicted error bound.

    Arrival-only mode: the transmit beams are the `num_tx` codebook entries
    nearest `known_aod`, and the receive side is an exhaustive search over all
    unordered `num_rx`-subsets of the codebook (vectorized for pairs). Full
    mode searches transmit and receive subsets jointly by brute force, which
    is only practical for small codebooks. Objective ties resolve toward the
    lexicographically smallest index tuple.
    """
    gains = np.asarray(gains, dtype=np.complex128)
    if mode == "aoa_only":
        if known_aod is None:
            raise ValueError("aoa_only mode needs known_aod for the transmit side")
        if aods is None:
            aods = np.full(gains.size, known_aod, dtype=np.float64)
        tx_idx = nearest_beams(known_aod, codebook, num_tx)
        tx_angles = codebook.angles[tx_idx]
        if num_rx == 2:
            j1, j2, scores = _rx_pair_scores(
                belief, tx_angles, codebook, gains, noise_var, geom_rx, geom_tx, aods
            )
            best = int(np.argmin(scores))
            rx_idx = np.array([j1[best], j2[best]])
            return BeamSelection(tx_idx, rx_idx, float(scores[best]))
        best_idx, best_val = None, np.inf
        for combo in itertools.combinations(range(len(codebook)), num_rx):
            sounding = SoundingConfig(tx_angles=tx_angles, rx_angles=codebook.angles[list(combo)])
            val = crlb_objective(
                belief, sounding, gains, noise_var, geom_rx, geom_tx, aods=aods, mode=mode
            )
            if val < best_val:
                best_idx, best_val = combo, val
        return BeamSelection(tx_idx, np.array(best_idx), float(best_val))

    if mode != "full":
        raise ValueError(f"unknown mode {mode!r}")
    best, best_val = None, np.inf
    for tx_combo in itertools.combinations(range(len(codebook)), num_tx):
        for rx_combo in itertools.combinations(range(len(codebook)), num_rx):
            sounding = SoundingConfig(
                tx_angles=codebook.angles[list(tx_combo)],
                rx_angles=codebook.angles[list(rx_combo)],
            )
            val = crlb_objective(
                belief, sounding, gains, noise_var, geom_rx, geom_tx, mode=mode
            )
            if val < best_val:
                best, best_val = (tx_combo, rx_combo), val
    return BeamSelection(np.array(best[0]), np.array(best[1]), float(best_val))
