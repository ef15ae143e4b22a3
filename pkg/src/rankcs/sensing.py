"""Hybrid front ends and synthesis of noisy, partially observed measurements.

The post-combining observation is y = w^H @ h @ (f @ training) + z. Its
column-major vectorisation satisfies vec(y) = kron((f @ training).T, w^H)
@ vec(h), which is the measurement operator used downstream.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import linalg


@dataclass
class FrontEnd:
    f: np.ndarray  # n_bs x m_bs precoder (analog, unit-modulus / sqrt(n_bs))
    w: np.ndarray  # n_ms x m_ms combiner
    training: np.ndarray  # pilot block applied on the right of f; identity by default


@dataclass
class Observation:
    y: np.ndarray
    mask: np.ndarray  # boolean, True where observed; y is zero where False
    front_end: FrontEnd
    noise_var: float
    time_index: int

    @property
    def observed_fraction(self):
        return float(np.mean(self.mask))


def _phase_matrix(rng, rows, cols):
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(rows, cols))
    return np.exp(1j * phases) / np.sqrt(rows)


def make_front_end(n_bs, m_bs, n_ms, m_ms, rng_seed):
    """Random high-resolution phase-shifter front end; identity baseband and pilots."""
    if m_bs > n_bs or m_ms > n_ms:
        raise ValueError("RF chain count cannot exceed antenna count")
    rng = np.random.default_rng(rng_seed)
    f = _phase_matrix(rng, n_bs, m_bs)
    w = _phase_matrix(rng, n_ms, m_ms)
    training = np.eye(m_bs, dtype=np.complex128)
    return FrontEnd(f=f, w=w, training=training)


def observe(h, fe, snr_db, rng_seed, time_index=None):
    """Noisy fully observed measurement of a ChannelRealization.

    Noise is i.i.d. complex Gaussian scaled so that
    ||signal||_F^2 / E||z||_F^2 equals the requested SNR; snr_db=inf
    disables it.
    """
    t = h.time_index if time_index is None else time_index
    sig = fe.w.conj().T @ h.h @ (fe.f @ fe.training)
    if np.isinf(snr_db):
        return Observation(y=sig, mask=np.ones(sig.shape, dtype=bool),
                           front_end=fe, noise_var=0.0, time_index=t)
    rng = np.random.default_rng(rng_seed)
    snr = 10.0 ** (snr_db / 10.0)
    sig_power = float(np.linalg.norm(sig) ** 2) / sig.size
    # zero channel: fall back to unit reference signal power so the noise
    # floor stays finite
    noise_var = (sig_power if sig_power > 0 else 1.0) / snr
    z = np.sqrt(noise_var / 2.0) * (
        rng.standard_normal(sig.shape) + 1j * rng.standard_normal(sig.shape)
    )
    return Observation(y=sig + z, mask=np.ones(sig.shape, dtype=bool),
                       front_end=fe, noise_var=noise_var, time_index=t)


def puncture(obs, miss_frac, mode, rng_seed):
    """Erase a uniformly chosen fraction of entries.

    'missing' zeroes the selected entries; 'corrupt' overwrites them with
    matched-variance Gaussian values before demoting them to unobserved
    (erasure semantics: downstream never reads mask=False data, so the
    stored value is zeroed either way).
    """
    if not 0.0 <= miss_frac < 1.0:
        raise ValueError("miss_frac must lie in [0, 1)")
    if mode not in ("missing", "corrupt"):
        raise ValueError(f"unknown puncture mode {mode!r}")
    y = obs.y.copy()
    mask = obs.mask.copy()
    count = int(np.ceil(miss_frac * y.size))
    if count == 0:
        return replace(obs, y=y, mask=mask)
    rng = np.random.default_rng(rng_seed)
    sel = rng.choice(y.size, size=count, replace=False)
    idx = np.unravel_index(sel, y.shape)
    if mode == "corrupt":
        observed = obs.y[obs.mask]
        var = float(np.mean(np.abs(observed) ** 2)) if observed.size else 1.0
        _ = np.sqrt(var / 2.0) * (
            rng.standard_normal(count) + 1j * rng.standard_normal(count)
        )  # corruption event; values discarded as erasures
    y[idx] = 0.0
    mask[idx] = False
    return replace(obs, y=y, mask=mask)


def measurement_operator(fe):
    """Matrix X with vec(y_noiseless) = X @ vec(h), column-major vec."""
    return linalg.kron((fe.f @ fe.training).T, fe.w.conj().T)
