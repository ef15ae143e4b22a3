"""Phase II: rank-aware batch OMP over the angular dictionary.

Two recovery routes share one greedy core. The dictionary route matches the
refined channel estimate against A = kron(conj(theta_bs), theta_ms); the
observation route matches the completed measurement matrix against the
composite operator measurement_operator(front_end) @ A, which avoids
inverting an ill-conditioned front end. Either way the estimated rank is
the sparsity budget and the primary stopping rule; the residual tolerance
is only a near-machine-precision safety valve.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg, sensing


@dataclass
class SparseEstimate:
    support: list  # dictionary column indices, selection order
    gains: np.ndarray  # aligned with support
    virtual: np.ndarray  # n_aoa x n_aod sparse beamspace matrix
    reconstructed: np.ndarray  # n_ms x n_bs channel estimate
    residual_norm: float
    rank_budget: int
    iterations: int = 0


def _decode(index, n_aoa):
    return index % n_aoa, index // n_aoa


def _build_estimate(support, gains, dic, rank_budget, residual_norm, iterations):
    virtual = np.zeros((dic.n_aoa, dic.n_aod), dtype=np.complex128)
    for k, g in zip(support, gains):
        i, j = _decode(k, dic.n_aoa)
        virtual[i, j] = g
    est = SparseEstimate(
        support=list(support), gains=np.asarray(gains, dtype=np.complex128),
        virtual=virtual, reconstructed=None, residual_norm=residual_norm,
        rank_budget=rank_budget, iterations=iterations,
    )
    est.reconstructed = reconstruct(est, dic)
    return est


def _select_batch(corr_mag, taken, batch):
    order = np.argsort(-corr_mag, kind="stable")  # ties resolve to the lower index
    picked = []
    for idx in order:
        if idx not in taken:
            picked.append(int(idx))
            if len(picked) == batch:
                break
    return picked


def _omp_core(y, atoms, rank_budget, batch, tol):
    """Greedy selection + restricted least squares on a column dictionary."""
    y_norm = float(np.linalg.norm(y))
    if y_norm == 0.0:
        return [], np.array([], dtype=np.complex128), 0.0, 0
    norms = np.linalg.norm(atoms, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    support = []
    taken = set()
    residual = y
    gains = np.array([], dtype=np.complex128)
    iterations = 0
    while len(support) < rank_budget and np.linalg.norm(residual) > tol * y_norm:
        corr = np.abs(atoms.conj().T @ residual) / norms
        picked = _select_batch(corr, taken, batch)
        if not picked:
            break
        support.extend(picked)
        taken.update(picked)
        sub = atoms[:, support]
        gains, _, _, _ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ gains
        iterations += 1

    if len(support) > rank_budget:
        keep = np.argsort(-np.abs(gains), kind="stable")[:rank_budget]
        support = [support[i] for i in sorted(keep)]
        sub = atoms[:, support]
        gains, _, _, _ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ gains

    return support, gains, float(np.linalg.norm(residual)), iterations


def _check_budget(rank_budget, dic, batch):
    if rank_budget < 1:
        raise ValueError("rank_budget must be >= 1")
    if rank_budget > dic.n_atoms:
        raise ValueError("rank_budget exceeds dictionary size")
    if batch < 1:
        raise ValueError("batch must be >= 1")


def ra_bomp(target, dic, rank_budget, batch=1, tol=1e-6):
    """Sparse recovery of a channel-domain target over the angular dictionary."""
    _check_budget(rank_budget, dic, batch)
    support, gains, res, iters = _omp_core(
        linalg.vec(target), dic.sensing_matrix(), rank_budget, batch, tol
    )
    return _build_estimate(support, gains, dic, rank_budget, res, iters)


def composite_operator(fe, dic):
    """Effective atoms seen through the front end: vec(Y) = C @ vec(virtual)."""
    return sensing.measurement_operator(fe) @ dic.sensing_matrix()


def _observation_rows(target, fe, dic, mask, atoms):
    if atoms is None:
        atoms = composite_operator(fe, dic)
    y = linalg.vec(target)
    if mask is not None:
        rows = np.asarray(mask, dtype=bool).flatten(order="F")
        return y[rows], atoms[rows]
    return y, atoms


def ra_bomp_observation(y_obs, fe, dic, rank_budget, batch=1, tol=1e-6,
                        atoms=None, mask=None):
    """Sparse recovery fitting the observation matrix directly.

    ``mask`` restricts the fit to observed coordinates; filled-in entries
    are derived data and carry no extra information.
    """
    _check_budget(rank_budget, dic, batch)
    y, atoms = _observation_rows(y_obs, fe, dic, mask, atoms)
    support, gains, res, iters = _omp_core(y, atoms, rank_budget, batch, tol)
    return _build_estimate(support, gains, dic, rank_budget, res, iters)


def gain_only_update(prev, target, dic, fe=None, atoms=None, mask=None):
    """Re-solve path gains on a frozen angular support.

    With ``fe`` (or ``atoms``) the fit runs in the observation domain against
    the composite operator; otherwise against the channel-domain dictionary.
    """
    if not prev.support:
        if fe is not None or atoms is not None:
            return ra_bomp_observation(target, fe, dic, prev.rank_budget,
                                       atoms=atoms, mask=mask)
        return ra_bomp(target, dic, prev.rank_budget)
    if fe is not None or atoms is not None:
        y, atoms = _observation_rows(target, fe, dic, mask, atoms)
    else:
        y, atoms = linalg.vec(target), dic.sensing_matrix()
    sub = atoms[:, prev.support]
    gains, _, _, _ = np.linalg.lstsq(sub, y, rcond=None)
    residual_norm = float(np.linalg.norm(y - sub @ gains))
    return _build_estimate(prev.support, gains, dic, prev.rank_budget, residual_norm, 0)


def should_gain_only(rank_t, rank_prev, prev, target, dic, corr_threshold=0.95,
                     fe=None, atoms=None, mask=None):
    """True when the rank is stable and the old support still explains the target."""
    if prev is None or not prev.support or rank_t != rank_prev:
        return False
    if fe is not None or atoms is not None:
        y, atoms = _observation_rows(target, fe, dic, mask, atoms)
    else:
        y, atoms = linalg.vec(target), dic.sensing_matrix()
    y_energy = float(np.linalg.norm(y) ** 2)
    if y_energy == 0.0:
        return True
    sub = atoms[:, prev.support]
    gains, _, _, _ = np.linalg.lstsq(sub, y, rcond=None)
    captured = float(np.linalg.norm(sub @ gains) ** 2)
    return captured >= corr_threshold * y_energy


def significant_path_count(target, fe, dic, noise_std, max_count, margin=1.5,
                           mask=None):
    """Number of angular components above the matched-filter noise floor.

    Greedy orthogonalised counting: peel atoms while the strongest
    normalised correlation exceeds the expected maximum of the noise
    correlations. The dictionary's processing gain makes this detector far
    more sensitive than the singular spectrum near the noise floor. A
    result equal to ``max_count`` means the peeling never cleared the
    threshold (coherent-dictionary runaway) and should be ignored.
    """
    if noise_std <= 0.0:
        raise ValueError("matched-filter counting requires a known noise level")
    y, atoms = _observation_rows(target, fe, dic, mask, None)
    norms = np.linalg.norm(atoms, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    tau = margin * noise_std * np.sqrt(np.log(max(y.size, 2)))
    count = 0
    support = []
    residual = y
    while count < max_count:
        corr = np.abs(atoms.conj().T @ residual) / norms
        peak = int(np.argmax(corr))
        if corr[peak] <= tau or peak in support:
            break
        support.append(peak)
        sub = atoms[:, support]
        gains, _, _, _ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ gains
        count += 1
    return max(count, 1)


def extract_parameters(est, dic):
    """Decode the support into (aoa, aod, gain) triples, largest gain first."""
    order = np.argsort(-np.abs(est.gains), kind="stable")
    out = []
    for idx in order:
        i, j = _decode(est.support[idx], dic.n_aoa)
        out.append((float(dic.grid_aoas[i]), float(dic.grid_aods[j]), complex(est.gains[idx])))
    return out


def reconstruct(est, dic):
    """Map the sparse beamspace estimate back to the antenna domain."""
    return dic.theta_ms @ est.virtual @ dic.theta_bs.conj().T
