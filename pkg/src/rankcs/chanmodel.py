"""Clustered time-varying mmWave channel generator and angular dictionaries.

The channel at each time instance is a sum of per-delay taps; every ray in
every cluster contributes an outer product of receive/transmit array
steering vectors weighted by its complex gain and a raised-cosine pulse
sample. On-grid mode snaps all ray angles to the dictionary grid so the
channel rank equals the number of distinct (AoA, AoD) grid pairs.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg


@dataclass
class ChannelConfig:
    n_bs: int = 8
    n_ms: int = 8
    n_clusters: int = 2
    rays_per_cluster: int = 1
    angle_spread_deg: float = 0.0
    carrier_hz: float = 28e9
    sample_period_s: float = 1e-7
    delay_taps: int = 1
    speed_kmh: float = 120.0
    spacing_ratio: float = 0.5
    path_loss: float = 1.0
    rolloff: float = 0.25
    on_grid: bool = True
    birth_prob: float = 0.0
    death_prob: float = 0.0
    # Angular drift per instance is drift_scale * speed_kmh * sample_period_s
    # radians (std of the Gaussian step); drift_std_rad overrides when set.
    drift_scale: float = 1e3
    drift_std_rad: float | None = None

    def __post_init__(self):
        if self.spacing_ratio <= 0:
            raise ValueError("spacing_ratio must be positive")
        if self.delay_taps < 1:
            raise ValueError("delay_taps must be >= 1")
        if self.n_clusters < 1 or self.rays_per_cluster < 1:
            raise ValueError("need at least one cluster and one ray")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in [0, 1]")

    @property
    def drift_std(self):
        if self.drift_std_rad is not None:
            return self.drift_std_rad
        return self.drift_scale * self.speed_kmh * self.sample_period_s

    @property
    def angle_spread(self):
        return np.deg2rad(self.angle_spread_deg)


@dataclass
class Ray:
    gain: complex
    aoa_offset: float
    aod_offset: float
    ray_delay: float


@dataclass
class PathCluster:
    mean_aoa: float
    mean_aod: float
    cluster_delay: float
    rays: list

    def __post_init__(self):
        if not self.rays:
            raise ValueError("cluster must contain at least one ray")


@dataclass
class AngularDictionary:
    """Receive/transmit steering grids and their Kronecker sensing matrix."""

    theta_ms: np.ndarray
    theta_bs: np.ndarray
    grid_aoas: np.ndarray
    grid_aods: np.ndarray
    _sensing: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_aoa(self):
        return self.theta_ms.shape[1]

    @property
    def n_aod(self):
        return self.theta_bs.shape[1]

    @property
    def n_atoms(self):
        return self.n_aoa * self.n_aod

    def sensing_matrix(self):
        """kron(conj(theta_bs), theta_ms): vec(H) = A @ vec(virtual)."""
        if self._sensing is None:
            self._sensing = linalg.kron(self.theta_bs.conj(), self.theta_ms)
        return self._sensing


@dataclass
class ChannelRealization:
    h: np.ndarray
    taps: list
    clusters: list
    true_rank: int
    time_index: int


def steering_vector(theta, n, spacing_ratio=0.5):
    """ULA response: entry k is exp(j*2*pi*spacing_ratio*k*sin(theta))/sqrt(n)."""
    if n < 1:
        raise ValueError("antenna count must be >= 1")
    k = np.arange(n)
    return np.exp(2j * np.pi * spacing_ratio * k * np.sin(theta)) / np.sqrt(n)


def _sin_grid(size):
    # Offset uniform grid in the sin domain over (-1, 1); DFT-like when
    # size equals the antenna count and spacing_ratio is 1/2.
    return (2.0 * np.arange(size) + 1.0) / size - 1.0


def build_dictionary(cfg, l1, l2):
    """Steering-vector grids uniform in sin-angle over (-1, 1)."""
    if l1 < 2 or l2 < 2:
        raise ValueError("grid sizes must be >= 2")
    grid_aoas = np.arcsin(_sin_grid(l1))
    grid_aods = np.arcsin(_sin_grid(l2))
    theta_ms = np.stack(
        [steering_vector(a, cfg.n_ms, cfg.spacing_ratio) for a in grid_aoas], axis=1
    )
    theta_bs = np.stack(
        [steering_vector(a, cfg.n_bs, cfg.spacing_ratio) for a in grid_aods], axis=1
    )
    return AngularDictionary(theta_ms, theta_bs, grid_aoas, grid_aods)


def raised_cosine(x, ts, beta):
    """Raised-cosine pulse sample at offset x for symbol period ts."""
    t = np.asarray(x, dtype=float) / ts
    out = np.sinc(t)
    if beta > 0.0:
        denom = 1.0 - (2.0 * beta * t) ** 2
        singular = np.isclose(np.abs(2.0 * beta * t), 1.0)
        safe = np.where(singular, 1.0, denom)
        out = out * np.cos(np.pi * beta * t) / safe
        # removable singularity: limit value (pi/4)*sinc(1/(2*beta))
        out = np.where(singular, (np.pi / 4.0) * np.sinc(1.0 / (2.0 * beta)), out)
    return out


def snap_to_grid(angle, grid):
    """Index of the nearest grid angle."""
    return int(np.argmin(np.abs(np.asarray(grid) - angle)))


def _ray_angles(cluster, dic, on_grid):
    """Per-ray (aoa, aod) after applying offsets and optional grid snapping."""
    pairs = []
    for ray in cluster.rays:
        aoa = cluster.mean_aoa - ray.aoa_offset
        aod = cluster.mean_aod - ray.aod_offset
        if on_grid:
            ia = snap_to_grid(aoa, dic.grid_aoas)
            ja = snap_to_grid(aod, dic.grid_aods)
            pairs.append((dic.grid_aoas[ia], dic.grid_aods[ja], ia, ja))
        else:
            pairs.append((aoa, aod, None, None))
    return pairs


def assemble_channel(clusters, cfg, dic, time_index=0):
    """Build a ChannelRealization from explicit clusters (deterministic)."""
    scale = np.sqrt(cfg.n_bs * cfg.n_ms / cfg.path_loss)
    taps = [
        np.zeros((cfg.n_ms, cfg.n_bs), dtype=np.complex128)
        for _ in range(cfg.delay_taps)
    ]
    grid_pairs = set()
    for cluster in clusters:
        pairs = _ray_angles(cluster, dic, cfg.on_grid)
        for ray, (aoa, aod, ia, ja) in zip(cluster.rays, pairs):
            if ia is not None:
                grid_pairs.add((ia, ja))
            outer = np.outer(
                steering_vector(aoa, cfg.n_ms, cfg.spacing_ratio),
                steering_vector(aod, cfg.n_bs, cfg.spacing_ratio).conj(),
            )
            delay = cluster.cluster_delay + ray.ray_delay
            for d in range(cfg.delay_taps):
                w = raised_cosine(d * cfg.sample_period_s - delay, cfg.sample_period_s, cfg.rolloff)
                if w != 0.0:
                    taps[d] += scale * ray.gain * w * outer
    h = np.sum(taps, axis=0)
    if cfg.on_grid:
        true_rank = max(1, len(grid_pairs))
    else:
        true_rank = max(1, linalg.numerical_rank(h))
    return ChannelRealization(h=h, taps=taps, clusters=list(clusters), true_rank=true_rank, time_index=time_index)


def _draw_cluster_means(rng, cfg, dic, existing_idx):
    """Cluster mean angles; in on-grid mode avoid reusing a grid coordinate."""
    for _ in range(64):
        aoa = rng.uniform(-np.pi / 2, np.pi / 2)
        aod = rng.uniform(-np.pi / 2, np.pi / 2)
        if not cfg.on_grid:
            return aoa, aod
        ia = snap_to_grid(aoa, dic.grid_aoas)
        ja = snap_to_grid(aod, dic.grid_aods)
        if all(ia != ea for ea, _ in existing_idx) and all(ja != ej for _, ej in existing_idx):
            existing_idx.append((ia, ja))
            return dic.grid_aoas[ia], dic.grid_aods[ja]
    # grid too small for distinct coordinates; accept the collision
    existing_idx.append((ia, ja))
    return dic.grid_aoas[ia], dic.grid_aods[ja]


def _draw_cluster(rng, cfg, dic, existing_idx):
    aoa, aod = _draw_cluster_means(rng, cfg, dic, existing_idx)
    max_delay = (cfg.delay_taps - 1) * cfg.sample_period_s
    cluster_delay = rng.uniform(0.0, max_delay) if max_delay > 0 else 0.0
    spread = cfg.angle_spread
    rays = []
    for _ in range(cfg.rays_per_cluster):
        gain = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0)
        off_a = rng.uniform(-spread, spread) if spread > 0 else 0.0
        off_d = rng.uniform(-spread, spread) if spread > 0 else 0.0
        ray_delay = rng.uniform(0.0, cfg.sample_period_s / 2) if cfg.delay_taps > 1 else 0.0
        rays.append(Ray(gain=gain, aoa_offset=off_a, aod_offset=off_d, ray_delay=ray_delay))
    return PathCluster(mean_aoa=aoa, mean_aod=aod, cluster_delay=cluster_delay, rays=rays)


def generate_channel(cfg, dic, time_index, rng_seed):
    """Draw a fresh channel realization; deterministic for a fixed seed."""
    rng = np.random.default_rng(rng_seed)
    existing_idx = []
    clusters = [_draw_cluster(rng, cfg, dic, existing_idx) for _ in range(cfg.n_clusters)]
    return assemble_channel(clusters, cfg, dic, time_index=time_index)


def evolve_channel(prev, cfg, dic, rng_seed):
    """Advance one instance: redraw gains, drift angles, birth/death clusters."""
    rng = np.random.default_rng(rng_seed)
    drift = cfg.drift_std
    clusters = []
    for cluster in prev.clusters:
        rays = [
            replace(
                ray,
                gain=(rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0),
            )
            for ray in cluster.rays
        ]
        aoa = cluster.mean_aoa + (rng.normal(0.0, drift) if drift > 0 else 0.0)
        aod = cluster.mean_aod + (rng.normal(0.0, drift) if drift > 0 else 0.0)
        aoa = float(np.clip(aoa, -np.pi / 2 + 1e-9, np.pi / 2 - 1e-9))
        aod = float(np.clip(aod, -np.pi / 2 + 1e-9, np.pi / 2 - 1e-9))
        clusters.append(replace(cluster, mean_aoa=aoa, mean_aod=aod, rays=rays))
    if len(clusters) > 1 and rng.uniform() < cfg.death_prob:
        clusters.pop(rng.integers(len(clusters)))
    if rng.uniform() < cfg.birth_prob:
        existing_idx = []
        if cfg.on_grid:
            existing_idx = [
                (snap_to_grid(c.mean_aoa, dic.grid_aoas), snap_to_grid(c.mean_aod, dic.grid_aods))
                for c in clusters
            ]
        clusters.append(_draw_cluster(rng, cfg, dic, existing_idx))
    return assemble_channel(clusters, cfg, dic, time_index=prev.time_index + 1)
