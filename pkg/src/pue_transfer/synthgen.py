"""Synthetic emitters, frames and pre-seeded knowledge for the simulation study."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .akd import AKD, AkdEntry, AkdParams
from .core import DEFAULT_DIM, TimeFrame


class Role(str, enum.Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"
    ATTACKER = "attacker"


@dataclass(frozen=True)
class DeviceProfile:
    device_id: str
    role: Role
    mean: tuple[float, ...]
    variance: tuple[float, ...]
    victim_id: str | None = None

    def __post_init__(self):
        if any(not v > 0 for v in self.variance):
            raise ValueError("device variances must be positive")
        if (self.role is Role.ATTACKER) != (self.victim_id is not None):
            raise ValueError("exactly the attacker carries a victim_id")

    @property
    def claimed_id(self) -> str:
        return self.victim_id if self.victim_id is not None else self.device_id


@dataclass(frozen=True)
class ScenarioConfig:
    n_devices: int = 8
    n_fingerprints: int = 100
    fingerprints_per_device: int | None = None
    dirichlet_alpha: float = 5.0
    mean_range: tuple[float, float] = (0.0, 10.0)
    variance_range: tuple[float, float] = (0.3, 1.2)
    transfer_fraction: float = 0.1
    attack_enabled: bool = True
    dim: int = DEFAULT_DIM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mean_range", tuple(float(v) for v in self.mean_range))
        object.__setattr__(self, "variance_range", tuple(float(v) for v in self.variance_range))
        lo, hi = self.mean_range
        vlo, vhi = self.variance_range
        if not lo < hi:
            raise ValueError("mean_range must be a non-degenerate interval")
        if not 0 < vlo < vhi:
            raise ValueError("variance_range must be a non-degenerate positive interval")
        if self.n_devices < 1 or self.n_fingerprints < 1 or self.dim < 1:
            raise ValueError("n_devices, n_fingerprints and dim must be positive")
        if self.fingerprints_per_device is not None and self.fingerprints_per_device < 1:
            raise ValueError("fingerprints_per_device must be positive")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be positive")
        if not 0.0 <= self.transfer_fraction <= 1.0:
            raise ValueError("transfer_fraction must lie in [0, 1]")
        if self.attack_enabled and self.n_devices < 2:
            raise ValueError("an attack scenario needs at least two devices")

    @property
    def frame_size(self) -> int:
        if self.fingerprints_per_device is not None:
            return self.fingerprints_per_device * self.n_devices
        return self.n_fingerprints


def gen_devices(cfg: ScenarioConfig, rng: np.random.Generator) -> list[DeviceProfile]:
    """Draw every emitter's mean and variance; with attacks on, the last one spoofs a primary.

    ``n_devices`` counts all emitters, the attacker included.  The first half
    of the legitimate devices (at least one) are primaries.
    """
    lo, hi = cfg.mean_range
    vlo, vhi = cfg.variance_range
    means = rng.uniform(lo, hi, size=(cfg.n_devices, cfg.dim))
    variances = rng.uniform(vlo, vhi, size=(cfg.n_devices, cfg.dim))
    n_legit = cfg.n_devices - 1 if cfg.attack_enabled else cfg.n_devices
    n_primary = max(1, n_legit // 2)
    victim = int(rng.integers(n_primary)) if cfg.attack_enabled else None
    devices = []
    for k in range(cfg.n_devices):
        dev_id = f"dev{k:03d}"
        if k < n_legit:
            role = Role.PRIMARY if k < n_primary else Role.SECONDARY
            devices.append(DeviceProfile(dev_id, role, tuple(means[k]), tuple(variances[k])))
        else:
            devices.append(DeviceProfile(dev_id, Role.ATTACKER, tuple(means[k]), tuple(variances[k]),
                                         victim_id=f"dev{victim:03d}"))
    return devices


def gen_frame(devices: list[DeviceProfile], cfg: ScenarioConfig, rng: np.random.Generator,
              frame_index: int = 0) -> TimeFrame:
    """Sample one frame of fingerprints with ground truth attached.

    Device shares come from a symmetric Dirichlet, unless a fixed number of
    fingerprints per device is configured.
    """
    if not devices:
        raise ValueError("need at least one device")
    k = len(devices)
    if cfg.fingerprints_per_device is not None:
        owner = np.repeat(np.arange(k), cfg.fingerprints_per_device)
    else:
        weights = rng.dirichlet(np.full(k, cfg.dirichlet_alpha))
        owner = rng.choice(k, size=cfg.n_fingerprints, p=weights)
    means = np.array([d.mean for d in devices])
    sds = np.sqrt(np.array([d.variance for d in devices]))
    noise = rng.standard_normal((owner.size, means.shape[1]))
    feats = means[owner] + sds[owner] * noise
    claimed = [devices[o].claimed_id for o in owner]
    truth = [devices[o].device_id for o in owner]
    return TimeFrame(feats, claimed, truth, frame_index)


def seed_indices(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    count = math.floor(rho * n + 1e-9)
    return np.sort(rng.choice(n, size=count, replace=False)) if count else np.zeros(0, dtype=np.int64)


def seed_akd(frame: TimeFrame, rho: float, params: AkdParams, rng: np.random.Generator):
    """Pre-seed a database with correctly labeled near-duplicates of a frame fraction.

    Returns ``(akd, indices)``.  Each selected fingerprint is jittered by
    Gaussian noise of scale ``epsilon / 4`` (redrawn until it stays within
    the similarity threshold) and labeled by its true device; the weight is
    ``w_init + w_step_inc``.
    """
    if frame.truth_ids is None:
        raise ValueError("seeding needs a frame with ground truth")
    params_eps = params.require_epsilon()
    radius = params.metric.radius(params_eps)
    idx = seed_indices(len(frame), rho, rng)
    device_label = dict(zip(sorted(set(frame.truth_ids)), range(len(set(frame.truth_ids)))))
    entries = []
    for i in idx:
        x = frame.features[i]
        while True:
            jitter = rng.normal(0.0, radius / 4.0, size=x.shape)
            if np.sqrt(np.dot(jitter, jitter)) <= radius:
                break
        entries.append(AkdEntry(tuple(x + jitter), frame.claimed_ids[i],
                                device_label[frame.truth_ids[i]], params.w_init + params.w_step_inc))
    return AKD(entries, frame.dim), idx
