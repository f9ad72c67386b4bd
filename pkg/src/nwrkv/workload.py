"""YCSB-style transaction generators with Zipfian key choice."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace

MASK64 = (1 << 64) - 1

READ = "read"
WRITE = "write"


@dataclass(frozen=True)
class Mix:
    read: int
    blind_write: int
    rmw: int

    def __post_init__(self) -> None:
        if min(self.read, self.blind_write, self.rmw) < 0 or self.read + self.blind_write + self.rmw != 100:
            raise ValueError(f"mix must be non-negative and sum to 100, got {self}")


@dataclass(frozen=True)
class WorkloadConfig:
    records: int = 100_000
    ops_per_txn: int = 4
    mix: Mix = Mix(50, 50, 0)
    theta: float = 0.9
    value_size: int = 8
    seed: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must be in [0, 1)")
        if self.records < 1 or self.ops_per_txn < 1:
            raise ValueError("records and ops_per_txn must be positive")
        if self.ops_per_txn > self.records:
            raise ValueError("ops_per_txn cannot exceed records (keys are distinct per txn)")


PRESETS: dict[str, WorkloadConfig] = {
    "ycsb_a": WorkloadConfig(mix=Mix(50, 50, 0)),
    "ycsb_b": WorkloadConfig(mix=Mix(95, 5, 0)),
    # every write reads its key first, so nothing is omittable
    "rmw": WorkloadConfig(mix=Mix(0, 0, 100)),
}


def presets() -> dict[str, WorkloadConfig]:
    return dict(PRESETS)


def preset(name: str, **overrides) -> WorkloadConfig:
    key = name.replace("-", "_").lower()
    if key not in PRESETS:
        raise KeyError(f"unknown workload {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[key], **overrides)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def worker_seed(seed: int, worker: int) -> int:
    return splitmix64(splitmix64(seed & MASK64) ^ (worker & MASK64))


class Zipf:
    """Ranks in ``[1, n]`` with ``P(k) ~ k**-theta``, by rejection-inversion.

    Follows the sampler of Hörmann and Derflinger as used in Apache Commons
    RNG.  ``theta = 0`` degenerates to uniform.
    """

    def __init__(self, n: int, theta: float, rng: random.Random) -> None:
        if n < 1:
            raise ValueError("n must be positive")
        self.n = n
        self.theta = theta
        self.rng = rng
        self._h_x1 = self._h_integral(1.5) - 1.0
        self._h_n = self._h_integral(n + 0.5)
        self._s = 2.0 - self._h_integral_inverse(self._h_integral(2.5) - self._h(2.0))

    def _h(self, x: float) -> float:
        return math.exp(-self.theta * math.log(x))

    def _h_integral(self, x: float) -> float:
        log_x = math.log(x)
        return _helper2((1.0 - self.theta) * log_x) * log_x

    def _h_integral_inverse(self, x: float) -> float:
        t = x * (1.0 - self.theta)
        if t < -1.0:
            t = -1.0
        return math.exp(_helper1(t) * x)

    def next(self) -> int:
        while True:
            u = self._h_n + self.rng.random() * (self._h_x1 - self._h_n)
            x = self._h_integral_inverse(u)
            k = int(x + 0.5)
            if k < 1:
                k = 1
            elif k > self.n:
                k = self.n
            if k - x <= self._s or u >= self._h_integral(k + 0.5) - self._h(k):
                return k


def _helper1(x: float) -> float:
    # log1p(x) / x, stable near 0
    if abs(x) > 1e-8:
        return math.log1p(x) / x
    return 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x))


def _helper2(x: float) -> float:
    # expm1(x) / x, stable near 0
    if abs(x) > 1e-8:
        return math.expm1(x) / x
    return 1.0 + x * 0.5 * (1.0 + x * (1.0 / 3.0) * (1.0 + 0.25 * x))


def harmonic_weight(n: int, theta: float, rank: int = 1) -> float:
    """Exact probability of ``rank`` under the normalized power law."""
    norm = math.fsum(k ** -theta for k in range(1, n + 1))
    return rank ** -theta / norm


class Generator:
    """Per-worker transaction generator; not thread-safe."""

    def __init__(self, config: WorkloadConfig, worker: int = 0) -> None:
        self.config = config
        self.rng = random.Random(worker_seed(config.seed, worker))
        self.zipf = Zipf(config.records, config.theta, self.rng)
        m = config.mix
        self._cut_read = m.read
        self._cut_write = m.read + m.blind_write

    def next_key(self) -> int:
        return self.zipf.next() - 1

    def next_txn(self) -> list[tuple[str, int]]:
        """``ops_per_txn`` operations on distinct keys; a rmw expands to read then write."""
        ops: list[tuple[str, int]] = []
        used: set[int] = set()
        for _ in range(self.config.ops_per_txn):
            key = self.next_key()
            while key in used:
                key = self.next_key()
            used.add(key)
            roll = self.rng.randrange(100)
            if roll < self._cut_read:
                ops.append((READ, key))
            elif roll < self._cut_write:
                ops.append((WRITE, key))
            else:
                ops.append((READ, key))
                ops.append((WRITE, key))
        return ops

    def value(self) -> bytes:
        return self.rng.getrandbits(8 * self.config.value_size).to_bytes(self.config.value_size, "little")


def parse_config_file(text: str) -> dict[str, str]:
    """``key = value`` lines, ``#`` comments."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def config_from_mapping(base: WorkloadConfig, values: dict[str, str]) -> WorkloadConfig:
    kw: dict[str, object] = {}
    for k, v in values.items():
        if k in ("records", "ops_per_txn", "value_size", "seed"):
            kw[k] = int(v)
        elif k == "theta":
            kw[k] = float(v)
        elif k == "mix":
            parts = [int(p) for p in v.replace("/", ",").split(",")]
            kw[k] = Mix(*parts)
        else:
            raise ValueError(f"unknown workload setting {k!r}")
    return replace(base, **kw)
