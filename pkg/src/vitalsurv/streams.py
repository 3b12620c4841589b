"""Counter-based random streams keyed by (seed, patient_id, purpose).

Every patient gets independent Philox streams, one per purpose (survival
time, health values, appointment gaps), so a record depends only on the
seed and its own id, never on how many patients were simulated before it.
"""

from __future__ import annotations

import hashlib

import numpy as np

PURPOSES = {"survival": 1, "health": 2, "schedule": 3, "arm": 4, "paths": 5}


def _id_words(patient_id) -> list[int]:
    digest = hashlib.blake2b(str(patient_id).encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, patient_id, purpose: str = "survival") -> np.random.Generator:
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(*_id_words(patient_id), PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(ss))


class PatientStreams:
    """Lazily created per-purpose generators for one patient."""

    def __init__(self, seed: int, patient_id):
        self.seed = int(seed)
        self.patient_id = patient_id
        self._cache: dict[str, np.random.Generator] = {}

    def __getattr__(self, purpose: str) -> np.random.Generator:
        if purpose.startswith("_") or purpose not in PURPOSES:
            raise AttributeError(purpose)
        if purpose not in self._cache:
            self._cache[purpose] = stream(self.seed, self.patient_id, purpose)
        return self._cache[purpose]


def as_streams(rng) -> "PatientStreams | _SharedStreams":
    """Accept either PatientStreams or a plain Generator used for every purpose."""
    if isinstance(rng, PatientStreams):
        return rng
    if isinstance(rng, np.random.Generator):
        return _SharedStreams(rng)
    raise TypeError("rng must be a numpy Generator or PatientStreams")


class _SharedStreams:
    def __init__(self, rng: np.random.Generator):
        self._rng = rng

    def __getattr__(self, purpose: str) -> np.random.Generator:
        if purpose.startswith("_"):
            raise AttributeError(purpose)
        return self._rng
