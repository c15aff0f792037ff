"""Deterministic random-stream derivation.

Every random draw in the package comes from a Philox counter-based generator
whose key is derived from ``(base_seed, task_label, index)``. Each logical
task (one sampling pass, one corruption pass, one training run, ...) owns its
own stream and consumes it in a fixed vectorized order, so results depend
only on the base seed and the task structure, never on how tasks are
scheduled across workers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_entropy(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(base_seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the Philox generator for one logical task.

    ``label`` names the task (e.g. ``"sample/model"``); ``index`` separates
    repetitions of the same task kind. The same triple always yields the
    same stream.
    """
    ss = np.random.SeedSequence((int(base_seed), _label_entropy(label), int(index)))
    return np.random.Generator(np.random.Philox(ss))
