"""Root-seed fan-out.

Every run draws all randomness from a single root seed. Consumers get
child seeds derived as ``SeedSequence([root, *path])`` where ``path`` is a
tuple of small integers naming the consumer, so adding a consumer never
shifts the streams of existing ones.

Stream ids: SPLIT=1, CLASSIFIER=2, AGGREGATOR=3, SYNTH=4, NOISE=5,
VERIFY=6. Trial ``i`` of a multi-seed run uses the path ``(TRIAL, i)``
as a prefix, i.e. ``child_seed(root, TRIAL, i, CLASSIFIER)``.
"""

import numpy as np

SPLIT = 1
CLASSIFIER = 2
AGGREGATOR = 3
SYNTH = 4
NOISE = 5
VERIFY = 6
TRIAL = 7


def child_seed(root: int, *path: int) -> int:
    """Derive a deterministic 32-bit child seed from a root seed and a path."""
    seq = np.random.SeedSequence([int(root), *(int(p) for p in path)])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def child_rng(root: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root), *(int(p) for p in path)]))
