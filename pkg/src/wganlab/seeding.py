"""Named random streams derived from one root seed.

Every consumer (dataset, noise, init, judge, ...) gets its own
``numpy.random.Generator`` whose seed is a pure function of the root seed and
a fixed label, so adding a stream never perturbs the others.
"""

import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(root_seed: int, label: str, *index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(label_key(label),) + tuple(int(i) for i in index))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(root_seed: int, label: str, *index: int) -> int:
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(label_key(label),) + tuple(int(i) for i in index))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
