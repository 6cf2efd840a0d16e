"""Named per-stage random streams derived from one master seed."""

import zlib

import numpy as np

STAGES = ("mask", "gumbel", "init", "synth", "shuffle", "dropout", "split", "sample")


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    """Independent Philox stream for ``stage``.

    The stage name is hashed into the spawn key, so reseeding one stage
    leaves the others untouched.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(stage.encode()),))
    return np.random.Generator(np.random.Philox(ss))
