"""The module for miscellaneous functions."""

import hashlib
import os

import numpy as np


def derive_seed(*parts):
    """Derives a 64-bit seed from the given parts.

    The parts are hashed with SHA-256, so the seed for (master, round, client)
    does not depend on the order in which clients or sweep cells are executed.

    Args:
        parts: any values with a stable string representation
    Returns:
        int: unsigned 64-bit seed
    """
    key = '/'.join(repr(p) for p in parts).encode('utf-8')
    return int.from_bytes(hashlib.sha256(key).digest()[:8], 'little')


def rng(seed):
    """Returns a numpy random generator for the given seed."""
    return np.random.default_rng(int(seed))


def directory(*paths):
    """Makes a directory specified by one or more args.

    Creates the directory if it doesn't exist.

    Args:
        paths ([string]): the full path for the directory
    Returns:
        string: the full path for the directory
    """
    d = os.path.join(*paths)
    os.makedirs(d, exist_ok=True)
    return d
