"""Canonical orthonormal signal bases.

The synthetic renderers write class latents into payloads through these
bases, and the calibrated tokenizer initialization analyzes payloads with the
same bases. This shared, public convention is the desk-scale stand-in for a
pretrained universal encoder whose embeddings arrive already organized; all
of it remains trainable/overridable downstream.
"""

from __future__ import annotations

import numpy as np


def dct_atom(u: int, v: int, size: int) -> np.ndarray:
    """Orthonormal 2D DCT-II basis image of shape [size, size]."""
    x = np.arange(size)
    cu = np.sqrt(1.0 / size) if u == 0 else np.sqrt(2.0 / size)
    cv = np.sqrt(1.0 / size) if v == 0 else np.sqrt(2.0 / size)
    row = cu * np.cos((2 * x + 1) * u * np.pi / (2 * size))
    col = cv * np.cos((2 * x + 1) * v * np.pi / (2 * size))
    return np.outer(row, col)


def patch_basis(size: int, count: int) -> np.ndarray:
    """First ``count`` non-constant DCT atoms, zigzag order, as [count, size*size].

    The DC atom is excluded so constant offsets (illumination, environment
    background) stay orthogonal to the signal coordinates.
    """
    if count > size * size - 1:
        raise ValueError(f"at most {size * size - 1} non-constant atoms for size {size}")
    order = sorted(
        ((u, v) for u in range(size) for v in range(size) if (u, v) != (0, 0)),
        key=lambda uv: (uv[0] + uv[1], uv[0]),
    )
    atoms = [dct_atom(u, v, size).reshape(-1) for u, v in order[:count]]
    return np.stack(atoms)


def sequence_basis(length: int, count: int) -> np.ndarray:
    """Orthonormal non-constant cosine atoms over a 1D window, [count, length]."""
    if count > length - 1:
        raise ValueError(f"at most {length - 1} non-constant atoms for length {length}")
    t = np.arange(length)
    atoms = []
    for k in range(1, count + 1):
        atom = np.sqrt(2.0 / length) * np.cos((2 * t + 1) * k * np.pi / (2 * length))
        atoms.append(atom)
    return np.stack(atoms)
