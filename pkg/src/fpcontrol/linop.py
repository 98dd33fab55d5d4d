"""Tagged sparse operators bound to a grid.

Discrete fields are plain 1d numpy arrays of length ``grid.k``; operators
carry their CSR matrix together with a tag naming what they discretize and
the grid they belong to.  The tag is what downstream constructors check so
that, e.g., the generator can only be built from an adjoint-generator
assembly.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class LinOp:
    """A sparse matrix with a role tag and the grid it discretizes."""

    matrix: sp.csr_matrix
    tag: str
    grid: object

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if vec.shape[0] != self.matrix.shape[1]:
            raise ValueError(
                f"operand length {vec.shape[0]} does not match operator "
                f"size {self.matrix.shape[1]}"
            )
        return self.matrix @ vec

    def __matmul__(self, vec):
        return self.apply(vec)

    def frobenius(self) -> float:
        return float(sp.linalg.norm(self.matrix, "fro"))


def as_matrix(op) -> sp.csr_matrix:
    """Accept a LinOp or a raw sparse/dense matrix; return CSR."""
    if isinstance(op, LinOp):
        return op.matrix
    return sp.csr_matrix(op)
