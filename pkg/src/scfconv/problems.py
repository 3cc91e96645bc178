"""Problem definitions: the affine operator A(P) = A0 + L(P) and benchmark families.

The linear part L is kept in one of three representations (Hadamard mask,
diagonal map, general vectorized matrix) rather than always densified: the
mask and diagonal forms are O(n^2) to apply, which keeps the Laplacian family
cheap at n = 60.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .matops import require_hermitian, vech_inv


@dataclass(frozen=True)
class HadamardMask:
    """L(P) = mask o P (entrywise product)."""

    mask: np.ndarray

    kind = "hadamard"

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.mask * p


@dataclass(frozen=True)
class DiagonalMap:
    """L(P) = alpha * Diag(coeff @ diag(P)); depends only on the diagonal of P."""

    coeff: np.ndarray
    alpha: float = 1.0

    kind = "diagonal_map"

    @property
    def n(self) -> int:
        return self.coeff.shape[0]

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.alpha * np.diag(self.coeff @ np.diagonal(p))


@dataclass(frozen=True)
class GeneralVec:
    """L given by its action on column-major vectorization: vec(L(P)) = matrix @ vec(P)."""

    matrix: np.ndarray

    kind = "general_vec"

    @property
    def n(self) -> int:
        n = int(round(np.sqrt(self.matrix.shape[0])))
        return n

    def apply(self, p: np.ndarray) -> np.ndarray:
        n = p.shape[0]
        if self.matrix.shape != (n * n, n * n):
            raise ValueError(
                f"operator matrix shape {self.matrix.shape} does not match n={n}"
            )
        v = self.matrix @ p.ravel(order="F")
        return v.reshape(n, n, order="F")


OperatorSpec = Union[HadamardMask, DiagonalMap, GeneralVec]


def apply_L(op: OperatorSpec, p) -> np.ndarray:
    """Apply the linear map L to a square matrix, with dimension checks."""
    p = np.asarray(p)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {p.shape}")
    if p.shape[0] != op.n:
        raise ValueError(f"dimension mismatch: operator is n={op.n}, matrix is n={p.shape[0]}")
    return op.apply(p)


def operator_matrix(op: OperatorSpec, n: int) -> np.ndarray:
    """Dense n^2 x n^2 matrix of L acting on column-major vec coordinates."""
    out = np.zeros((n * n, n * n), dtype=complex)
    basis = np.zeros((n, n))
    for j in range(n * n):
        basis.flat = 0.0
        basis[j % n, j // n] = 1.0  # column-major basis element
        out[:, j] = apply_L(op, basis).ravel(order="F")
    return out


def assemble_Lprime(op: OperatorSpec, n: int) -> np.ndarray:
    """The n^2 x m matrix with column j = vec(L(vech_inv(e_j)))."""
    m = n * (n + 1) // 2
    out = np.zeros((n * n, m), dtype=complex)
    ej = np.zeros(m)
    for j in range(m):
        ej.flat = 0.0
        ej[j] = 1.0
        out[:, j] = apply_L(op, vech_inv(ej)).ravel(order="F")
    return out


@dataclass
class Problem:
    """A nonlinear eigenvector problem A(P) = A0 + L(P) with occupation count p."""

    a0: np.ndarray
    op: OperatorSpec
    p: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a0 = np.asarray(require_hermitian(self.a0, name="A0"), dtype=complex)
        if not 1 <= self.p < self.n:
            raise ValueError(f"occupation p={self.p} must satisfy 1 <= p < n={self.n}")
        if self.op.n != self.n:
            raise ValueError(
                f"operator dimension {self.op.n} does not match A0 dimension {self.n}"
            )

    @property
    def n(self) -> int:
        return self.a0.shape[0]

    def apply(self, density: np.ndarray) -> np.ndarray:
        """Evaluate A(P) = A0 + L(P)."""
        return self.a0 + apply_L(self.op, density)


def build_illustrative(epsilon: float, d: float = 0.16) -> Problem:
    """3x3 Hadamard-mask family: A0 tridiagonal in epsilon, mask diag(1, 1, 100), p = 1."""
    a0 = np.array(
        [
            [0.0, epsilon, 0.0],
            [epsilon, 1.0 + d, epsilon],
            [0.0, epsilon, 10.0],
        ]
    )
    mask = np.diag([1.0, 1.0, 100.0])
    meta = {"family": "illustrative", "eps": float(epsilon), "d": float(d)}
    return Problem(a0=a0, op=HadamardMask(mask=mask), p=1, meta=meta)


def build_laplacian(
    n: int,
    alpha: float,
    p: int,
    variant: str = "complex",
    h: float | None = None,
) -> Problem:
    """Discretized 1D Laplacian families with a diagonal-only nonlinearity.

    The complex variant adds a convection term i d/dx discretized centrally
    (off-diagonals -1/h^2 +- i/2h); the real variant is the standard symmetric
    tridiagonal.  L(P) = alpha * Diag(Re(A0)^-1 diag(P)).  Grid spacing
    defaults to h = 1/(n+1) (unit interval, homogeneous Dirichlet).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if h is None:
        h = 1.0 / (n + 1)
    diag = 2.0 / h**2
    off = -1.0 / h**2
    if variant == "complex":
        a0 = np.zeros((n, n), dtype=complex)
        np.fill_diagonal(a0, diag)
        idx = np.arange(n - 1)
        a0[idx, idx + 1] = off + 1j / (2.0 * h)
        a0[idx + 1, idx] = off - 1j / (2.0 * h)
    elif variant == "real":
        a0 = np.zeros((n, n))
        np.fill_diagonal(a0, diag)
        idx = np.arange(n - 1)
        a0[idx, idx + 1] = off
        a0[idx + 1, idx] = off
    else:
        raise ValueError(f"unknown Laplacian variant {variant!r}")
    coeff = np.linalg.inv(np.real(a0))
    meta = {
        "family": f"laplacian_{variant}",
        "alpha": float(alpha),
        "h": float(h),
    }
    return Problem(a0=a0, op=DiagonalMap(coeff=coeff, alpha=float(alpha)), p=p, meta=meta)


def _encode_complex_matrix(a: np.ndarray) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def _decode_matrix(data, name: str) -> np.ndarray:
    def decode_entry(entry):
        if isinstance(entry, (int, float)):
            return complex(entry)
        if isinstance(entry, (list, tuple)) and len(entry) == 2:
            return complex(entry[0], entry[1])
        raise ValueError(f"{name}: entries must be numbers or [re, im] pairs")

    a = np.array([[decode_entry(entry) for entry in row] for row in data])
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    if np.all(a.imag == 0):
        return a.real
    return a


def _encode_operator(op: OperatorSpec) -> dict:
    if isinstance(op, HadamardMask):
        return {"kind": "hadamard", "mask": _encode_complex_matrix(op.mask)}
    if isinstance(op, DiagonalMap):
        return {
            "kind": "diagonal_map",
            "coeff": [[float(v) for v in row] for row in np.asarray(op.coeff, dtype=float)],
            "alpha": float(op.alpha),
        }
    if isinstance(op, GeneralVec):
        return {"kind": "general_vec", "matrix": _encode_complex_matrix(op.matrix)}
    raise TypeError(f"unknown operator type {type(op)!r}")


def _decode_operator(data: dict, n: int) -> OperatorSpec:
    kind = data.get("kind")
    if kind == "hadamard":
        mask = _decode_matrix(data["mask"], "mask")
        if mask.shape != (n, n):
            raise ValueError(f"mask shape {mask.shape} does not match n={n}")
        return HadamardMask(mask=mask)
    if kind == "diagonal_map":
        coeff = _decode_matrix(data["coeff"], "coeff")
        if np.iscomplexobj(coeff):
            coeff = coeff.real
        if coeff.shape != (n, n):
            raise ValueError(f"coeff shape {coeff.shape} does not match n={n}")
        return DiagonalMap(coeff=coeff, alpha=float(data.get("alpha", 1.0)))
    if kind == "general_vec":
        matrix = _decode_matrix(data["matrix"], "matrix")
        if matrix.shape != (n * n, n * n):
            raise ValueError(
                f"operator matrix shape {matrix.shape} does not match n^2={n * n}"
            )
        return GeneralVec(matrix=np.asarray(matrix, dtype=complex))
    raise ValueError(f"unknown operator kind {kind!r}")


def save_problem(problem: Problem, path) -> None:
    """Write a problem to the JSON schema (complex entries as [re, im] pairs)."""
    payload = {
        "n": problem.n,
        "p": problem.p,
        "A0": _encode_complex_matrix(problem.a0),
        "operator": _encode_operator(problem.op),
        "meta": problem.meta,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_problem(path) -> Problem:
    """Load a problem from the JSON schema, validating Hermiticity of A0."""
    with open(path) as fh:
        payload = json.load(fh)
    try:
        n = int(payload["n"])
        p = int(payload["p"])
        a0 = _decode_matrix(payload["A0"], "A0")
    except KeyError as exc:
        raise ValueError(f"problem file missing required key: {exc}") from exc
    if a0.shape != (n, n):
        raise ValueError(f"A0 shape {a0.shape} does not match n={n}")
    op = _decode_operator(payload.get("operator", {}), n)
    return Problem(a0=a0, op=op, p=p, meta=dict(payload.get("meta", {})))
