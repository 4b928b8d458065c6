"""Discrete exterior calculus on periodic base tori and parity-graded form-valued matrices.

A differential form on the base is stored as a map from strictly increasing
axis tuples to coefficient arrays sampled on the grid.  Form-valued matrix
fields (``OperatorForm``) carry the same multi-index structure with a trailing
``(n, n)`` matrix per grid point, plus a Z/2 grading ``(dim_plus, dim_minus)``
of the fibre and a total parity.  Products use the Koszul rule

    (a ⊗ A)(b ⊗ B) = (-1)^{|A| deg b} (a ∧ b) ⊗ AB

where ``|A|`` is the matrix parity of the component ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, Tuple

import numpy as np

MultiIndex = Tuple[int, ...]

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class BaseGrid:
    """Uniform periodic grid on the torus ``(R / 2πZ)^dim``.

    ``stencil`` selects the discrete partial derivative: ``"centered"`` for the
    second-order periodic central difference, ``"spectral"`` for the FFT
    derivative (Nyquist mode dropped).
    """

    dim: int
    points_per_axis: int = 8
    stencil: str = "centered"

    def __post_init__(self):
        if self.dim not in (0, 1, 2):
            raise ValueError(f"base dimension must be 0, 1 or 2, got {self.dim}")
        if self.dim > 0 and self.points_per_axis < 8:
            raise ValueError("points_per_axis must be at least 8")
        if self.stencil not in ("centered", "spectral"):
            raise ValueError(f"unknown stencil {self.stencil!r}")

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / self.points_per_axis

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        if self.dim == 0:
            return ()
        axis = self.spacing * np.arange(self.points_per_axis)
        return tuple(np.meshgrid(*([axis] * self.dim), indexing="ij"))

    def multi_indices(self, degree: int) -> list:
        return list(combinations(range(self.dim), degree))

    def with_points(self, n: int) -> "BaseGrid":
        return BaseGrid(self.dim, n, self.stencil)


def merge_indices(first: MultiIndex, second: MultiIndex):
    """Return ``(sign, sorted)`` with ``dx^first ∧ dx^second = sign dx^sorted``.

    Returns ``None`` when the indices overlap.
    """
    if set(first) & set(second):
        return None
    seq = list(first) + list(second)
    inversions = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])
    return (-1) ** inversions, tuple(sorted(seq))


def partial_derivative(values: np.ndarray, axis: int, grid: BaseGrid) -> np.ndarray:
    """Periodic derivative along base ``axis`` of an array whose leading axes are the grid."""
    h = grid.spacing
    if grid.stencil == "centered":
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * h)
    n = grid.points_per_axis
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    spectrum = np.fft.fft(values, axis=axis) * (1j * k).reshape(shape)
    return np.fft.ifft(spectrum, axis=axis)


def _as_field(values, grid: BaseGrid, trailing: Tuple[int, ...] = ()) -> np.ndarray:
    arr = np.asarray(values, dtype=complex)
    return np.array(np.broadcast_to(arr, grid.shape + trailing), dtype=complex)


class FormField:
    """Differential form on a base grid, possibly of mixed degree."""

    def __init__(self, grid: BaseGrid, coefficients: Dict[MultiIndex, np.ndarray] | None = None):
        self.grid = grid
        self.coefficients: Dict[MultiIndex, np.ndarray] = {}
        for idx, values in (coefficients or {}).items():
            idx = tuple(idx)
            if list(idx) != sorted(set(idx)) or any(i < 0 or i >= grid.dim for i in idx):
                raise ValueError(f"invalid multi-index {idx} for base dimension {grid.dim}")
            self.coefficients[idx] = _as_field(values, grid)

    @classmethod
    def constant(cls, grid: BaseGrid, value, index: MultiIndex = ()) -> "FormField":
        return cls(grid, {tuple(index): np.full(grid.shape, value, dtype=complex)})

    @classmethod
    def zero(cls, grid: BaseGrid) -> "FormField":
        return cls(grid, {})

    @property
    def degrees(self) -> list:
        return sorted({len(i) for i in self.coefficients})

    @property
    def degree(self) -> int:
        degs = self.degrees
        if len(degs) > 1:
            raise ValueError(f"mixed-degree form with degrees {degs}")
        return degs[0] if degs else 0

    def component(self, index: MultiIndex) -> np.ndarray:
        index = tuple(index)
        if index in self.coefficients:
            return self.coefficients[index]
        return np.zeros(self.grid.shape, dtype=complex)

    def part(self, degree: int) -> "FormField":
        return FormField(self.grid, {i: v for i, v in self.coefficients.items() if len(i) == degree})

    def max_abs(self) -> float:
        if not self.coefficients:
            return 0.0
        return max(float(np.max(np.abs(v))) for v in self.coefficients.values())

    def _combine(self, other: "FormField", sign: float) -> "FormField":
        if other.grid != self.grid:
            raise ValueError("forms live on different grids")
        out = {i: v.copy() for i, v in self.coefficients.items()}
        for i, v in other.coefficients.items():
            out[i] = out[i] + sign * v if i in out else sign * v
        return FormField(self.grid, out)

    def __add__(self, other: "FormField") -> "FormField":
        return self._combine(other, 1.0)

    def __sub__(self, other: "FormField") -> "FormField":
        return self._combine(other, -1.0)

    def __neg__(self) -> "FormField":
        return FormField(self.grid, {i: -v for i, v in self.coefficients.items()})

    def __mul__(self, scalar) -> "FormField":
        return FormField(self.grid, {i: scalar * v for i, v in self.coefficients.items()})

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"FormField(dim={self.grid.dim}, n={self.grid.points_per_axis}, indices={sorted(self.coefficients)})"


class OperatorForm:
    """Form-valued matrix field with a Z/2-graded fibre ``C^{p} ⊕ C^{m}``.

    ``blocks[I]`` has shape ``grid.shape + (p + m, p + m)``.  ``parity`` is the
    total parity; the matrix parity of the component at ``I`` is
    ``(parity + len(I)) % 2``.
    """

    def __init__(self, grid: BaseGrid, graded_dims: Tuple[int, int],
                 blocks: Dict[MultiIndex, np.ndarray] | None = None, parity: int = 0):
        self.grid = grid
        self.graded_dims = (int(graded_dims[0]), int(graded_dims[1]))
        self.parity = int(parity) % 2
        n = self.n
        self.blocks: Dict[MultiIndex, np.ndarray] = {}
        for idx, values in (blocks or {}).items():
            idx = tuple(idx)
            if list(idx) != sorted(set(idx)) or any(i < 0 or i >= grid.dim for i in idx):
                raise ValueError(f"invalid multi-index {idx} for base dimension {grid.dim}")
            arr = np.asarray(values, dtype=complex)
            if arr.shape[-2:] != (n, n):
                raise ValueError(f"block at {idx} has shape {arr.shape[-2:]}, expected {(n, n)}")
            self.blocks[idx] = _as_field(arr, grid, (n, n))

    @property
    def n(self) -> int:
        return self.graded_dims[0] + self.graded_dims[1]

    @classmethod
    def identity(cls, grid: BaseGrid, graded_dims: Tuple[int, int]) -> "OperatorForm":
        n = graded_dims[0] + graded_dims[1]
        return cls(grid, graded_dims, {(): np.eye(n)}, parity=0)

    @classmethod
    def zero(cls, grid: BaseGrid, graded_dims: Tuple[int, int], parity: int = 0) -> "OperatorForm":
        return cls(grid, graded_dims, {}, parity=parity)

    @classmethod
    def from_matrices(cls, grid: BaseGrid, graded_dims, matrices, parity: int = 0) -> "OperatorForm":
        """Degree-0 operator form from a matrix field (or a single matrix)."""
        return cls(grid, graded_dims, {(): matrices}, parity=parity)

    @classmethod
    def from_form(cls, form: FormField, graded_dims) -> "OperatorForm":
        """Scalar form tensored with the identity matrix."""
        n = graded_dims[0] + graded_dims[1]
        eye = np.eye(n)
        blocks = {i: v[..., None, None] * eye for i, v in form.coefficients.items()}
        degs = {len(i) % 2 for i in blocks}
        if len(degs) > 1:
            raise ValueError("scalar form must have homogeneous degree parity")
        return cls(form.grid, graded_dims, blocks, parity=degs.pop() if degs else 0)

    def grading(self) -> np.ndarray:
        p, m = self.graded_dims
        return np.diag(np.concatenate([np.ones(p), -np.ones(m)]))

    def matrix_parity(self, index: MultiIndex) -> int:
        return (self.parity + len(index)) % 2

    @property
    def degrees(self) -> list:
        return sorted({len(i) for i in self.blocks})

    def component(self, index: MultiIndex) -> np.ndarray:
        index = tuple(index)
        if index in self.blocks:
            return self.blocks[index]
        return np.zeros(self.grid.shape + (self.n, self.n), dtype=complex)

    def part(self, degree: int) -> "OperatorForm":
        return OperatorForm(self.grid, self.graded_dims,
                            {i: v for i, v in self.blocks.items() if len(i) == degree}, self.parity)

    def without_part(self, degree: int) -> "OperatorForm":
        return OperatorForm(self.grid, self.graded_dims,
                            {i: v for i, v in self.blocks.items() if len(i) != degree}, self.parity)

    def map_blocks(self, fn) -> "OperatorForm":
        return OperatorForm(self.grid, self.graded_dims, {i: fn(v) for i, v in self.blocks.items()}, self.parity)

    def sandwich(self, left: np.ndarray, right: np.ndarray | None = None) -> "OperatorForm":
        """``left · x · right`` for even degree-0 matrix fields given as arrays."""
        right = left if right is None else right
        return self.map_blocks(lambda v: left @ v @ right)

    def adjoint(self) -> "OperatorForm":
        """Pointwise conjugate transpose of every block (form part untouched)."""
        return self.map_blocks(lambda v: np.conj(np.swapaxes(v, -1, -2)))

    def max_abs(self) -> float:
        if not self.blocks:
            return 0.0
        return max(float(np.max(np.abs(v))) for v in self.blocks.values())

    def _check_compatible(self, other: "OperatorForm"):
        if other.grid != self.grid:
            raise ValueError("operator forms live on different grids")
        if other.graded_dims != self.graded_dims:
            raise ValueError(f"graded dimensions differ: {self.graded_dims} vs {other.graded_dims}")

    def _combine(self, other: "OperatorForm", sign: float) -> "OperatorForm":
        self._check_compatible(other)
        if self.blocks and other.blocks and self.parity != other.parity:
            raise ValueError("cannot add operator forms of different parity")
        parity = self.parity if self.blocks else other.parity
        out = {i: v.copy() for i, v in self.blocks.items()}
        for i, v in other.blocks.items():
            out[i] = out[i] + sign * v if i in out else sign * v
        return OperatorForm(self.grid, self.graded_dims, out, parity)

    def __add__(self, other: "OperatorForm") -> "OperatorForm":
        return self._combine(other, 1.0)

    def __sub__(self, other: "OperatorForm") -> "OperatorForm":
        return self._combine(other, -1.0)

    def __neg__(self) -> "OperatorForm":
        return self.map_blocks(lambda v: -v)

    def __mul__(self, scalar) -> "OperatorForm":
        return self.map_blocks(lambda v: scalar * v)

    __rmul__ = __mul__

    def __matmul__(self, other: "OperatorForm") -> "OperatorForm":
        return wedge_multiply(self, other)

    def __repr__(self) -> str:
        return (f"OperatorForm(dims={self.graded_dims}, parity={self.parity}, "
                f"indices={sorted(self.blocks)})")


def exterior_derivative(f: FormField) -> FormField:
    """Exterior derivative on the periodic grid.

    Components of top degree contribute nothing, so a top-degree input yields
    the zero form.
    """
    grid = f.grid
    out: Dict[MultiIndex, np.ndarray] = {}
    for idx, values in f.coefficients.items():
        for axis in range(grid.dim):
            merged = merge_indices((axis,), idx)
            if merged is None:
                continue
            sign, target = merged
            term = sign * partial_derivative(values, axis, grid)
            out[target] = out[target] + term if target in out else term
    return FormField(grid, out)


def operator_derivative(x: OperatorForm) -> OperatorForm:
    """Blockwise exterior derivative ``d(Σ X_I dx^I) = Σ ∂_j X_I dx^j ∧ dx^I``."""
    grid = x.grid
    out: Dict[MultiIndex, np.ndarray] = {}
    for idx, values in x.blocks.items():
        for axis in range(grid.dim):
            merged = merge_indices((axis,), idx)
            if merged is None:
                continue
            sign, target = merged
            term = sign * partial_derivative(values, axis, grid)
            out[target] = out[target] + term if target in out else term
    return OperatorForm(grid, x.graded_dims, out, parity=x.parity + 1)


def wedge_multiply(a: OperatorForm, b: OperatorForm) -> OperatorForm:
    """Graded product of form-valued matrices with the Koszul sign."""
    a._check_compatible(b)
    out: Dict[MultiIndex, np.ndarray] = {}
    for i, x in a.blocks.items():
        koszul_base = a.matrix_parity(i)
        for j, y in b.blocks.items():
            merged = merge_indices(i, j)
            if merged is None:
                continue
            sign, target = merged
            if koszul_base and len(j) % 2:
                sign = -sign
            term = sign * (x @ y)
            out[target] = out[target] + term if target in out else term
    return OperatorForm(a.grid, a.graded_dims, out, parity=a.parity + b.parity)


def supercommutator(a: OperatorForm, b: OperatorForm) -> OperatorForm:
    """``[a, b] = ab - (-1)^{|a||b|} ba``."""
    ab = wedge_multiply(a, b)
    ba = wedge_multiply(b, a)
    return ab + ba if (a.parity and b.parity) else ab - ba


def supertrace(x: OperatorForm) -> FormField:
    """Pointwise ``tr(X_{++}) - tr(X_{--})`` for every form component."""
    p = x.graded_dims[0]
    out = {}
    for idx, v in x.blocks.items():
        if v.shape[-1] != v.shape[-2]:
            raise ValueError("supertrace needs square blocks")
        plus = np.trace(v[..., :p, :p], axis1=-2, axis2=-1)
        minus = np.trace(v[..., p:, p:], axis1=-2, axis2=-1)
        out[idx] = plus - minus
    return FormField(x.grid, out)


def integrate_over_base(f: FormField) -> complex:
    """Midpoint (equivalently trapezoid) rule for a top-degree form on the torus."""
    grid = f.grid
    for idx, values in f.coefficients.items():
        if len(idx) != grid.dim and np.any(values != 0):
            raise ValueError(f"integrand has a nonzero degree-{len(idx)} part; expected degree {grid.dim}")
    top = tuple(range(grid.dim))
    values = f.component(top)
    return complex(np.sum(values) * grid.cell_volume)


@dataclass
class ConnectionData:
    """Connection ``d + ω`` on a trivialised graded bundle over the base."""

    base: BaseGrid
    connection_one_form: OperatorForm
    graded_dims: Tuple[int, int] = field(default=None)

    def __post_init__(self):
        omega = self.connection_one_form
        if self.graded_dims is None:
            self.graded_dims = omega.graded_dims
        if omega.graded_dims != tuple(self.graded_dims):
            raise ValueError("connection one-form dimensions do not match the bundle")
        if any(len(i) != 1 for i in omega.blocks):
            raise ValueError("connection one-form must be of pure degree 1")
        if omega.parity != 1:
            raise ValueError("connection one-form must be odd in total (even matrices)")
        for idx, v in omega.blocks.items():
            skew = v + np.conj(np.swapaxes(v, -1, -2))
            if v.size and np.max(np.abs(skew)) > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(v)))):
                raise ValueError(f"connection component {idx} is not anti-Hermitian")

    @classmethod
    def flat(cls, base: BaseGrid, graded_dims) -> "ConnectionData":
        return cls(base, OperatorForm.zero(base, tuple(graded_dims), parity=1))

    def curvature(self) -> OperatorForm:
        """``dω + ω ∧ ω``."""
        omega = self.connection_one_form
        return operator_derivative(omega) + wedge_multiply(omega, omega)

    def doubled(self) -> "ConnectionData":
        """The same connection acting diagonally on two copies of the bundle."""
        omega = self.connection_one_form
        n = omega.n
        blocks = {}
        for idx, v in omega.blocks.items():
            big = np.zeros(v.shape[:-2] + (2 * n, 2 * n), dtype=complex)
            big[..., :n, :n] = v
            big[..., n:, n:] = v
            blocks[idx] = big
        return ConnectionData(self.base, OperatorForm(self.base, (n, n), blocks, parity=1))


def covariant_derivative(c: ConnectionData, x: OperatorForm) -> OperatorForm:
    """``[∇, x] = dx + [ω, x]`` with the graded commutator."""
    if tuple(c.graded_dims) != x.graded_dims:
        raise ValueError("connection and operator form dimensions differ")
    return operator_derivative(x) + supercommutator(c.connection_one_form, x)


def random_operator_form(grid: BaseGrid, graded_dims, degrees: Iterable[int], parity: int,
                         rng: np.random.Generator, scale: float = 1.0) -> OperatorForm:
    """Random form with blocks of the correct matrix parity in each degree."""
    p, m = graded_dims
    n = p + m
    blocks = {}
    for deg in degrees:
        for idx in grid.multi_indices(deg):
            shape = grid.shape + (n, n)
            v = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
            mask = np.zeros((n, n))
            if (parity + deg) % 2 == 0:
                mask[:p, :p] = 1
                mask[p:, p:] = 1
            else:
                mask[:p, p:] = 1
                mask[p:, :p] = 1
            blocks[idx] = v * mask
    return OperatorForm(grid, graded_dims, blocks, parity)


def nilpotent_exponential(unit: OperatorForm, curvature: OperatorForm) -> OperatorForm:
    """``unit · e^{-R}`` for an even form ``R`` of positive degree.

    The series stops once the wedge powers exceed the base dimension.
    ``unit`` is a degree-0 idempotent commuting with ``R`` (use the identity
    for the plain exponential).
    """
    if any(len(i) == 0 for i in curvature.blocks):
        raise ValueError("curvature must have no degree-0 part")
    result = unit
    power = unit
    k = 1
    while True:
        power = wedge_multiply(power, curvature)
        if not power.blocks:
            break
        result = result + ((-1) ** k / float(np.prod(np.arange(1, k + 1)))) * power
        k += 1
    return result
