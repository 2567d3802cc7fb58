"""Contact sub-Riemannian structures from orthonormal horizontal frames.

A structure is specified either by 2n chart-coordinate vector fields
(``chart`` mode) or by constant structure constants of a (2n+1)-dimensional
Lie algebra with H spanned by the first 2n basis vectors (``lie`` mode).
Loading a structure computes, in order: the raw annihilator of H (a
generalized cross product of the frame), the normalized contact form alpha
with wedge^n dalpha(e_1..e_2n) = 1, the Reeb field xi, the structure
functions of the basis (e_1..e_2n, xi), and the "special" certification
(the Reeb flow is an isometry) on a sample set.

The frame is orthonormal by declaration, so the metric never appears
explicitly: inner products of horizontal fields are dot products of frame
components.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import expr as ex
from .expr import Expression, Const, ZERO, ONE

__all__ = [
    "ContactStructure",
    "Brackets",
    "SpecialReport",
    "StructureError",
    "OrientationError",
    "NotContactError",
    "lie_bracket",
    "normalize_contact_form",
    "compute_reeb",
    "structure_functions",
    "check_special",
    "load_structure",
    "load_structure_text",
    "builtin_names",
    "sample_box_points",
    "sym_det",
    "wedge_power",
]


class StructureError(Exception):
    """Invalid or inconsistent structure input."""


class OrientationError(StructureError):
    """n even and the frame orientation is incompatible with normalization."""


class NotContactError(StructureError):
    """The horizontal distribution fails the contact condition."""


DEFAULT_TOL = 1e-10


def sample_box_points(dim: int, count: int, seed: int = 0, radius: float = 1.0) -> np.ndarray:
    """Seeded uniform sample in [-radius, radius]^dim, for validation grids."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-radius, radius, size=(count, dim))


# ---------------------------------------------------------------------------
# Symbolic linear algebra over Expression entries.
# ---------------------------------------------------------------------------


def sym_det(rows: list[list[Expression]]) -> Expression:
    """Determinant by cofactor expansion along the first row."""
    m = len(rows)
    if m == 1:
        return rows[0][0]
    total: Expression = ZERO
    for j in range(m):
        minor = [r[:j] + r[j + 1 :] for r in rows[1:]]
        term = ex.mul(rows[0][j], sym_det(minor))
        total = add_signed(total, term, j % 2 == 0)
    return total


def add_signed(acc: Expression, term: Expression, positive: bool) -> Expression:
    return ex.add(acc, term) if positive else ex.sub(acc, term)


def _perm_sign(p: tuple[int, ...]) -> int:
    sign = 1
    seen = [False] * len(p)
    for i in range(len(p)):
        if seen[i]:
            continue
        length = 0
        j = i
        while not seen[j]:
            seen[j] = True
            j = p[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def wedge_power(B, n: int):
    """n-fold wedge of a 2-form given by its frame matrix B, on e_1..e_2n.

    Expanded as (1/2^n) * sum over permutations of sign * prod B pairs; the
    permutation order is fixed by itertools, so results are deterministic.
    Works elementwise for both Expression matrices and numpy arrays.
    """
    two_n = 2 * n
    symbolic = isinstance(B[0][0], Expression)
    if symbolic:
        total: Expression = ZERO
        for p in itertools.permutations(range(two_n)):
            term: Expression = ONE
            for k in range(n):
                term = ex.mul(term, B[p[2 * k]][p[2 * k + 1]])
            total = add_signed(total, term, _perm_sign(p) > 0)
        return ex.mul(Const(Fraction(1, 2**n)), total)
    total = 0.0
    for p in itertools.permutations(range(two_n)):
        term = 1.0
        for k in range(n):
            term = term * B[p[2 * k]][p[2 * k + 1]]
        total = total + _perm_sign(p) * term
    return total / (2**n)


def _cramer_solve(mat: list[list[Expression]], rhs: list[Expression]) -> list[Expression]:
    """Solve mat * u = rhs symbolically; the shared 1/det is built once and
    u_k = det_k / det reduces by exact polynomial division when it can."""
    m = len(mat)
    det = ex.normalize(sym_det(mat))
    inv_det = ex.pow_(det, Fraction(-1))
    out = []
    for k in range(m):
        cols = [[mat[i][j] if j != k else rhs[i] for j in range(m)] for i in range(m)]
        num = ex.normalize(sym_det(cols))
        out.append(ex.normalize(ex.mul(num, inv_det)))
    return out


def _fraction_solve(mat: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Exact Gaussian elimination over Fractions (lie mode)."""
    m = len(mat)
    a = [row[:] + [rhs[i]] for i, row in enumerate(mat)]
    for col in range(m):
        pivot = next((r for r in range(col, m) if a[r][col] != 0), None)
        if pivot is None:
            raise StructureError("singular linear system in lie-mode solve")
        a[col], a[pivot] = a[pivot], a[col]
        pv = a[col][col]
        a[col] = [v / pv for v in a[col]]
        for r in range(m):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [v - f * w for v, w in zip(a[r], a[col])]
    return [a[r][m] for r in range(m)]


# ---------------------------------------------------------------------------
# Core geometric operations (chart mode symbolics).
# ---------------------------------------------------------------------------


def lie_bracket(V: list[Expression], W: list[Expression], coords: list[str]) -> list[Expression]:
    """Jacobi-Lie bracket [V,W]^k = sum_i (V^i d_i W^k - W^i d_i V^k), exact."""
    out = []
    for k in range(len(coords)):
        acc: Expression = ZERO
        for i, ci in enumerate(coords):
            acc = ex.add(acc, ex.mul(V[i], ex.differentiate(W[k], ci)))
            acc = ex.sub(acc, ex.mul(W[i], ex.differentiate(V[k], ci)))
        out.append(ex.normalize(acc))
    return out


def _annihilator(frame: list[list[Expression]], dim: int) -> list[Expression]:
    """Generalized cross product: alpha0_i are the last-row cofactors of
    the frame matrix, so alpha0(e_j) = 0 identically and alpha0 is smooth
    and nonvanishing wherever the frame is independent."""
    alpha0 = []
    for i in range(dim):
        minor = [row[:i] + row[i + 1 :] for row in frame]
        sign_pos = (dim - 1 + i) % 2 == 0  # (-1)^{(2n+1)+i}, 1-based
        d = ex.normalize(sym_det(minor))
        alpha0.append(d if sign_pos else ex.neg(d))
    return alpha0


def _two_form_matrix(covector: list[Expression], coords: list[str]) -> list[list[Expression]]:
    """Coordinate matrix D_ij = d_i a_j - d_j a_i of d(covector)."""
    dim = len(coords)
    D = [[ZERO] * dim for _ in range(dim)]
    for i in range(dim):
        for j in range(i + 1, dim):
            dij = ex.normalize(
                ex.sub(
                    ex.differentiate(covector[j], coords[i]),
                    ex.differentiate(covector[i], coords[j]),
                )
            )
            D[i][j] = dij
            D[j][i] = ex.neg(dij)
    return D


def _pairing(covector: list[Expression], vector: list[Expression]) -> Expression:
    acc: Expression = ZERO
    for a, v in zip(covector, vector):
        acc = ex.add(acc, ex.mul(a, v))
    return acc


def _two_form_on(D: list[list[Expression]], V: list[Expression], W: list[Expression]) -> Expression:
    acc: Expression = ZERO
    dim = len(D)
    for i in range(dim):
        for j in range(dim):
            acc = ex.add(acc, ex.mul(ex.mul(V[i], D[i][j]), W[j]))
    return acc


@dataclass
class _NormalizationData:
    """Intermediates of the normalization, kept for downstream formulas.

    alpha = v^(-1/n) alpha0, and the coordinate matrix of dalpha factors as
    dalpha_ij = v^(-(n+1)/n) E_ij with E polynomial for polynomial frames:
    E = v * dalpha0 - (1/n) (dv ^ alpha0).
    """

    alpha0: list[Expression]
    v: Expression
    E: list[list[Expression]]


def normalize_contact_form(
    frame: list[list[Expression]],
    coords: list[str],
    n: int,
    samples: np.ndarray,
    tol: float = DEFAULT_TOL,
) -> tuple[list[Expression], int, _NormalizationData]:
    """Normalized contact form: alpha = v^(-1/n) * alpha0 with
    v = wedge^n dalpha0(e_1..e_2n).

    Raises NotContactError when v vanishes on the sample set and
    OrientationError when n is even and v < 0 (the two admissible forms
    exist only for compatibly oriented frames; negate one frame field).
    """
    dim = 2 * n + 1
    alpha0 = _annihilator(frame, dim)
    D0 = _two_form_matrix(alpha0, coords)
    B0 = [[_two_form_on(D0, frame[a], frame[b]) for b in range(2 * n)] for a in range(2 * n)]
    v = ex.normalize(wedge_power(B0, n))

    vals = _eval_scalar_at(v, coords, samples)
    if np.min(np.abs(vals)) < 1e-9:
        raise NotContactError(
            "distribution is not contact: wedge^n dalpha0 vanishes at a sample point"
        )
    if n % 2 == 0 and np.min(vals) < 0:
        raise OrientationError(
            "n is even and wedge^n dalpha0 < 0 for this frame orientation; "
            "negate one frame field to flip the orientation of H"
        )
    if np.min(vals) < 0 < np.max(vals):
        raise NotContactError("wedge^n dalpha0 changes sign over the sample set")

    orientation_sign = 1 if np.min(vals) > 0 else -1
    f = ex.pow_(v, Fraction(-1, n))
    alpha = [ex.normalize(ex.mul(f, a)) for a in alpha0]

    dv = [ex.differentiate(v, c) for c in coords]
    inv_n = Const(Fraction(1, n))
    E = [
        [
            ex.normalize(
                ex.sub(
                    ex.mul(v, D0[i][j]),
                    ex.mul(inv_n, ex.sub(ex.mul(dv[i], alpha0[j]), ex.mul(dv[j], alpha0[i]))),
                )
            )
            for j in range(dim)
        ]
        for i in range(dim)
    ]
    return alpha, orientation_sign, _NormalizationData(alpha0=alpha0, v=v, E=E)


def compute_reeb(
    norm: _NormalizationData,
    coords: list[str],
    n: int,
    samples: np.ndarray,
    tol: float = DEFAULT_TOL,
) -> list[Expression]:
    """Reeb field via Cramer's rule on a (2n+1)x(2n+1) linear system.

    dalpha(xi, .) = 0 is equivalent to E xi = 0 (the scalar prefactor of
    dalpha drops), and alpha(xi) = 1 becomes alpha0(xi) = v^(1/n).  With
    eta := v^((n-1)/n) xi the system turns polynomial:
        (E + alpha0 alpha0^T) eta = v * alpha0,
    which is invertible at every contact point regardless of which 2n rows
    of E happen to span; finally xi = v^((1-n)/n) eta.
    """
    dim = len(coords)
    if dim < 3:
        raise StructureError("n >= 1 is required (dim M = 2n+1 >= 3)")
    alpha0, v, E = norm.alpha0, norm.v, norm.E
    M = [
        [ex.normalize(ex.add(E[i][j], ex.mul(alpha0[i], alpha0[j]))) for j in range(dim)]
        for i in range(dim)
    ]
    det = ex.normalize(sym_det(M))
    det_vals = _eval_scalar_at(det, coords, samples)
    if np.min(np.abs(det_vals)) < 1e-9:
        raise StructureError(
            "internal inconsistency: Reeb system is singular at a sample point "
            "although the contact condition held"
        )
    rhs = [ex.normalize(ex.mul(v, a)) for a in alpha0]
    eta = _cramer_solve(M, rhs)
    if n == 1:
        return eta
    scale = ex.pow_(v, Fraction(1 - n, n))
    return [ex.normalize(ex.mul(scale, e)) for e in eta]


# ---------------------------------------------------------------------------
# Structure functions and the data classes.
# ---------------------------------------------------------------------------


@dataclass
class Brackets:
    """Structure functions of the adapted basis (e_1..e_2n, xi).

    c_h[i][j][k] = c^k_ij (horizontal part of [e_i,e_j]),
    c_0[i][j]    = c^0_ij = alpha([e_i,e_j])  (so dalpha(e_i,e_j) = -c^0_ij),
    c0_h[j][k]   = c^k_0j (horizontal part of [xi,e_j]),
    c0_0[j]      = alpha([xi,e_j])  (identically 0; kept as a diagnostic).
    """

    c_h: list
    c_0: list
    c0_h: list
    c0_0: list


@dataclass
class SpecialReport:
    r1: float  # max |alpha([xi,e_j])| over samples
    r2: float  # max |<[xi,e_i],e_j> + <e_i,[xi,e_j]>| over samples
    points: int
    tol: float

    @property
    def special(self) -> bool:
        return self.r1 < self.tol and self.r2 < self.tol


@dataclass
class ContactStructure:
    n: int
    mode: str  # "chart" | "lie"
    coords: list[str]
    frame: list[list[Expression]]  # 2n rows of 2n+1 coefficient expressions
    alpha: list[Expression]
    reeb: list[Expression]
    orientation_sign: int
    brackets: Brackets
    source_text: str
    name: str = ""
    # chart mode: dalpha_ij = dalpha_scale * E_ij with E polynomial for
    # polynomial frames (see _NormalizationData); None in lie mode.
    E: list[list[Expression]] | None = None
    dalpha_scale: Expression = ONE
    _compiled: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return 2 * self.n + 1

    @property
    def h(self) -> int:
        return 2 * self.n

    # -- numeric evaluation -------------------------------------------------

    def eval_scalar(self, e: Expression, points: np.ndarray) -> np.ndarray:
        """Vectorized evaluation of one expression at points (N, dim)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        key = id(e)
        hit = self._compiled.get(key)
        if hit is None or hit[0] is not e:
            fn = ex.compile_expression(e, self.coords)
            self._compiled[key] = (e, fn)
        else:
            fn = hit[1]
        if self.coords:
            out = fn(*[points[:, i] for i in range(self.dim)])
        else:
            out = fn()
        out = np.asarray(out, dtype=float)
        if out.ndim == 0:
            out = np.full(points.shape[0], float(out))
        return out

    def eval_scalar_at(self, e: Expression, point) -> float:
        return float(self.eval_scalar(e, np.asarray(point, dtype=float)[None, :])[0])

    def eval_table(self, exprs, points: np.ndarray) -> np.ndarray:
        """Evaluate a nested list structure of expressions; returns an array
        with the list shape as leading axes and the point axis last."""
        if isinstance(exprs, Expression):
            return self.eval_scalar(exprs, points)
        return np.stack([self.eval_table(sub, points) for sub in exprs])

    def basis_matrix_at(self, points: np.ndarray) -> np.ndarray:
        """(N, dim, dim) arrays with columns e_1..e_2n, xi at each point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cols = self.frame + [self.reeb]
        vals = np.stack(
            [
                np.stack([self.eval_scalar(c, points) for c in vec], axis=-1)
                for vec in cols
            ],
            axis=-1,
        )
        return vals

    # -- symbolic helpers ---------------------------------------------------

    def frame_derivative(self, e: Expression, a: int) -> Expression:
        """Directional derivative along e_a (a = 1..2n) or xi (a = 0)."""
        if not self.coords:
            return ZERO  # lie mode: all scalars are constant
        vec = self.reeb if a == 0 else self.frame[a - 1]
        acc: Expression = ZERO
        for i, ci in enumerate(self.coords):
            acc = ex.add(acc, ex.mul(vec[i], ex.differentiate(e, ci)))
        return acc

    def alpha_of(self, V: list[Expression]) -> Expression:
        return ex.normalize(_pairing(self.alpha, V))

    def dalpha_on(self, V: list[Expression], W: list[Expression]) -> Expression:
        """dalpha(V, W) from coordinate (chart) or basis (lie) components."""
        quad = _two_form_on(self.E, V, W)
        return ex.normalize(ex.mul(self.dalpha_scale, ex.normalize(quad)))

    def dalpha_frame(self) -> list[list[Expression]]:
        """B[a][b] = dalpha(e_a, e_b) = -c^0_ab."""
        return [
            [ex.neg(self.brackets.c_0[a][b]) for b in range(self.h)]
            for a in range(self.h)
        ]

    def decompose(self, V: list[Expression]) -> tuple[list[Expression], Expression]:
        """Split V into horizontal frame components and xi component."""
        mat = [[self.frame[j][i] for j in range(self.h)] + [self.reeb[i]] for i in range(self.dim)]
        sol = _cramer_solve(mat, V)
        return sol[: self.h], sol[self.h]

    def project(self, V: list[Expression]) -> list[Expression]:
        """P V = V - alpha(V) xi, the horizontal projection."""
        a = self.alpha_of(V)
        return [ex.sub(v, ex.mul(a, x)) for v, x in zip(V, self.reeb)]

    def parse_field(self, texts: list[str] | str) -> list[Expression]:
        if isinstance(texts, str):
            texts = split_components(texts)
        if len(texts) != self.dim:
            raise StructureError(f"expected {self.dim} components, got {len(texts)}")
        return [ex.parse_expression(t, self.coords) for t in texts]

    def fingerprint(self) -> str:
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()

    def validation_points(self, count: int = 30, seed: int = 0) -> np.ndarray:
        if self.mode == "lie":
            return np.zeros((1, 0))
        pts = sample_box_points(self.dim, count, seed)
        return np.vstack([np.zeros((1, self.dim)), pts])


def _eval_scalar_at(e: Expression, coords: list[str], points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    fn = ex.compile_expression(e, coords)
    if coords:
        out = fn(*[points[:, i] for i in range(len(coords))])
    else:
        out = fn()
    out = np.asarray(out, dtype=float)
    if out.ndim == 0:
        out = np.full(points.shape[0], float(out))
    return out


def structure_functions(s: ContactStructure) -> Brackets:
    """Brackets of the adapted basis, decomposed via the symbolic basis
    change (Cramer); see Brackets for the index conventions."""
    h = s.h
    c_h = [[[ZERO] * h for _ in range(h)] for _ in range(h)]
    c_0 = [[ZERO] * h for _ in range(h)]
    for i in range(h):
        for j in range(i + 1, h):
            v = lie_bracket(s.frame[i], s.frame[j], s.coords)
            hor, xi_comp = s.decompose(v)
            for k in range(h):
                c_h[i][j][k] = hor[k]
                c_h[j][i][k] = ex.neg(hor[k])
            c_0[i][j] = xi_comp
            c_0[j][i] = ex.neg(xi_comp)
    c0_h = [[ZERO] * h for _ in range(h)]
    c0_0 = [ZERO] * h
    for j in range(h):
        v = lie_bracket(s.reeb, s.frame[j], s.coords)
        hor, xi_comp = s.decompose(v)
        for k in range(h):
            c0_h[j][k] = hor[k]
        c0_0[j] = s.alpha_of(v)
        # xi_comp equals alpha([xi,e_j]) in exact arithmetic; both are kept
        # (xi_comp via Cramer, c0_0 via alpha) and verified to vanish.
        del xi_comp
    return Brackets(c_h=c_h, c_0=c_0, c0_h=c0_h, c0_0=c0_0)


def check_special(
    s: ContactStructure, points: np.ndarray | None = None, tol: float = DEFAULT_TOL
) -> SpecialReport:
    """Is the Reeb field an infinitesimal isometry?

    r1: the brackets [xi,e_j] stay horizontal (alpha component vanishes).
    r2: the Lie derivative of the frame metric along xi vanishes; in the
    orthonormal frame this is skewness of the matrix c^k_0j.
    """
    if points is None:
        points = _default_special_grid(s)
    r1 = 0.0
    for j in range(s.h):
        vals = s.eval_scalar(s.brackets.c0_0[j], points)
        r1 = max(r1, float(np.max(np.abs(vals))) if vals.size else 0.0)
    r2 = 0.0
    for i in range(s.h):
        for j in range(i, s.h):
            e = ex.add(s.brackets.c0_h[i][j], s.brackets.c0_h[j][i])
            vals = s.eval_scalar(e, points)
            r2 = max(r2, float(np.max(np.abs(vals))) if vals.size else 0.0)
    npts = 1 if s.mode == "lie" else int(np.atleast_2d(points).shape[0])
    return SpecialReport(r1=r1, r2=r2, points=npts, tol=tol)


def _default_special_grid(s: ContactStructure) -> np.ndarray:
    if s.mode == "lie":
        return np.zeros((1, 0))
    axes = [np.linspace(-1.0, 1.0, 5)] * s.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# ---------------------------------------------------------------------------
# Lie mode: exact Fraction pipeline, wrapped into constant Expressions.
# ---------------------------------------------------------------------------


def _lie_build(n: int, constants: dict[tuple[int, int, int], Fraction], text: str, name: str) -> ContactStructure:
    dim = 2 * n + 1
    # raw brackets, antisymmetrized, 0-based: C[i][j][k]
    C = [[[Fraction(0)] * dim for _ in range(dim)] for _ in range(dim)]
    for (i, j, k), val in constants.items():
        if not (1 <= i < j <= dim and 1 <= k <= dim):
            raise StructureError(f"bracket indices out of range: c {i} {j} {k}")
        C[i - 1][j - 1][k - 1] = val
        C[j - 1][i - 1][k - 1] = -val

    _check_jacobi(C, dim)

    # alpha0 = dual of e_{2n+1}; dalpha0(u,v) = -alpha0([u,v])
    B0 = [[-C[a][b][dim - 1] for b in range(2 * n)] for a in range(2 * n)]
    v = _wedge_power_fraction(B0, n)
    if v == 0:
        raise NotContactError("lie structure is not contact: wedge^n dalpha0 = 0")
    if n % 2 == 0 and v < 0:
        raise OrientationError(
            "n is even and wedge^n dalpha0 < 0; negate one frame basis vector"
        )
    f = _fraction_root(v, n)
    alpha = [Fraction(0)] * dim
    alpha[dim - 1] = f

    # Reeb: alpha(xi) = 1 and alpha([xi, e_j]) = 0 for all j; solved exactly.
    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    for j in range(dim):
        rows.append([f * C[k][j][dim - 1] for k in range(dim)])
        rhs.append(Fraction(0))
    rows.append([Fraction(0)] * (dim - 1) + [f])
    rhs.append(Fraction(1))
    # least-squares-free exact solve: pick dim independent rows
    xi = _solve_consistent(rows, rhs, dim)

    def bracket_with_xi(j: int) -> list[Fraction]:
        return [sum((xi[k] * C[k][j][m] for k in range(dim)), Fraction(0)) for m in range(dim)]

    h = 2 * n
    c_h = [[[ZERO] * h for _ in range(h)] for _ in range(h)]
    c_0 = [[ZERO] * h for _ in range(h)]
    for i in range(h):
        for j in range(h):
            a_comp = f * C[i][j][dim - 1]
            c_0[i][j] = Const(a_comp)
            for k in range(h):
                c_h[i][j][k] = Const(C[i][j][k] - a_comp * xi[k])
    c0_h = [[ZERO] * h for _ in range(h)]
    c0_0 = [ZERO] * h
    for j in range(h):
        w = bracket_with_xi(j)
        a_comp = f * w[dim - 1]
        c0_0[j] = Const(a_comp)
        for k in range(h):
            c0_h[j][k] = Const(w[k] - a_comp * xi[k])

    frame = [[ONE if i == j else ZERO for i in range(dim)] for j in range(h)]
    # full basis matrix of dalpha: dalpha(e_i,e_j) = -alpha([e_i,e_j])
    E_full = [[Const(-f * C[i][j][dim - 1]) for j in range(dim)] for i in range(dim)]
    s = ContactStructure(
        n=n,
        mode="lie",
        coords=[],
        frame=frame,
        alpha=[Const(a) for a in alpha],
        reeb=[Const(x) for x in xi],
        orientation_sign=1 if v > 0 else -1,
        brackets=Brackets(c_h=c_h, c_0=c_0, c0_h=c0_h, c0_0=c0_0),
        source_text=text,
        name=name,
        E=E_full,
        dalpha_scale=ONE,
    )
    return s


def _check_jacobi(C: list, dim: int) -> None:
    for i in range(dim):
        for j in range(i + 1, dim):
            for k in range(j + 1, dim):
                for m in range(dim):
                    total = Fraction(0)
                    for (a, b, c) in ((i, j, k), (j, k, i), (k, i, j)):
                        total += sum(C[a][b][p] * C[p][c][m] for p in range(dim))
                    if total != 0:
                        raise StructureError(
                            f"Jacobi identity fails for (e{i+1},e{j+1},e{k+1}) "
                            f"component {m+1}: residual {total}"
                        )


def _wedge_power_fraction(B: list[list[Fraction]], n: int) -> Fraction:
    two_n = 2 * n
    total = Fraction(0)
    for p in itertools.permutations(range(two_n)):
        term = Fraction(1)
        for k in range(n):
            term *= B[p[2 * k]][p[2 * k + 1]]
        total += _perm_sign(p) * term
    return total / (2**n)


def _fraction_root(v: Fraction, n: int) -> Fraction:
    """Exact v^(-1/n) for lie mode, sign-aware for odd n."""
    if n == 1:
        return Fraction(1) / v
    sign = 1
    if v < 0:
        if n % 2 == 0:
            raise OrientationError("even root of a negative normalization value")
        sign, v = -1, -v
    num = _iroot(v.numerator, n)
    den = _iroot(v.denominator, n)
    if num is None or den is None:
        raise StructureError(
            f"lie-mode normalization needs an exact rational root of {v}; "
            "use a chart realization for this structure"
        )
    return sign * Fraction(den, num)  # inverse root


def _iroot(m: int, n: int) -> int | None:
    r = round(m ** (1.0 / n))
    for cand in (r - 1, r, r + 1):
        if cand > 0 and cand**n == m:
            return cand
    return None


def _solve_consistent(rows: list[list[Fraction]], rhs: list[Fraction], dim: int) -> list[Fraction]:
    """Solve an overdetermined but consistent exact system."""
    # forward eliminate over all rows, tracking pivots
    aug = [row[:] + [rhs[i]] for i, row in enumerate(rows)]
    pivots = []
    r = 0
    for col in range(dim):
        piv = next((i for i in range(r, len(aug)) if aug[i][col] != 0), None)
        if piv is None:
            continue
        aug[r], aug[piv] = aug[piv], aug[r]
        pv = aug[r][col]
        aug[r] = [v / pv for v in aug[r]]
        for i in range(len(aug)):
            if i != r and aug[i][col] != 0:
                f = aug[i][col]
                aug[i] = [v - f * w for v, w in zip(aug[i], aug[r])]
        pivots.append(col)
        r += 1
    if r < dim:
        raise StructureError("Reeb system is singular in lie mode (not contact?)")
    for i in range(r, len(aug)):
        if aug[i][dim] != 0:
            raise StructureError("inconsistent Reeb system in lie mode")
    sol = [Fraction(0)] * dim
    for row_idx, col in enumerate(pivots):
        sol[col] = aug[row_idx][dim]
    return sol


# ---------------------------------------------------------------------------
# Structure file parsing and builtins.
# ---------------------------------------------------------------------------


def _parse_sections(text: str) -> dict[str, list[tuple[str, str]]]:
    sections: dict[str, list[tuple[str, str]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, [])
            continue
        if "=" not in line:
            raise StructureError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise StructureError(f"line {lineno}: content before any [section]")
        key, value = line.split("=", 1)
        sections[current].append((key.strip(), value.strip()))
    return sections


def _split_names(s: str) -> list[str]:
    return [t for t in s.replace(",", " ").split() if t]


def split_components(s: str) -> list[str]:
    """Split on commas at parenthesis depth zero, so pow(e, p/q) survives."""
    parts = []
    depth = 0
    start = 0
    for i, ch in enumerate(s):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(s[start:i].strip())
            start = i + 1
    parts.append(s[start:].strip())
    return [p for p in parts if p]


def load_structure_text(text: str, name: str = "", seed: int = 0) -> ContactStructure:
    """Build and validate a structure from its definition text."""
    sections = _parse_sections(text)
    if "manifold" not in sections:
        raise StructureError("missing [manifold] section")
    man = dict(sections["manifold"])
    mode = man.get("mode", "").strip().lower()
    if mode not in ("chart", "lie"):
        raise StructureError(f"mode must be 'chart' or 'lie', got {mode!r}")
    try:
        n = int(man.get("n", ""))
    except ValueError:
        raise StructureError("n must be an integer") from None
    if n < 1:
        raise StructureError("n >= 1 is required (dim M = 2n+1 >= 3)")
    dim = 2 * n + 1

    if mode == "lie":
        if "brackets" not in sections:
            raise StructureError("lie mode requires a [brackets] section")
        constants: dict[tuple[int, int, int], Fraction] = {}
        for key, value in sections["brackets"]:
            parts = key.split()
            if len(parts) != 4 or parts[0] != "c":
                raise StructureError(f"bad bracket key {key!r}; expected 'c i j k'")
            try:
                i, j, k = int(parts[1]), int(parts[2]), int(parts[3])
                val = Fraction(value)
            except ValueError:
                raise StructureError(f"bad bracket entry {key!r} = {value!r}") from None
            if not i < j:
                raise StructureError(f"bracket indices must satisfy i < j: {key!r}")
            constants[(i, j, k)] = val
        return _lie_build(n, constants, text, name)

    coords = _split_names(man.get("coords", ""))
    if len(coords) != dim:
        raise StructureError(f"chart mode needs {dim} coordinate names, got {len(coords)}")
    if len(set(coords)) != dim:
        raise StructureError("coordinate names must be distinct")
    if "frame" not in sections:
        raise StructureError("chart mode requires a [frame] section")
    rows = dict(sections["frame"])
    frame: list[list[Expression]] = []
    for a in range(1, 2 * n + 1):
        key = f"X{a}"
        if key not in rows:
            raise StructureError(f"missing frame row {key}")
        comps = split_components(rows[key])
        if len(comps) != dim:
            raise StructureError(f"{key} needs {dim} expressions, got {len(comps)}")
        frame.append([ex.parse_expression(t, coords) for t in comps])

    samples = np.vstack([np.zeros((1, dim)), sample_box_points(dim, 30, seed)])
    _check_frame_rank(frame, coords, samples)
    alpha, orientation_sign, norm = normalize_contact_form(frame, coords, n, samples)
    reeb = compute_reeb(norm, coords, n, samples)
    s = ContactStructure(
        n=n,
        mode="chart",
        coords=coords,
        frame=frame,
        alpha=alpha,
        reeb=reeb,
        orientation_sign=orientation_sign,
        brackets=Brackets([], [], [], []),
        source_text=text,
        name=name,
        E=norm.E,
        dalpha_scale=ex.pow_(norm.v, Fraction(-(n + 1), n)),
    )
    s.brackets = structure_functions(s)
    _validate_structure(s, samples)
    return s


def _check_frame_rank(frame, coords, samples) -> None:
    vals = np.stack(
        [
            np.stack([_eval_scalar_at(c, coords, samples) for c in vec], axis=-1)
            for vec in frame
        ],
        axis=1,
    )  # (N, 2n, dim)
    for row in vals:
        sv = np.linalg.svd(row, compute_uv=False)
        if sv[-1] < 1e-9:
            raise StructureError("frame is linearly dependent at a sample point")


def _validate_structure(s: ContactStructure, samples: np.ndarray) -> None:
    # alpha(e_i) = 0 identically (sampled)
    for vec in s.frame:
        vals = s.eval_scalar(s.alpha_of(vec), samples)
        if np.max(np.abs(vals)) > 1e-12:
            raise StructureError("alpha(e_i) != 0 after normalization")
    # wedge^n dalpha(frame) = 1
    B = s.dalpha_frame()
    Bv = np.stack([np.stack([s.eval_scalar(e, samples) for e in row]) for row in B])
    wedge = np.array(
        [wedge_power(Bv[:, :, p], s.n) for p in range(Bv.shape[2])]
    )
    if np.max(np.abs(wedge - 1.0)) > 1e-8:
        raise StructureError("normalization failed: wedge^n dalpha(frame) != 1")
    # alpha(xi) = 1 and dalpha(xi, .) = 0
    vals = s.eval_scalar(s.alpha_of(s.reeb), samples)
    if np.max(np.abs(vals - 1.0)) > 1e-8:
        raise StructureError("alpha(xi) != 1")
    for j in range(s.dim):
        e_j = [ONE if i == j else ZERO for i in range(s.dim)]
        vals = s.eval_scalar(s.dalpha_on(s.reeb, e_j), samples)
        if np.max(np.abs(vals)) > 1e-8:
            raise StructureError("dalpha(xi, .) != 0")


# -- builtins ---------------------------------------------------------------


def _heisenberg_text(n: int) -> str:
    if n == 1:
        coords = ["x", "y", "z"]
    else:
        coords = [c for i in range(1, n + 1) for c in (f"x{i}", f"y{i}")] + ["z"]
    lines = [
        "# Heisenberg group H^{2n+1}: left-invariant orthonormal frame",
        "[manifold]",
        "mode = chart",
        f"n = {n}",
        "coords = " + ", ".join(coords),
        "",
        "[frame]",
    ]
    dim = 2 * n + 1
    for i in range(n):
        xi_name = coords[2 * i]
        yi_name = coords[2 * i + 1]
        row1 = ["0"] * dim
        row1[2 * i] = "1"
        row1[dim - 1] = f"-{yi_name}/2"
        row2 = ["0"] * dim
        row2[2 * i + 1] = "1"
        row2[dim - 1] = f"{xi_name}/2"
        lines.append(f"X{2 * i + 1} = " + ", ".join(row1))
        lines.append(f"X{2 * i + 2} = " + ", ".join(row2))
    return "\n".join(lines) + "\n"


_SU2_TEXT = """# su(2)-type structure: [e1,e2]=e3, [e2,e3]=e1, [e3,e1]=e2, H = span{e1,e2}
[manifold]
mode = lie
n = 1

[brackets]
c 1 2 3 = 1
c 2 3 1 = 1
c 1 3 2 = -1
"""

# Stereographic chart realization of the su2 builtin (unit quaternions
# projected from the antipode); e1, e2 are quadratic polynomial fields with
# [e1,e2]=e3 etc., matching the lie-mode structure constants.
_SU2_CHART_TEXT = """# su(2)-type structure in stereographic coordinates
[manifold]
mode = chart
n = 1
coords = x, y, z

[frame]
X1 = (1 + x^2 - y^2 - z^2)/4, (x*y + z)/2, (x*z - y)/2
X2 = (x*y - z)/2, (1 - x^2 + y^2 - z^2)/4, (y*z + x)/2
"""


def builtin_names() -> list[str]:
    return ["heisenberg:<n>", "su2", "su2:chart"]


def builtin_text(name: str) -> str | None:
    if name.startswith("heisenberg:"):
        try:
            n = int(name.split(":", 1)[1])
        except ValueError:
            return None
        if n < 1:
            return None
        return _heisenberg_text(n)
    if name == "su2":
        return _SU2_TEXT
    if name == "su2:chart":
        return _SU2_CHART_TEXT
    return None


def load_structure(source: str, seed: int = 0) -> ContactStructure:
    """Load a builtin by name or a structure definition file by path."""
    text = builtin_text(source)
    if text is not None:
        return load_structure_text(text, name=source, seed=seed)
    try:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise StructureError(f"cannot read structure file {source!r}: {e}") from None
    return load_structure_text(text, name=source, seed=seed)
