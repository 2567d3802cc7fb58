"""Canonical metric torsion-free connection, curvature, and derivative caches.

On a special structure the unique metric and torsion-free connection has
frame coefficients

    Gamma^k_aj = (c^k_aj - c^j_ak - c^a_jk) / 2,      Gamma^k_0j = c^k_0j,

obtained by the Koszul trick from metricity (skewness of Gamma in its
upper/lower horizontal pair) and zero torsion (antisymmetric part equals
the structure functions); the vertical coefficients are forced by
nabla_xi X = [xi, X].  Both axioms are re-verified numerically after
construction.

Curvature and the iterated covariant derivatives of R and dalpha live in
the horizontal tensor algebra: every stored slot is a frame index 1..2n.
The one-step xi-derivative of each cached tensor is stored separately for
the generator machinery, which differentiates along X + c xi.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import expr as ex
from .expr import Expression, Const, ZERO
from .frame import ContactStructure, check_special

__all__ = [
    "ConnectionData",
    "CurvatureData",
    "NotSpecialError",
    "HTensor",
    "compute_connection",
    "covariant_derivative",
    "curvature",
    "higher_derivatives",
    "verify_geometry",
    "eval_tensor",
    "CheckRecord",
]


class NotSpecialError(Exception):
    """The structure failed the special certification; the canonical
    connection of the special theory does not apply."""


@dataclass
class HTensor:
    """Horizontal tensor in frame components.

    components: object ndarray of Expressions, shape (2n,)*rank; lower
    slots lead, the n_upper upper slots trail.
    """

    components: np.ndarray
    n_upper: int

    @property
    def rank(self) -> int:
        return self.components.ndim

    @property
    def n_lower(self) -> int:
        return self.rank - self.n_upper


@dataclass
class ConnectionData:
    structure: ContactStructure
    gamma_h: list  # gamma_h[a][j][k] = Gamma^k_aj, a,j,k in 0..2n-1
    gamma_xi: list  # gamma_xi[j][k] = Gamma^k_0j
    special_report: object

    def gamma(self, direction: int) -> list:
        """Coefficient matrix for direction 0 (= xi) or 1..2n (= e_a)."""
        return self.gamma_xi if direction == 0 else self.gamma_h[direction - 1]


@dataclass
class CurvatureData:
    """Curvature plus lazily extended derivative caches.

    The caches grow in place; extend them eagerly (higher_derivatives)
    before sharing an instance across threads.  Point evaluations are
    pure and safe to parallelize.
    """

    connection: ConnectionData
    R: HTensor  # [a, b, j, k]: component k of R(e_a,e_b)e_j
    dalpha: HTensor  # [a, b] = dalpha(e_a, e_b)
    nabla_R: list[HTensor] = field(default_factory=list)  # nabla^i R, i >= 0
    nabla_dalpha: list[HTensor] = field(default_factory=list)
    xi_R: list[HTensor] = field(default_factory=list)  # nabla_xi(nabla^i R)
    xi_dalpha: list[HTensor] = field(default_factory=list)
    max_order: int = 6
    max_components: int = 1_000_000

    @property
    def structure(self) -> ContactStructure:
        return self.connection.structure

    @property
    def order(self) -> int:
        return len(self.nabla_R) - 1


@dataclass
class CheckRecord:
    check: str
    max_residual: float
    points_tested: int
    pass_: bool

    def as_dict(self) -> dict:
        return {
            "check": self.check,
            "max_residual": self.max_residual,
            "points_tested": self.points_tested,
            "pass": self.pass_,
        }


def compute_connection(
    s: ContactStructure, tol: float = 1e-10, points: np.ndarray | None = None
) -> ConnectionData:
    """Koszul construction of the canonical connection; refuses structures
    that fail check_special, and re-verifies metricity and zero torsion."""
    report = check_special(s, points=points, tol=tol)
    if not report.special:
        raise NotSpecialError(
            f"structure is not special (r1={report.r1:.3e}, r2={report.r2:.3e}); "
            "the canonical connection requires the Reeb field to be Killing"
        )
    h = s.h
    c = s.brackets.c_h
    half = Const(Fraction(1, 2))
    gamma_h = [
        [
            [
                ex.normalize(
                    ex.mul(half, ex.sub(ex.sub(c[a][j][k], c[a][k][j]), c[j][k][a]))
                )
                for k in range(h)
            ]
            for j in range(h)
        ]
        for a in range(h)
    ]
    gamma_xi = [[s.brackets.c0_h[j][k] for k in range(h)] for j in range(h)]
    conn = ConnectionData(structure=s, gamma_h=gamma_h, gamma_xi=gamma_xi, special_report=report)
    _verify_axioms(conn, tol)
    return conn


def _verify_axioms(conn: ConnectionData, tol: float) -> None:
    s = conn.structure
    pts = s.validation_points()
    h = s.h
    worst = 0.0
    for a in range(h + 1):
        g = conn.gamma(a)
        for j in range(h):
            for k in range(h):
                vals = s.eval_scalar(ex.add(g[j][k], g[k][j]), pts)
                worst = max(worst, float(np.max(np.abs(vals))))
    for a in range(h):
        for j in range(h):
            for k in range(h):
                e = ex.sub(
                    ex.sub(conn.gamma_h[a][j][k], conn.gamma_h[j][a][k]),
                    s.brackets.c_h[a][j][k],
                )
                vals = s.eval_scalar(e, pts)
                worst = max(worst, float(np.max(np.abs(vals))))
    if worst > max(tol, 1e-9):
        raise AssertionError(
            f"internal error: connection axioms violated (residual {worst:.3e})"
        )


def covariant_derivative(
    conn: ConnectionData, T: HTensor, direction: int
) -> HTensor:
    """(nabla_direction T) in frame components; direction 0 means xi.

    Each lower slot contracts -Gamma, each upper slot +Gamma, plus the
    frame derivative of the scalar components.
    """
    s = conn.structure
    h = s.h
    g = conn.gamma(direction)
    comps = T.components
    out = np.empty_like(comps)
    n_lower = T.n_lower
    rank = T.rank
    for idx in np.ndindex(comps.shape):
        acc = s.frame_derivative(comps[idx], direction)
        for r in range(rank):
            i_r = idx[r]
            if r < n_lower:
                for m in range(h):
                    jdx = idx[:r] + (m,) + idx[r + 1 :]
                    acc = ex.sub(acc, ex.mul(g[i_r][m], comps[jdx]))
            else:
                for m in range(h):
                    jdx = idx[:r] + (m,) + idx[r + 1 :]
                    acc = ex.add(acc, ex.mul(g[m][i_r], comps[jdx]))
        out[idx] = ex.normalize(acc)
    return HTensor(components=out, n_upper=T.n_upper)


def _extend_with_horizontal_slot(conn: ConnectionData, T: HTensor) -> HTensor:
    """nabla T with the new direction slot leading, horizontal only."""
    h = conn.structure.h
    pieces = [covariant_derivative(conn, T, a + 1).components for a in range(h)]
    comps = np.stack(pieces, axis=0)
    return HTensor(components=comps, n_upper=T.n_upper)


def curvature(conn: ConnectionData) -> CurvatureData:
    """R^k_ab,j = e_a(G^k_bj) - e_b(G^k_aj) + G^k_am G^m_bj - G^k_bm G^m_aj
    - c^m_ab G^k_mj - c^0_ab G^k_0j, stored as [a,b,j,k]."""
    s = conn.structure
    h = s.h
    G = conn.gamma_h
    G0 = conn.gamma_xi
    c_h = s.brackets.c_h
    c_0 = s.brackets.c_0
    comps = np.empty((h, h, h, h), dtype=object)
    comps[...] = ZERO
    for a in range(h):
        for b in range(a + 1, h):
            for j in range(h):
                for k in range(h):
                    acc = ex.sub(
                        s.frame_derivative(G[b][j][k], a + 1),
                        s.frame_derivative(G[a][j][k], b + 1),
                    )
                    for m in range(h):
                        acc = ex.add(acc, ex.mul(G[a][m][k], G[b][j][m]))
                        acc = ex.sub(acc, ex.mul(G[b][m][k], G[a][j][m]))
                        acc = ex.sub(acc, ex.mul(c_h[a][b][m], G[m][j][k]))
                    acc = ex.sub(acc, ex.mul(c_0[a][b], G0[j][k]))
                    acc = ex.normalize(acc)
                    comps[a, b, j, k] = acc
                    comps[b, a, j, k] = ex.neg(acc)
    R = HTensor(components=comps, n_upper=1)
    B = np.empty((h, h), dtype=object)
    for a in range(h):
        for b in range(h):
            B[a, b] = ex.neg(s.brackets.c_0[a][b])
    dalpha = HTensor(components=B, n_upper=0)
    cd = CurvatureData(connection=conn, R=R, dalpha=dalpha)
    higher_derivatives(cd, 0)
    return cd


def higher_derivatives(cd: CurvatureData, order: int) -> CurvatureData:
    """Extend the nabla^i caches through i <= order, plus the one-step
    xi-derivatives of every cached tensor.  New slots for i >= 1 take only
    horizontal directions (the horizontal tensor algebra convention)."""
    if order > cd.max_order:
        raise MemoryError(
            f"derivative order {order} exceeds the configured bound {cd.max_order}"
        )
    h = cd.structure.h
    if h ** (4 + order) > cd.max_components:
        raise MemoryError(
            f"nabla^{order} R would store {h ** (4 + order)} components, "
            f"over the budget {cd.max_components}"
        )
    conn = cd.connection
    if not cd.nabla_R:
        cd.nabla_R.append(cd.R)
        cd.nabla_dalpha.append(cd.dalpha)
        cd.xi_R.append(covariant_derivative(conn, cd.R, 0))
        cd.xi_dalpha.append(covariant_derivative(conn, cd.dalpha, 0))
    while cd.order < order:
        cd.nabla_R.append(_extend_with_horizontal_slot(conn, cd.nabla_R[-1]))
        cd.nabla_dalpha.append(_extend_with_horizontal_slot(conn, cd.nabla_dalpha[-1]))
        cd.xi_R.append(covariant_derivative(conn, cd.nabla_R[-1], 0))
        cd.xi_dalpha.append(covariant_derivative(conn, cd.nabla_dalpha[-1], 0))
    return cd


def eval_tensor(s: ContactStructure, T: HTensor, points: np.ndarray) -> np.ndarray:
    """Numeric components at points: float array T.shape + (N,)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts = points.shape[0]
    out = np.empty(T.components.shape + (npts,), dtype=float)
    for idx in np.ndindex(T.components.shape):
        out[idx] = s.eval_scalar(T.components[idx], points)
    return out


# ---------------------------------------------------------------------------
# Identity verification.
# ---------------------------------------------------------------------------


def verify_geometry(
    cd: CurvatureData,
    points: np.ndarray | None = None,
    tol: float = 1e-10,
) -> list[CheckRecord]:
    """Max residuals of the geometric identity suite over sample points:
    metricity/torsion of Gamma, both horizontal Bianchi identities,
    R(xi, .) = 0 expanded from the curvature formula, skewness of R, and
    the cyclic identity for nabla dalpha."""
    s = cd.structure
    conn = cd.connection
    if points is None:
        points = s.validation_points(count=100)
    points = np.atleast_2d(points)
    npts = points.shape[0]
    h = s.h
    records: list[CheckRecord] = []

    def rec(name: str, residual: float) -> None:
        records.append(
            CheckRecord(
                check=name,
                max_residual=float(residual),
                points_tested=npts,
                pass_=bool(residual < tol),
            )
        )

    # (a) metricity and torsion
    worst_m = 0.0
    worst_t = 0.0
    for a in range(h + 1):
        g = conn.gamma(a)
        for j in range(h):
            for k in range(h):
                vals = s.eval_scalar(ex.add(g[j][k], g[k][j]), points)
                worst_m = max(worst_m, float(np.max(np.abs(vals))))
    for a in range(h):
        for j in range(h):
            for k in range(h):
                e = ex.sub(
                    ex.sub(conn.gamma_h[a][j][k], conn.gamma_h[j][a][k]),
                    s.brackets.c_h[a][j][k],
                )
                vals = s.eval_scalar(e, points)
                worst_t = max(worst_t, float(np.max(np.abs(vals))))
    rec("metricity", worst_m)
    rec("torsion", worst_t)

    Rv = eval_tensor(s, cd.R, points)  # [a,b,j,k,N]

    # (b) first Bianchi: R(X,Y)Z + R(Y,Z)X + R(Z,X)Y = 0
    first = Rv + np.transpose(Rv, (1, 2, 0, 3, 4)) + np.transpose(Rv, (2, 0, 1, 3, 4))
    rec("bianchi_first", np.max(np.abs(first)) if first.size else 0.0)

    # (c) second Bianchi: (nabla_X R)(Y,Z) + cyclic = 0
    higher_derivatives(cd, 1)
    dRv = eval_tensor(s, cd.nabla_R[1], points)  # [v,a,b,j,k,N]
    second = (
        dRv
        + np.transpose(dRv, (1, 2, 0, 3, 4, 5))
        + np.transpose(dRv, (2, 0, 1, 3, 4, 5))
    )
    rec("bianchi_second", np.max(np.abs(second)) if second.size else 0.0)

    # (d) R(xi, e_b) = 0 via the curvature formula with Z = xi
    worst = 0.0
    G0 = conn.gamma_xi
    for b in range(h):
        for j in range(h):
            for k in range(h):
                acc = ex.sub(
                    s.frame_derivative(conn.gamma_h[b][j][k], 0),
                    s.frame_derivative(G0[j][k], b + 1),
                )
                for m in range(h):
                    acc = ex.add(acc, ex.mul(G0[m][k], conn.gamma_h[b][j][m]))
                    acc = ex.sub(acc, ex.mul(conn.gamma_h[b][m][k], G0[j][m]))
                    acc = ex.sub(acc, ex.mul(s.brackets.c0_h[b][m], conn.gamma_h[m][j][k]))
                vals = s.eval_scalar(ex.normalize(acc), points)
                worst = max(worst, float(np.max(np.abs(vals))))
    rec("curvature_reeb", worst)

    # (e) skewness of R(Z,W) w.r.t. g: R^k_ab,j symmetric part in (j,k)
    skew = Rv + np.transpose(Rv, (0, 1, 3, 2, 4))
    rec("curvature_skew", np.max(np.abs(skew)) if skew.size else 0.0)

    # (f) cyclic identity for nabla dalpha
    dBv = eval_tensor(s, cd.nabla_dalpha[1], points)  # [v,a,b,N]
    cyc = (
        dBv
        + np.transpose(dBv, (1, 2, 0, 3))
        + np.transpose(dBv, (2, 0, 1, 3))
    )
    rec("dalpha_bianchi", np.max(np.abs(cyc)) if cyc.size else 0.0)

    return records
