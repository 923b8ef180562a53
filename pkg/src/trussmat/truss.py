"""Linear-elastic 2-D pin-jointed truss analysis.

Stiffness is assembled on the reduced system (fixed DOFs eliminated) from
bar-element patterns (EA/L) * g g^T with g = (-c, -s, c, s) scattered to
the element DOFs. Assembly, solve, member forces and compliance all
operate on autodiff Variables, so the whole analysis is differentiable
with respect to member areas and the Young's modulus.

DOF numbering: node i owns DOFs (2i, 2i+1) for (x, y). Member internal
forces are tension-positive.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


class GeometryError(ValueError):
    """The truss definition is geometrically invalid."""


class UnderRestrainedError(RuntimeError):
    """The reduced stiffness matrix is singular.

    Raised when factorization fails, which signals a rigid-body mode, a
    mechanism, or a zero-stiffness member.
    """


class Truss:
    """Immutable truss: geometry, supports and nodal loads.

    Parameters
    ----------
    nodes : array-like, shape (n, 2)
        Node coordinates in meters.
    members : sequence of (i, j)
        Node index pairs; unordered duplicates are rejected.
    fixed_dofs : iterable of int
        Constrained global DOF indices (at least 3 in 2-D).
    loads : array-like, shape (2n,)
        Nodal force vector in newtons.
    """

    def __init__(self, nodes, members, fixed_dofs, loads):
        self.nodes = np.asarray(nodes, dtype=np.float64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise GeometryError(f"nodes must have shape (n, 2), got {self.nodes.shape}")
        n_nodes = self.nodes.shape[0]
        n_dofs = 2 * n_nodes

        self.members = tuple((int(i), int(j)) for i, j in members)
        seen = set()
        for k, (i, j) in enumerate(self.members):
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise GeometryError(f"member {k} references missing node: ({i}, {j})")
            if i == j:
                raise GeometryError(f"member {k} connects node {i} to itself")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GeometryError(f"member {k} duplicates pair ({i}, {j})")
            seen.add(key)

        self.fixed_dofs = tuple(sorted(set(int(d) for d in fixed_dofs)))
        if any(d < 0 or d >= n_dofs for d in self.fixed_dofs):
            raise GeometryError(f"fixed DOF out of range for {n_nodes} nodes")
        if len(self.fixed_dofs) < 3:
            raise GeometryError(
                f"a 2-D truss needs at least 3 fixed DOFs, got {len(self.fixed_dofs)}"
            )

        self.loads = np.asarray(loads, dtype=np.float64)
        if self.loads.shape != (n_dofs,):
            raise GeometryError(
                f"loads must have shape ({n_dofs},), got {self.loads.shape}"
            )

        delta = self.nodes[[j for _, j in self.members]] - self.nodes[[i for i, _ in self.members]]
        self.lengths = np.hypot(delta[:, 0], delta[:, 1])
        if np.any(self.lengths <= 0.0):
            k = int(np.argmax(self.lengths <= 0.0))
            raise GeometryError(f"member {k} has zero length")
        self.cosines = delta / self.lengths[:, None]

        self.free_dofs = np.array(
            [d for d in range(n_dofs) if d not in set(self.fixed_dofs)], dtype=int
        )
        self.reduced_loads = self.loads[self.free_dofs]

        # Per-member axial rows on the reduced system: elongation_k = row_k . u.
        n_free = self.free_dofs.size
        reduced_index = {int(d): col for col, d in enumerate(self.free_dofs)}
        rows = np.zeros((len(self.members), n_free))
        for k, (i, j) in enumerate(self.members):
            c, s = self.cosines[k]
            for dof, weight in ((2 * i, -c), (2 * i + 1, -s), (2 * j, c), (2 * j + 1, s)):
                col = reduced_index.get(dof)
                if col is not None:
                    rows[k, col] = weight
        self.axial_rows = rows
        # Unit-coefficient stiffness patterns; K = sum_k (E A_k / L_k) basis_k.
        self.stiffness_basis = np.einsum("ki,kj->kij", rows, rows)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def n_free_dofs(self) -> int:
        return self.free_dofs.size

    def full_displacements(self, u_reduced) -> np.ndarray:
        """Expand a reduced displacement vector to all 2n DOFs."""
        full = np.zeros(2 * self.n_nodes)
        full[self.free_dofs] = np.asarray(u_reduced, dtype=np.float64)
        return full


def _stiffness_coefficients(truss: Truss, areas, young):
    areas = ad._as_variable(areas)
    if areas.value.shape != (truss.n_members,):
        raise ad.ShapeError(
            f"areas must have shape ({truss.n_members},), got {areas.value.shape}"
        )
    return areas * young * (1.0 / truss.lengths)


def assemble_stiffness(truss: Truss, areas, young) -> ad.Variable:
    """Reduced global stiffness matrix, differentiable in areas and E.

    ``areas`` is a length-N vector (Variable or array) in m^2 and
    ``young`` a scalar in Pa. The result is exactly symmetric because
    each element pattern is an outer product.
    """
    return ad.weighted_basis_sum(_stiffness_coefficients(truss, areas, young), truss.stiffness_basis)


def solve_displacements(K, f, truss: Truss | None = None) -> ad.Variable:
    """Solve K u = f on the reduced system.

    A singular factorization is reported as :class:`UnderRestrainedError`;
    when ``truss`` is given, the failing pivot is mapped back to its node
    and axis.
    """
    try:
        return ad.linear_solve(K, f)
    except ad.SingularSystemError as err:
        detail = f"pivot {err.pivot}"
        if truss is not None and 0 <= err.pivot < truss.n_free_dofs:
            dof = int(truss.free_dofs[err.pivot])
            axis = "xy"[dof % 2]
            detail = f"node {dof // 2}, {axis} direction"
        raise UnderRestrainedError(
            f"structure is under-restrained or has a zero-stiffness member ({detail})"
        ) from err


def member_forces(truss: Truss, u, areas, young) -> ad.Variable:
    """Member internal forces P_k = (E A_k / L_k) * elongation_k.

    Tension is positive, so compressed members have negative force.
    """
    elongations = ad.matmul(truss.axial_rows, u)
    return _stiffness_coefficients(truss, areas, young) * elongations


def compliance(f, u) -> ad.Variable:
    """Work of the applied loads, f . u (lower means stiffer)."""
    return ad.dot(f, u)


def analyze(truss: Truss, areas, young):
    """Assemble, solve and post-process in one call.

    Returns ``(u, J, P)`` as Variables; inputs may be Variables or plain
    arrays (plain inputs give an untracked, tape-free evaluation).
    """
    K = assemble_stiffness(truss, areas, young)
    u = solve_displacements(K, truss.reduced_loads, truss)
    J = compliance(truss.reduced_loads, u)
    P = member_forces(truss, u, areas, young)
    return u, J, P


# -- bundled geometries -------------------------------------------------


def midcant6() -> Truss:
    """Six-bar mid-cantilever: two 1 m bays, 1 m tall, left edge fixed,
    10 kN downward load at the mid-height tip node."""
    nodes = [
        (0.0, 0.0),
        (0.0, 1.0),
        (1.0, 0.0),
        (1.0, 1.0),
        (2.0, 0.5),
    ]
    members = [(0, 2), (1, 3), (2, 3), (1, 2), (2, 4), (3, 4)]
    fixed_dofs = [0, 1, 2, 3]
    loads = np.zeros(10)
    loads[9] = -1.0e4
    return Truss(nodes, members, fixed_dofs, loads)


def tower47(
    panels: int = 9,
    width: float = 1.0,
    panel_height: float = 1.0,
    lateral_load: float = 5.0e2,
    vertical_load: float = -4.0e3,
) -> Truss:
    """Parameterized antenna tower; the defaults give 47 members.

    Two X-braced columns of ``panels`` stacked panels are topped by an
    apex node carrying the antenna load (lateral plus vertical). The two
    base nodes are pinned.
    """
    if panels < 1:
        raise GeometryError("tower needs at least one panel")
    nodes = []
    for level in range(panels + 1):
        nodes.append((0.0, level * panel_height))
        nodes.append((width, level * panel_height))
    apex = len(nodes)
    nodes.append((width / 2.0, (panels + 1) * panel_height))

    def left(level):
        return 2 * level

    def right(level):
        return 2 * level + 1

    members = []
    for level in range(panels):
        members.append((left(level), left(level + 1)))
        members.append((right(level), right(level + 1)))
        members.append((left(level), right(level + 1)))
        members.append((right(level), left(level + 1)))
        members.append((left(level + 1), right(level + 1)))
    members.append((left(panels), apex))
    members.append((right(panels), apex))

    fixed_dofs = [0, 1, 2, 3]
    loads = np.zeros(2 * len(nodes))
    loads[2 * apex] = lateral_load
    loads[2 * apex + 1] = vertical_load
    return Truss(nodes, members, fixed_dofs, loads)


# -- truss file format ---------------------------------------------------

_SECTIONS = ("nodes", "members", "supports", "loads")


def load_truss(path) -> Truss:
    """Read a truss from sectioned text.

    The format has four sections introduced by the bare keywords
    ``nodes`` (id x y), ``members`` (id i j), ``supports`` (node x|y) and
    ``loads`` (node Fx Fy). Ids must be consecutive from zero; lines
    starting with ``#`` are ignored.
    """
    sections = {name: [] for name in _SECTIONS}
    current = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line in _SECTIONS:
                current = line
                continue
            if current is None:
                raise GeometryError(f"{path}:{lineno}: data before any section header")
            sections[current].append((lineno, line.split()))

    nodes = []
    for lineno, parts in sections["nodes"]:
        if len(parts) != 3 or int(parts[0]) != len(nodes):
            raise GeometryError(f"{path}:{lineno}: expected 'id x y' with consecutive ids")
        nodes.append((float(parts[1]), float(parts[2])))
    members = []
    for lineno, parts in sections["members"]:
        if len(parts) != 3 or int(parts[0]) != len(members):
            raise GeometryError(f"{path}:{lineno}: expected 'id i j' with consecutive ids")
        members.append((int(parts[1]), int(parts[2])))
    fixed = []
    for lineno, parts in sections["supports"]:
        if len(parts) != 2 or parts[1] not in ("x", "y"):
            raise GeometryError(f"{path}:{lineno}: expected 'node x' or 'node y'")
        fixed.append(2 * int(parts[0]) + (0 if parts[1] == "x" else 1))
    loads = np.zeros(2 * len(nodes))
    for lineno, parts in sections["loads"]:
        if len(parts) != 3:
            raise GeometryError(f"{path}:{lineno}: expected 'node Fx Fy'")
        node = int(parts[0])
        loads[2 * node] += float(parts[1])
        loads[2 * node + 1] += float(parts[2])
    try:
        return Truss(nodes, members, fixed, loads)
    except GeometryError as err:
        raise GeometryError(f"{path}: {err}") from None


def save_truss(truss: Truss, path) -> None:
    """Write a truss in the :func:`load_truss` format."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("nodes\n")
        for i, (x, y) in enumerate(truss.nodes):
            handle.write(f"{i} {x:.17g} {y:.17g}\n")
        handle.write("members\n")
        for k, (i, j) in enumerate(truss.members):
            handle.write(f"{k} {i} {j}\n")
        handle.write("supports\n")
        for dof in truss.fixed_dofs:
            handle.write(f"{dof // 2} {'xy'[dof % 2]}\n")
        handle.write("loads\n")
        for node in range(truss.n_nodes):
            fx, fy = truss.loads[2 * node], truss.loads[2 * node + 1]
            if fx != 0.0 or fy != 0.0:
                handle.write(f"{node} {fx:.17g} {fy:.17g}\n")
