"""Tree-structured series hierarchies and their summing matrices.

A hierarchy is a strict tree: one root at level 0, every other node has a
single parent on a higher level, and the leaves are the bottom series.
The summing matrix S maps a bottom-value vector to the full node vector,
so coherence of a full vector y means y == S @ y_bottom.

Grouped (non-nested) structures are out of scope; everything here assumes
the laminar tree case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ROOT_ID = "total"


@dataclass(frozen=True)
class NodeRecord:
    """One node of the hierarchy.

    Parameters
    ----------
    id : str
        Unique node identifier.
    level : int
        Index into ``HierarchySpec.levels`` (0 is the top).
    parent : str or None
        Parent node id; ``None`` exactly for the root.
    """

    id: str
    level: int
    parent: str | None


@dataclass(frozen=True)
class HierarchySpec:
    """Node list plus level names describing one tree.

    ``bottom_ids`` fixes the bottom-series order used for summing-matrix
    columns. Validation happens in :func:`build_summing_matrix`.
    """

    levels: tuple[str, ...]
    nodes: tuple[NodeRecord, ...]
    bottom_ids: tuple[str, ...]

    def node_by_id(self) -> dict[str, NodeRecord]:
        return {n.id: n for n in self.nodes}

    def to_json(self) -> str:
        """Dump the node list as JSON for inspection."""
        payload = {
            "levels": list(self.levels),
            "nodes": [
                {"id": n.id, "level": n.level, "parent": n.parent}
                for n in self.nodes
            ],
            "bottom_ids": list(self.bottom_ids),
        }
        return json.dumps(payload, indent=2)


@dataclass(frozen=True)
class SummingMatrix:
    """0/1 matrix mapping bottom values to all node values.

    Rows are level-major (top first), stable by node id within a level;
    columns follow ``HierarchySpec.bottom_ids``.
    """

    entries: np.ndarray
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    row_levels: tuple[int, ...] = field(default=())

    @property
    def n_rows(self) -> int:
        return self.entries.shape[0]

    @property
    def n_bottom(self) -> int:
        return self.entries.shape[1]

    def row_index(self) -> dict[str, int]:
        return {rid: i for i, rid in enumerate(self.row_ids)}

    def bottom_row_positions(self) -> np.ndarray:
        """Row position of each bottom series, in column order."""
        idx = self.row_index()
        return np.array([idx[c] for c in self.col_ids], dtype=np.intp)


@dataclass(frozen=True)
class CoherenceReport:
    ok: bool
    max_violation: float


def _validate_spec(spec: HierarchySpec) -> dict[str, NodeRecord]:
    if not spec.levels:
        raise DataError("hierarchy has no levels")
    seen: dict[str, NodeRecord] = {}
    for n in spec.nodes:
        if n.id in seen:
            raise DataError(f"duplicate node id {n.id!r}")
        seen[n.id] = n
    roots = [n for n in spec.nodes if n.parent is None]
    if len(roots) != 1:
        raise DataError(f"expected exactly one root, found {len(roots)}")
    if roots[0].level != 0:
        raise DataError(f"root {roots[0].id!r} is not on level 0")
    for n in spec.nodes:
        if not 0 <= n.level < len(spec.levels):
            raise DataError(f"node {n.id!r} has unknown level {n.level}")
        if n.parent is None:
            if n.level != 0:
                raise DataError(f"node {n.id!r} has no parent but level {n.level}")
            continue
        if n.parent not in seen:
            raise DataError(f"node {n.id!r} has orphan parent link {n.parent!r}")
        if seen[n.parent].level >= n.level:
            # parent strictly above the child; also rules out cycles
            raise DataError(
                f"node {n.id!r} (level {n.level}) has parent {n.parent!r} "
                f"on level {seen[n.parent].level}"
            )
    children: dict[str, list[str]] = {n.id: [] for n in spec.nodes}
    for n in spec.nodes:
        if n.parent is not None:
            children[n.parent].append(n.id)
    leaves = {nid for nid, ch in children.items() if not ch}
    declared = set(spec.bottom_ids)
    if len(spec.bottom_ids) != len(declared):
        raise DataError("duplicate ids in bottom_ids")
    if declared != leaves:
        missing = sorted(leaves - declared)
        extra = sorted(declared - leaves)
        raise DataError(
            f"bottom_ids do not match the tree leaves "
            f"(missing={missing}, extra={extra})"
        )
    return seen


def build_summing_matrix(spec: HierarchySpec) -> SummingMatrix:
    """Validate the spec and build its dense summing matrix.

    Raises
    ------
    DataError
        On duplicate ids, orphan or non-descending parent links, or a
        bottom set that does not match the tree leaves.
    """
    by_id = _validate_spec(spec)
    order = sorted(spec.nodes, key=lambda n: (n.level, n.id))
    row_ids = tuple(n.id for n in order)
    row_levels = tuple(n.level for n in order)
    col_pos = {bid: j for j, bid in enumerate(spec.bottom_ids)}
    entries = np.zeros((len(order), len(spec.bottom_ids)), dtype=np.float64)
    row_pos = {rid: i for i, rid in enumerate(row_ids)}
    for bid in spec.bottom_ids:
        j = col_pos[bid]
        node: NodeRecord | None = by_id[bid]
        # walk to the root, marking every ancestor row
        while node is not None:
            entries[row_pos[node.id], j] = 1.0
            node = by_id[node.parent] if node.parent is not None else None
    return SummingMatrix(entries=entries, row_ids=row_ids, col_ids=spec.bottom_ids,
                         row_levels=row_levels)


def aggregate_bottom(s: SummingMatrix, bottom_values: np.ndarray) -> np.ndarray:
    """Map bottom values to the full node vector (or matrix, one column per step)."""
    bottom_values = np.asarray(bottom_values, dtype=np.float64)
    if bottom_values.shape[0] != s.n_bottom:
        raise DataError(
            f"bottom vector has {bottom_values.shape[0]} entries, "
            f"summing matrix expects {s.n_bottom}"
        )
    return s.entries @ bottom_values


def check_coherence(s: SummingMatrix, full_values: np.ndarray,
                    tol: float = 1e-7) -> CoherenceReport:
    """Check ``full_values`` against its own bottom slice.

    The violation is the max-norm of ``y - S @ y_bottom`` over all nodes
    (bottom rows contribute zero by construction).
    """
    full_values = np.asarray(full_values, dtype=np.float64)
    if full_values.shape[0] != s.n_rows:
        raise DataError(
            f"full vector has {full_values.shape[0]} entries, "
            f"summing matrix has {s.n_rows} rows"
        )
    bottom = full_values[s.bottom_row_positions()]
    resid = full_values - s.entries @ bottom
    max_violation = float(np.max(np.abs(resid))) if resid.size else 0.0
    return CoherenceReport(ok=max_violation <= tol, max_violation=max_violation)


def spec_from_key_paths(key_paths: list[tuple[str, ...]],
                        level_names: tuple[str, ...]) -> HierarchySpec:
    """Build a tree spec from bottom key paths via distinct prefixes.

    ``level_names`` names the key columns; the root level is prepended
    automatically. Node ids are slash-joined prefixes, the root is
    ``"total"``.
    """
    depth = len(level_names)
    if depth == 0:
        raise DataError("key paths need at least one level")
    for path in key_paths:
        if len(path) != depth:
            raise DataError(
                f"key path {path!r} has {len(path)} parts, expected {depth}"
            )
    levels = (ROOT_ID,) + tuple(level_names)
    nodes: list[NodeRecord] = [NodeRecord(ROOT_ID, 0, None)]
    seen: set[str] = {ROOT_ID}
    for path in sorted(set(key_paths)):
        for k in range(1, depth + 1):
            nid = "/".join(path[:k])
            if nid in seen:
                continue
            seen.add(nid)
            parent = ROOT_ID if k == 1 else "/".join(path[:k - 1])
            nodes.append(NodeRecord(nid, k, parent))
    bottom = tuple("/".join(p) for p in sorted(set(key_paths)))
    return HierarchySpec(levels=levels, nodes=tuple(nodes), bottom_ids=bottom)
