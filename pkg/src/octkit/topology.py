"""Hierarchical (tree) network topology shared by the simulator and the monitor.

Every non-root vertex has exactly one parent link, so a link is identified by
its child vertex and the path between two vertices is unique.  Directed edges
are ``(u, v)`` pairs in traversal order.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping

Edge = tuple[str, str]


class TopologyError(ValueError):
    pass


class UnknownNode(LookupError):
    """A node id that is not part of the topology."""


class TopologyTree:
    def __init__(self, parents: Mapping[str, str | None]):
        parent: dict[str, str | None] = dict(parents)
        # vertices that only appear as parents are implicit roots
        for p in list(parent.values()):
            if p is not None and p not in parent:
                parent[p] = None
        roots = [v for v, p in parent.items() if p is None]
        if len(roots) != 1:
            raise TopologyError(f"expected exactly one root, found {sorted(roots)}")
        self.root: str = roots[0]
        self.parent = parent
        self.children: dict[str, list[str]] = {v: [] for v in parent}
        for v, p in parent.items():
            if p is not None:
                self.children[p].append(v)
        for kids in self.children.values():
            kids.sort()

        self.depth: dict[str, int] = {}
        stack = [(self.root, 0)]
        while stack:
            v, d = stack.pop()
            self.depth[v] = d
            stack.extend((c, d + 1) for c in self.children[v])
        if len(self.depth) != len(parent):
            unreachable = sorted(set(parent) - set(self.depth))
            raise TopologyError(f"cycle or disconnected vertices: {unreachable}")

        self.leaves: list[str] = sorted(v for v, kids in self.children.items() if not kids)
        self._leaf_set = frozenset(self.leaves)
        self._path_cache: dict[tuple[str, str], tuple[Edge, ...]] = {}

    @classmethod
    def hierarchical(cls, groups: Mapping[str, Iterable[str]], root: str = "core") -> TopologyTree:
        """Two-level tree: ``root -> group switch -> leaves``."""
        parents: dict[str, str | None] = {root: None}
        for switch, nodes in groups.items():
            parents[switch] = root
            for n in nodes:
                parents[n] = switch
        return cls(parents)

    def __contains__(self, v: object) -> bool:
        return v in self.parent

    def __repr__(self) -> str:
        return f"TopologyTree(root={self.root!r}, leaves={len(self.leaves)}, vertices={len(self.parent)})"

    @property
    def vertices(self) -> list[str]:
        return sorted(self.parent)

    @property
    def switches(self) -> list[str]:
        return sorted(v for v, kids in self.children.items() if kids)

    def is_leaf(self, v: str) -> bool:
        return v in self._leaf_set

    def links(self) -> list[str]:
        """Child vertex of every parent link."""
        return sorted(v for v, p in self.parent.items() if p is not None)

    def edges(self) -> list[Edge]:
        """All directed edges, both directions of every link."""
        out: list[Edge] = []
        for child in self.links():
            p = self.parent[child]
            out.append((child, p))
            out.append((p, child))
        return out

    @staticmethod
    def link_of(edge: Edge, parent: Mapping[str, str | None]) -> str:
        u, v = edge
        return u if parent.get(u) == v else v

    def check(self, v: str) -> None:
        if v not in self.parent:
            raise UnknownNode(v)

    def path(self, src: str, dst: str) -> tuple[Edge, ...]:
        """Directed edges on the unique path ``src -> dst`` (empty if equal)."""
        key = (src, dst)
        cached = self._path_cache.get(key)
        if cached is not None:
            return cached
        self.check(src)
        self.check(dst)
        up: list[Edge] = []
        down: list[Edge] = []
        a, b = src, dst
        da, db = self.depth[a], self.depth[b]
        while da > db:
            p = self.parent[a]
            up.append((a, p))
            a, da = p, da - 1
        while db > da:
            p = self.parent[b]
            down.append((p, b))
            b, db = p, db - 1
        while a != b:
            pa, pb = self.parent[a], self.parent[b]
            up.append((a, pa))
            down.append((pb, b))
            a, b = pa, pb
        result = tuple(up + down[::-1])
        self._path_cache[key] = result
        return result

    def hops(self, src: str, dst: str) -> int:
        return len(self.path(src, dst))

    def group_of(self, leaf: str) -> str | None:
        self.check(leaf)
        return self.parent[leaf]
