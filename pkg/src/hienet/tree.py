"""ICD-style code taxonomy built from prefix nesting of code strings."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

ROOT = "<root>"


def tokenize(text: str) -> List[str]:
    return text.lower().split()


def prefix_chain(code: str) -> List[str]:
    """Candidate ancestors of ``code``, longest first.

    Dotted codes truncate digit by digit down to the part before the dot
    ("521.00" -> "521.0" -> "521"); undotted codes truncate down to a
    3-character category ("4019" -> "401").
    """
    if "." in code:
        head, tail = code.split(".", 1)
        out = [f"{head}.{tail[:i]}" for i in range(len(tail) - 1, 0, -1)]
        out.append(head)
        return out
    return [code[:i] for i in range(len(code) - 1, 2, -1)]


@dataclass
class CodeNode:
    id: str
    description: Tuple[str, ...]
    parent: Optional[str]
    children: List[str] = field(default_factory=list)
    depth: int = 0
    child_index: int = 0


@dataclass
class CodeTree:
    root: CodeNode
    nodes: Dict[str, CodeNode]
    max_branching: int
    max_depth: int

    @property
    def codes(self) -> List[str]:
        """Non-root codes in label-index order (lexicographic)."""
        return sorted(c for c in self.nodes if c != ROOT)

    def index(self) -> Dict[str, int]:
        return {c: i for i, c in enumerate(self.codes)}

    def __contains__(self, code) -> bool:
        return code in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, code: str) -> CodeNode:
        try:
            return self.nodes[code]
        except KeyError:
            raise KeyError(f"unknown code {code!r}") from None

    def path(self, code: str) -> List[str]:
        """Codes from the first level below the root down to ``code``."""
        out = []
        node = self.node(code)
        while node.parent is not None:
            out.append(node.id)
            node = self.nodes[node.parent]
        return out[::-1]

    def ancestors(self, code: str) -> List[str]:
        return self.path(code)[:-1]

    def to_dict(self) -> dict:
        def rec(node):
            return {
                "code": node.id,
                "description": " ".join(node.description),
                "child_index": node.child_index,
                "children": [rec(self.nodes[c]) for c in node.children],
            }
        return rec(self.root)


def build_tree(codes: Sequence[Tuple[str, str]]) -> CodeTree:
    """Nest codes under their longest present prefix; orphans hang off a virtual root."""
    descr = {}
    for code, text in codes:
        if not code:
            raise ValueError("empty code string")
        if code == ROOT:
            raise ValueError(f"code string {ROOT!r} is reserved")
        if code in descr:
            raise ValueError(f"duplicate code {code!r}")
        descr[code] = tuple(tokenize(text))

    nodes = {ROOT: CodeNode(ROOT, (), None)}
    for code in sorted(descr):
        parent = next((p for p in prefix_chain(code) if p in descr), ROOT)
        nodes[code] = CodeNode(code, descr[code], parent)
    for code in sorted(descr):
        nodes[nodes[code].parent].children.append(code)

    # children are already lexicographic; assign depth top-down
    stack = [ROOT]
    while stack:
        node = nodes[stack.pop()]
        for i, c in enumerate(node.children):
            child = nodes[c]
            child.child_index = i
            child.depth = node.depth + 1
            stack.append(c)

    return CodeTree(
        root=nodes[ROOT],
        nodes=nodes,
        max_branching=max(len(n.children) for n in nodes.values()),
        max_depth=max(n.depth for n in nodes.values()),
    )


def parent(t: CodeTree, code: str) -> Optional[str]:
    p = t.node(code).parent
    return None if p is None or p == ROOT else p


def children(t: CodeTree, code: str) -> List[str]:
    return list(t.node(code).children)


def siblings(t: CodeTree, code: str) -> List[str]:
    node = t.node(code)
    if node.parent is None:
        return []
    return [c for c in t.nodes[node.parent].children if c != code]


def depth(t: CodeTree, code: str) -> int:
    return t.node(code).depth


def me_pairs(t: CodeTree, labels: Iterable[str]) -> List[Tuple[str, str, str]]:
    """Mutually exclusive pairs inside a label set (detection only).

    Returns (ancestor, descendant, "parent-child") for every ancestor pair and
    (a, b, "sibling") for every pair sharing a parent, sorted.
    """
    labels = sorted(set(labels))
    for c in labels:
        t.node(c)
    out = []
    for a, b in combinations(labels, 2):
        if a in t.ancestors(b):
            out.append((a, b, "parent-child"))
        elif b in t.ancestors(a):
            out.append((b, a, "parent-child"))
        elif t.nodes[a].parent == t.nodes[b].parent:
            out.append((a, b, "sibling"))
    return out


def tree_adjacency(t: CodeTree) -> List[set]:
    """Parent and children of each code, as label-index sets (root excluded)."""
    idx = t.index()
    adj = [set() for _ in idx]
    for c, i in idx.items():
        p = t.nodes[c].parent
        if p in idx:
            adj[i].add(idx[p])
            adj[idx[p]].add(i)
    return adj


# ------------------------------------------------------------------------ io

def read_code_file(path) -> List[Tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            code, sep, text = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected TAB-separated code and description")
            out.append((code.strip(), text))
    return out


def write_code_file(path, codes: Sequence[Tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for code, text in codes:
            fh.write(f"{code}\t{text}\n")


def save_tree(t: CodeTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(t.to_dict(), fh, indent=1)
        fh.write("\n")


def load_tree(path) -> CodeTree:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    records = []

    def rec(node):
        if node["code"] != ROOT:
            records.append((node["code"], node["description"]))
        for c in node["children"]:
            rec(c)
    rec(doc)
    return build_tree(records)
