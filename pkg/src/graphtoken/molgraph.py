"""SMILES subset parser, atom/bond featurization and 1-WL colour refinement.

Supported grammar: organic-subset atoms (B C N O P S F Cl Br I), aromatic
lowercase atoms (b c n o p s), bracket atoms with element, H count and
charge, bonds ``- = # :``, branches, ring closures ``0-9`` and ``%nn`` and
``.`` for disconnected fragments.  Stereo (``/ \\ @``), isotopes and atom
classes raise :class:`ParseError` rather than being dropped.

Implicit hydrogens for unbracketed atoms follow the valence table below:
the smallest allowed valence that is >= the explicit bond-order sum, minus
that sum.  Aromatic atoms use their lowest valence and count one extra
bond for the delocalised system, so ``c`` in benzene gets one H and ``n`` in
pyridine none.  Bracket atoms carry exactly the H count written.

    B: 3    C: 4    N: 3, 5    O: 2    P: 3, 5    S: 2, 4, 6
    F, Cl, Br, I: 1
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "H")
ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,), "H": (1,),
}
BOND_ORDERS = ("single", "double", "triple", "aromatic")
_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
_BOND_VALENCE = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.0}

NODE_FEATURES = len(ELEMENTS) + 7 + 1 + 1 + 5
EDGE_FEATURES = len(BOND_ORDERS)


class ParseError(ValueError):
    """Malformed or unsupported SMILES; ``offset`` is the byte position."""

    def __init__(self, offset: int, reason: str):
        super().__init__(f"{reason} at offset {offset}")
        self.offset = offset
        self.reason = reason


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    explicit_h: int | None = None


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: str = "single"


@dataclass
class MolGraph:
    atoms: list[Atom]
    bonds: list[Bond]

    def __post_init__(self):
        self._validate()

    def _validate(self):
        n = len(self.atoms)
        if n == 0:
            raise ValueError("molecule has no atoms")
        for a in self.atoms:
            if a.element not in ELEMENTS:
                raise ValueError(f"element {a.element!r} not supported")
            if abs(a.formal_charge) > 4:
                raise ValueError(f"formal charge {a.formal_charge} out of range")
        seen = set()
        for b in self.bonds:
            if not (0 <= b.begin < n and 0 <= b.end < n) or b.begin == b.end:
                raise ValueError(f"bad bond endpoints {b.begin}-{b.end}")
            if b.order not in BOND_ORDERS:
                raise ValueError(f"bad bond order {b.order!r}")
            key = frozenset((b.begin, b.end))
            if key in seen:
                raise ValueError(f"duplicate bond {b.begin}-{b.end}")
            seen.add(key)
            if b.order == "aromatic" and not (self.atoms[b.begin].aromatic and self.atoms[b.end].aromatic):
                raise ValueError("aromatic bond between non-aromatic atoms")

    def neighbors(self) -> list[list[tuple[int, str]]]:
        nbrs: list[list[tuple[int, str]]] = [[] for _ in self.atoms]
        for b in self.bonds:
            nbrs[b.begin].append((b.end, b.order))
            nbrs[b.end].append((b.begin, b.order))
        return nbrs

    def degree(self, i: int) -> int:
        return sum(1 for b in self.bonds if i in (b.begin, b.end))

    def hydrogen_count(self, i: int) -> int:
        atom = self.atoms[i]
        if atom.explicit_h is not None:
            return atom.explicit_h
        used = sum(_BOND_VALENCE[b.order] for b in self.bonds if i in (b.begin, b.end))
        allowed = VALENCES[atom.element]
        if atom.aromatic:
            return max(0, int(allowed[0] - used - 1))
        for v in allowed:
            if v >= used:
                return int(v - used)
        return 0

    def permuted(self, order) -> "MolGraph":
        """Relabel atoms so that new atom ``k`` is old atom ``order[k]``."""
        order = list(order)
        inverse = {old: new for new, old in enumerate(order)}
        atoms = [self.atoms[old] for old in order]
        bonds = [Bond(inverse[b.begin], inverse[b.end], b.order) for b in self.bonds]
        return MolGraph(atoms, bonds)

    def num_components(self) -> int:
        parent = list(range(len(self.atoms)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for b in self.bonds:
            parent[find(b.begin)] = find(b.end)
        return len({find(i) for i in range(len(self.atoms))})


@dataclass
class GraphTensors:
    node_features: np.ndarray
    edge_index: list[tuple[int, int]]
    edge_features: np.ndarray
    num_nodes: int = field(init=False)

    def __post_init__(self):
        self.num_nodes = self.node_features.shape[0]


# ----------------------------------------------------------------- parsing

class _Parser:
    def __init__(self, text: str):
        self.s = text
        self.i = 0
        self.atoms: list[Atom] = []
        self.bonds: list[Bond] = []
        self.bond_keys: set[frozenset] = set()

    def fail(self, reason, offset=None):
        raise ParseError(self.i if offset is None else offset, reason)

    def bond_order(self, a: int, b: int, symbol: str | None, offset: int) -> str:
        both_aromatic = self.atoms[a].aromatic and self.atoms[b].aromatic
        if symbol is None:
            return "aromatic" if both_aromatic else "single"
        order = _BOND_SYMBOLS[symbol]
        if order == "aromatic" and not both_aromatic:
            self.fail("aromatic bond between non-aromatic atoms", offset)
        return order

    def add_bond(self, a: int, b: int, symbol: str | None, offset: int):
        if a == b:
            self.fail("ring bond to itself", offset)
        key = frozenset((a, b))
        if key in self.bond_keys:
            self.fail("duplicate bond", offset)
        self.bond_keys.add(key)
        self.bonds.append(Bond(a, b, self.bond_order(a, b, symbol, offset)))

    def parse(self) -> MolGraph:
        s = self.s
        if not s:
            self.fail("empty string", 0)
        if not s.isascii():
            self.fail("non-ASCII input", next(k for k, c in enumerate(s) if ord(c) > 127))
        prev: int | None = None
        branches: list[tuple[int, int]] = []
        pending: tuple[str, int] | None = None
        rings: dict[int, tuple[int, str | None, int]] = {}
        n = len(s)
        while self.i < n:
            ch = s[self.i]
            start = self.i
            if ch == "(":
                if prev is None:
                    self.fail("branch without preceding atom")
                if pending:
                    self.fail("bond symbol before branch")
                branches.append((prev, start))
                self.i += 1
            elif ch == ")":
                if not branches:
                    self.fail("unmatched paren")
                if pending:
                    self.fail("dangling bond", pending[1])
                if s[self.i - 1] == "(":
                    self.fail("empty branch")
                if prev is None:
                    self.fail("dangling dot")
                prev = branches.pop()[0]
                self.i += 1
            elif ch in _BOND_SYMBOLS:
                if prev is None:
                    self.fail("bond without preceding atom")
                if pending:
                    self.fail("consecutive bond symbols")
                pending = (ch, start)
                self.i += 1
            elif ch in "/\\":
                self.fail("unsupported feature: directional bond")
            elif ch == "@":
                self.fail("unsupported feature: chirality")
            elif ch == ".":
                if prev is None or pending:
                    self.fail("misplaced dot")
                prev = None
                self.i += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    self.fail("ring bond without preceding atom")
                num = self.ring_number()
                symbol = pending[0] if pending else None
                if num in rings:
                    other, other_symbol, _ = rings.pop(num)
                    if symbol and other_symbol and symbol != other_symbol:
                        self.fail("conflicting ring bond symbols", start)
                    self.add_bond(other, prev, symbol or other_symbol, start)
                else:
                    rings[num] = (prev, symbol, start)
                pending = None
            else:
                idx = self.atom()
                if prev is not None:
                    self.add_bond(prev, idx, pending[0] if pending else None,
                                  pending[1] if pending else start)
                pending = None
                prev = idx
        if branches:
            self.fail("unmatched paren", branches[-1][1])
        if rings:
            self.fail("unmatched ring bond", min(off for _, _, off in rings.values()))
        if pending:
            self.fail("dangling bond", pending[1])
        if prev is None:
            self.fail("dangling dot", n - 1)
        try:
            return MolGraph(self.atoms, self.bonds)
        except ValueError as exc:
            self.fail(str(exc), n)

    def ring_number(self) -> int:
        s = self.s
        if s[self.i] == "%":
            digits = s[self.i + 1:self.i + 3]
            if len(digits) != 2 or not digits.isdigit():
                self.fail("malformed %nn ring number")
            self.i += 3
            return int(digits)
        self.i += 1
        return int(s[self.i - 1])

    def atom(self) -> int:
        s = self.s
        ch = s[self.i]
        if ch == "[":
            atom = self.bracket_atom()
        elif s.startswith(("Cl", "Br"), self.i):
            atom = Atom(s[self.i:self.i + 2])
            self.i += 2
        elif ch in ORGANIC:
            atom = Atom(ch)
            self.i += 1
        elif ch in AROMATIC:
            atom = Atom(AROMATIC[ch], aromatic=True)
            self.i += 1
        elif ch == "]":
            self.fail("unmatched bracket")
        elif ch.isalpha() or ch == "*":
            self.fail("unknown atom")
        else:
            self.fail(f"unexpected character {ch!r}")
        self.atoms.append(atom)
        return len(self.atoms) - 1

    def bracket_atom(self) -> Atom:
        s = self.s
        open_at = self.i
        self.i += 1
        if self.i < len(s) and s[self.i].isdigit():
            self.fail("unsupported feature: isotope")
        if s.startswith(("Cl", "Br"), self.i):
            element, aromatic = s[self.i:self.i + 2], False
            self.i += 2
        elif self.i < len(s) and s[self.i] in ELEMENTS:
            element, aromatic = s[self.i], False
            self.i += 1
        elif self.i < len(s) and s[self.i] in AROMATIC:
            element, aromatic = AROMATIC[s[self.i]], True
            self.i += 1
        else:
            self.fail("unknown atom")
        if self.i < len(s) and s[self.i].isalpha() and s[self.i].islower():
            self.fail("unknown atom")
        if self.i < len(s) and s[self.i] == "@":
            self.fail("unsupported feature: chirality")
        h_count = 0
        if self.i < len(s) and s[self.i] == "H":
            self.i += 1
            h_count = 1
            if self.i < len(s) and s[self.i].isdigit():
                h_count = int(s[self.i])
                self.i += 1
        charge = 0
        if self.i < len(s) and s[self.i] in "+-":
            sign = 1 if s[self.i] == "+" else -1
            self.i += 1
            if self.i < len(s) and s[self.i].isdigit():
                charge = sign * int(s[self.i])
                self.i += 1
            else:
                charge = sign
                while self.i < len(s) and s[self.i] == ("+" if sign > 0 else "-"):
                    charge += sign
                    self.i += 1
        if abs(charge) > 4:
            self.fail("formal charge out of range")
        if self.i < len(s) and s[self.i] == ":":
            self.fail("unsupported feature: atom class")
        if self.i >= len(s):
            self.fail("unterminated bracket atom", open_at)
        if s[self.i] != "]":
            self.fail(f"unexpected character {s[self.i]!r} in bracket atom")
        self.i += 1
        return Atom(element, charge, aromatic, h_count)


def parse_smiles(s: str) -> MolGraph:
    return _Parser(s).parse()


# ----------------------------------------------------------------- features

def atom_features(g: MolGraph, i: int) -> np.ndarray:
    atom = g.atoms[i]
    row = np.zeros(NODE_FEATURES)
    row[ELEMENTS.index(atom.element)] = 1.0
    off = len(ELEMENTS)
    row[off + min(g.degree(i), 6)] = 1.0
    off += 7
    row[off] = float(max(-4, min(4, atom.formal_charge)))
    row[off + 1] = 1.0 if atom.aromatic else 0.0
    row[off + 2 + min(g.hydrogen_count(i), 4)] = 1.0
    return row


def featurize(g: MolGraph) -> GraphTensors:
    """Node rows follow atom order; bond ``k`` yields directed edges ``2k`` and ``2k+1``."""
    x = np.stack([atom_features(g, i) for i in range(len(g.atoms))])
    edges: list[tuple[int, int]] = []
    ef = np.zeros((2 * len(g.bonds), EDGE_FEATURES))
    for k, b in enumerate(g.bonds):
        edges.append((b.begin, b.end))
        edges.append((b.end, b.begin))
        col = BOND_ORDERS.index(b.order)
        ef[2 * k, col] = ef[2 * k + 1, col] = 1.0
    return GraphTensors(x, edges, ef)


def _color_id(obj) -> str:
    return hashlib.sha1(repr(obj).encode()).hexdigest()[:16]


def wl_colors(g: MolGraph, rounds: int = 3) -> list[str]:
    """Sorted multiset of 1-WL colours after ``rounds`` refinements.

    Seeds are (element, charge, aromatic); each round hashes a node's colour
    with the sorted multiset of (bond order, neighbour colour).  Colours are
    content hashes, so multisets from different molecules are comparable.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    colors = [_color_id((a.element, a.formal_charge, a.aromatic)) for a in g.atoms]
    nbrs = g.neighbors()
    for _ in range(rounds):
        colors = [_color_id((colors[v], sorted((order, colors[u]) for u, order in nbrs[v])))
                  for v in range(len(g.atoms))]
    return sorted(colors)


def element_counts(g: MolGraph) -> Counter:
    return Counter(a.element for a in g.atoms)
