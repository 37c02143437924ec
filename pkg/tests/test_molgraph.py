import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphtoken.molgraph import (EDGE_FEATURES, ELEMENTS, NODE_FEATURES, Atom, Bond, MolGraph, ParseError,
                                 element_counts, featurize, parse_smiles, wl_colors)

# (smiles, heavy atoms, bonds, components, {atom index: implicit H}) for valid input
VALID = [
    ("C", 1, 0, 1, {0: 4}),
    ("CC", 2, 1, 1, {0: 3, 1: 3}),
    ("CCO", 3, 2, 1, {2: 1}),
    ("C=O", 2, 1, 1, {0: 2, 1: 0}),
    ("C#N", 2, 1, 1, {0: 1, 1: 0}),
    ("C-C", 2, 1, 1, {0: 3}),
    ("CC(C)C", 4, 3, 1, {1: 1}),
    ("CC(C)(C)C", 5, 4, 1, {1: 0}),
    ("CC(=O)O", 4, 3, 1, {1: 0, 3: 1}),
    ("C(C(C))C", 4, 3, 1, {0: 2}),
    ("C1CC1", 3, 3, 1, {0: 2}),
    ("C1CCCCC1", 6, 6, 1, {3: 2}),
    ("C%10CC%10", 3, 3, 1, {0: 2}),
    ("C1CC2CCC12", 6, 7, 1, {5: 1, 2: 1}),
    ("C1=CC=CC=C1", 6, 6, 1, {0: 1}),
    ("c1ccccc1", 6, 6, 1, {0: 1}),
    ("c1ccncc1", 6, 6, 1, {3: 0}),
    ("c1cc[nH]c1", 5, 5, 1, {3: 1}),
    ("c1ccoc1", 5, 5, 1, {3: 0}),
    ("c1ccsc1", 5, 5, 1, {3: 0}),
    ("c1ccc2ccccc2c1", 10, 11, 1, {3: 0, 4: 1}),
    ("Cc1ccccc1", 7, 7, 1, {0: 3}),
    ("c1:c:c:c:c:c1", 6, 6, 1, {0: 1}),
    ("[NH4+]", 1, 0, 1, {0: 4}),
    ("[O-]C=O", 3, 2, 1, {0: 0}),
    ("[Na+].[Cl-]", None, None, None, None),  # Na is outside the element set
    ("[NH4+].[Cl-]", 2, 0, 2, {1: 0}),
    ("CC.O", 3, 1, 2, {2: 2}),
    ("C[N+](C)(C)C", 5, 4, 1, {1: 0}),
    ("[Fe]", None, None, None, None),
    ("ClCBr", 3, 2, 1, {1: 2}),
    ("FC(F)(F)F", 5, 4, 1, {1: 0}),
    ("ICI", 3, 2, 1, {1: 2}),
    ("OS(=O)(=O)O", 5, 4, 1, {1: 0}),
    ("CS(C)=O", 4, 3, 1, {1: 0}),
    ("OP(O)(O)=O", 5, 4, 1, {1: 0}),
    ("B(O)(O)O", 4, 3, 1, {0: 0}),
    ("[CH2]", 1, 0, 1, {0: 2}),
    ("[C]", 1, 0, 1, {0: 0}),
    ("[OH-]", 1, 0, 1, {0: 1}),
    ("[N+2]", 1, 0, 1, {0: 0}),
    ("[O--]", 1, 0, 1, {0: 0}),
    ("N#CC#N", 4, 3, 1, {1: 0}),
    ("C(=O)=O", 3, 2, 1, {0: 0}),
    ("OCC(O)CO", 6, 5, 1, {2: 1}),
    ("C1CC1.C1CC1", 6, 6, 2, {0: 2}),
]
VALID = [v for v in VALID if v[1] is not None]

ERRORS = [
    ("", "empty"),
    ("C(", "unmatched paren"),
    ("C)", "unmatched paren"),
    ("C1CC", "unmatched ring bond"),
    ("X", "unknown atom"),
    ("[Xx]", "unknown atom"),
    ("[Na+]", "unknown atom"),
    ("C/C=C/C", "unsupported feature"),
    ("C\\C", "unsupported feature"),
    ("C[C@H](O)N", "unsupported feature"),
    ("[13CH4]", "unsupported feature"),
    ("[CH4:1]", "unsupported feature"),
    ("[CH4", "unterminated bracket"),
    ("C==C", ""),
    ("C=", ""),
    ("(C)", ""),
    ("C..C", ""),
    (".C", ""),
    ("C11", ""),
    ("C1C1", ""),
    ("C%", ""),
    ("C%1C", ""),
    ("[C+5]", ""),
    ("C C", ""),
]


@pytest.mark.parametrize("smiles,n_atoms,n_bonds,comps,hs", VALID, ids=[v[0] for v in VALID])
def test_valid_corpus(smiles, n_atoms, n_bonds, comps, hs):
    g = parse_smiles(smiles)
    assert len(g.atoms) == n_atoms
    assert len(g.bonds) == n_bonds
    assert g.num_components() == comps
    for i, h in hs.items():
        assert g.hydrogen_count(i) == h, (smiles, i)


@pytest.mark.parametrize("smiles,reason", ERRORS, ids=[e[0] or "<empty>" for e in ERRORS])
def test_error_corpus(smiles, reason):
    with pytest.raises(ParseError) as exc:
        parse_smiles(smiles)
    assert reason in exc.value.reason
    assert 0 <= exc.value.offset <= len(smiles)


def test_corpus_is_large_enough():
    assert len(VALID) + len(ERRORS) >= 40


def test_error_offset_points_at_problem():
    with pytest.raises(ParseError) as exc:
        parse_smiles("CCX")
    assert exc.value.offset == 2


def test_bond_orders_and_charges():
    g = parse_smiles("C=CC#N")
    assert [b.order for b in g.bonds] == ["double", "single", "triple"]
    assert parse_smiles("[O-]").atoms[0].formal_charge == -1
    assert parse_smiles("[N+2]").atoms[0].formal_charge == 2
    assert parse_smiles("c1ccccc1").bonds[0].order == "aromatic"


def test_ring_closure_with_bond_symbol():
    g = parse_smiles("C=1CC1")
    assert sorted(b.order for b in g.bonds) == ["double", "single", "single"]


def _check_invariants(g: MolGraph):
    n = len(g.atoms)
    assert n >= 1
    keys = set()
    for b in g.bonds:
        assert 0 <= b.begin < n and 0 <= b.end < n and b.begin != b.end
        key = frozenset((b.begin, b.end))
        assert key not in keys
        keys.add(key)
    for a in g.atoms:
        assert a.element in ELEMENTS
        assert abs(a.formal_charge) <= 4
    gt = featurize(g)
    assert gt.node_features.shape == (n, NODE_FEATURES)
    assert gt.edge_features.shape == (2 * len(g.bonds), EDGE_FEATURES)
    assert np.isfinite(gt.node_features).all()


FUZZ_ALPHABET = list("CNOSPBFIcnosp()[]=#-:.%+@/\\123456789Hl") + ["Cl", "Br", "c1", "C1"]


def test_fuzz_10k_never_crashes():
    rnd = random.Random(1234)
    accepted = 0
    for _ in range(10_000):
        s = "".join(rnd.choice(FUZZ_ALPHABET) for _ in range(rnd.randint(0, 14)))
        try:
            g = parse_smiles(s)
        except ParseError:
            continue
        accepted += 1
        _check_invariants(g)
    assert accepted > 100  # the fuzzer does reach the valid side


@given(st.text(max_size=20))
def test_arbitrary_text_only_raises_parse_error(s):
    try:
        g = parse_smiles(s)
    except ParseError:
        return
    _check_invariants(g)


def test_molgraph_validation():
    with pytest.raises(ValueError):
        MolGraph([], [])
    with pytest.raises(ValueError):
        MolGraph([Atom("C"), Atom("C")], [Bond(0, 1), Bond(1, 0)])
    with pytest.raises(ValueError):
        MolGraph([Atom("C")], [Bond(0, 0)])
    with pytest.raises(ValueError):
        MolGraph([Atom("C"), Atom("C")], [Bond(0, 1, "aromatic")])


def test_featurize_layout():
    g = parse_smiles("C=O")
    gt = featurize(g)
    assert gt.edge_index == [(0, 1), (1, 0)]
    np.testing.assert_array_equal(gt.edge_features[0], gt.edge_features[1])
    assert gt.edge_features[0, 1] == 1.0  # double
    assert gt.node_features[0, ELEMENTS.index("C")] == 1.0
    assert gt.node_features[1, ELEMENTS.index("O")] == 1.0


def test_permuted_relabels():
    g = parse_smiles("CCO")
    p = g.permuted([2, 0, 1])
    assert [a.element for a in p.atoms] == ["O", "C", "C"]
    assert wl_colors(p) == wl_colors(g)
    assert element_counts(p) == element_counts(g)


def test_wl_distinguishes_bond_orders():
    assert wl_colors(parse_smiles("CCO")) != wl_colors(parse_smiles("CC=O"))
    assert wl_colors(parse_smiles("CCO")) != wl_colors(parse_smiles("COC"))
    assert wl_colors(parse_smiles("OCC")) == wl_colors(parse_smiles("CCO"))


@given(st.permutations(range(8)))
def test_wl_invariant_under_permutation(order):
    g = parse_smiles("CC(=O)Nc1ccc1")
    assert len(g.atoms) == 8
    assert wl_colors(g.permuted(order)) == wl_colors(g)
