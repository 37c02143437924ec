"""Regenerate src/graphtoken/fixtures/molecules.jsonl from the table below.

Labels are derived from the parsed graph so they always agree with the
parser: ``atom_count`` is heavy atoms / 10, ``has_oxygen`` is 0/1 and
``hetero_count`` is non-carbon heavy atoms / 4.
"""

import json
from pathlib import Path

from graphtoken.molgraph import parse_smiles

MOLECULES = [
    ("C", "methane", "methane is the simplest alkane with a single carbon atom and no oxygen. it is a colorless gas and the main part of natural gas."),
    ("CC", "ethane", "ethane is a small saturated alkane with two carbon atoms in a chain. it is a flammable gas with no functional group."),
    ("CCC", "propane", "propane is a saturated alkane with a chain of three carbon atoms. it is a fuel gas with no oxygen or nitrogen."),
    ("CCCC", "butane", "butane is an alkane with a straight chain of four carbon atoms. it is a hydrocarbon gas used in lighters."),
    ("CCCCC", "pentane", "pentane is a saturated hydrocarbon chain of five carbon atoms. it is a volatile liquid alkane with no heteroatom."),
    ("CCCCCC", "hexane", "hexane is a straight chain alkane with six carbon atoms. it is a nonpolar hydrocarbon solvent."),
    ("CC(C)C", "2-methylpropane", "isobutane is a branched alkane with four carbon atoms. it is a hydrocarbon gas used as a refrigerant."),
    ("CO", "methanol", "methanol is the simplest alcohol with one carbon and a hydroxy group containing oxygen. it is a toxic polar solvent."),
    ("CCO", "ethanol", "ethanol is a primary alcohol with two carbon atoms and a hydroxy group containing oxygen. it is a common polar solvent."),
    ("CCCO", "propan-1-ol", "propanol is a primary alcohol with a chain of three carbon atoms and a hydroxy group containing oxygen."),
    ("CCCCO", "butan-1-ol", "butanol is a primary alcohol with a chain of four carbon atoms and a terminal hydroxy group containing oxygen."),
    ("CC(C)O", "propan-2-ol", "isopropanol is a secondary alcohol with a branched carbon chain and one hydroxy group containing oxygen."),
    ("CC(C)(C)O", "2-methylpropan-2-ol", "tert butanol is a tertiary alcohol with a branched carbon skeleton and a hydroxy group containing oxygen."),
    ("OCCO", "ethane-1,2-diol", "ethylene glycol is a diol with two hydroxy groups containing oxygen on a two carbon chain. it is used as antifreeze."),
    ("OCC(O)CO", "propane-1,2,3-triol", "glycerol is a triol with three hydroxy groups containing oxygen on a three carbon chain. it is a sweet viscous liquid."),
    ("C(=O)O", "formic acid", "formic acid is the simplest carboxylic acid with a carbonyl and a hydroxy group containing oxygen."),
    ("CC(=O)O", "acetic acid", "acetic acid is a carboxylic acid with a methyl group and a carboxyl group containing oxygen. it gives vinegar its taste."),
    ("CCC(=O)O", "propanoic acid", "propanoic acid is a carboxylic acid with a two carbon chain and a carboxyl group containing oxygen."),
    ("CC=O", "acetaldehyde", "acetaldehyde is an aldehyde with a carbonyl group containing oxygen attached to a methyl group."),
    ("CC(C)=O", "propan-2-one", "acetone is a ketone with a carbonyl group containing oxygen between two methyl groups. it is a polar solvent."),
    ("COC", "methoxymethane", "dimethyl ether is an ether with an oxygen atom bridging two methyl groups. it is a gas used as a propellant."),
    ("CCOCC", "ethoxyethane", "diethyl ether is an ether with an oxygen atom linking two ethyl chains. it is a volatile anesthetic solvent."),
    ("CCOC(C)=O", "ethyl acetate", "ethyl acetate is an ester with a carbonyl group and an ether oxygen. it is a sweet smelling solvent."),
    ("COC=O", "methyl formate", "methyl formate is a small ester with a carbonyl group and an ether oxygen. it is a volatile liquid."),
    ("CN", "methanamine", "methylamine is a primary amine with one carbon and an amino group containing nitrogen. it is a basic gas."),
    ("CCN", "ethanamine", "ethylamine is a primary amine with two carbon atoms and an amino group containing nitrogen."),
    ("CNC", "N-methylmethanamine", "dimethylamine is a secondary amine with a nitrogen atom bonded to two methyl groups."),
    ("CN(C)C", "N,N-dimethylmethanamine", "trimethylamine is a tertiary amine with a nitrogen atom bonded to three methyl groups. it smells like fish."),
    ("CC#N", "acetonitrile", "acetonitrile is a nitrile with a carbon nitrogen triple bond attached to a methyl group. it is a polar solvent."),
    ("NC(N)=O", "urea", "urea is an amide with a carbonyl group containing oxygen and two amino groups containing nitrogen."),
    ("CC(N)=O", "acetamide", "acetamide is an amide with a carbonyl group containing oxygen and an amino group containing nitrogen."),
    ("NCC(=O)O", "2-aminoacetic acid", "glycine is an amino acid with an amino group containing nitrogen and a carboxyl group containing oxygen."),
    ("CC(N)C(=O)O", "2-aminopropanoic acid", "alanine is an amino acid with a methyl side chain, an amino group containing nitrogen and a carboxyl group containing oxygen."),
    ("C[N+](=O)[O-]", "nitromethane", "nitromethane is a nitro compound with a charged nitrogen bonded to two oxygen atoms and a methyl group."),
    ("CCl", "chloromethane", "chloromethane is a haloalkane with one carbon and one chlorine halogen atom. it is a gas."),
    ("ClCCl", "dichloromethane", "dichloromethane is a haloalkane with one carbon and two chlorine halogen atoms. it is a dense solvent."),
    ("ClC(Cl)Cl", "trichloromethane", "chloroform is a haloalkane with one carbon and three chlorine halogen atoms. it was used as an anesthetic."),
    ("FC(F)F", "trifluoromethane", "fluoroform is a haloalkane with one carbon and three fluorine halogen atoms. it is an inert gas."),
    ("CCBr", "bromoethane", "bromoethane is a haloalkane with a two carbon chain and one bromine halogen atom."),
    ("CI", "iodomethane", "iodomethane is a haloalkane with one carbon and one iodine halogen atom. it is a methylating reagent."),
    ("CS", "methanethiol", "methanethiol is a thiol with a methyl group and a sulfur atom. it has a strong smell of rotten cabbage."),
    ("CSC", "methylsulfanylmethane", "dimethyl sulfide is a thioether with a sulfur atom bridging two methyl groups."),
    ("CS(C)=O", "methylsulfinylmethane", "dimethyl sulfoxide is a sulfoxide with a sulfur atom double bonded to oxygen between two methyl groups."),
    ("OP(O)(O)=O", "phosphoric acid", "phosphoric acid is an inorganic acid with a phosphorus atom bonded to four oxygen atoms."),
    ("OB(O)O", "boric acid", "boric acid is a weak inorganic acid with a boron atom bonded to three hydroxy groups containing oxygen."),
    ("C=C", "ethene", "ethylene is an alkene with a carbon carbon double bond. it is a plant hormone and a monomer."),
    ("C=CC", "prop-1-ene", "propylene is an alkene with a double bond and a methyl group. it is a monomer for plastics."),
    ("C#C", "ethyne", "acetylene is an alkyne with a carbon carbon triple bond. it burns with a hot flame."),
    ("C1CC1", "cyclopropane", "cyclopropane is a strained ring of three carbon atoms. it is a cyclic alkane with no heteroatom."),
    ("C1CCCC1", "cyclopentane", "cyclopentane is a saturated ring of five carbon atoms. it is a cyclic alkane."),
    ("C1CCCCC1", "cyclohexane", "cyclohexane is a saturated ring of six carbon atoms. it is a nonpolar cyclic alkane solvent."),
    ("OC1CCCCC1", "cyclohexanol", "cyclohexanol is a cyclic alcohol with a six carbon ring and a hydroxy group containing oxygen."),
    ("O=C1CCCCC1", "cyclohexanone", "cyclohexanone is a cyclic ketone with a six carbon ring and a carbonyl group containing oxygen."),
    ("c1ccccc1", "benzene", "benzene is an aromatic ring of six carbon atoms. it is the parent aromatic hydrocarbon."),
    ("Cc1ccccc1", "methylbenzene", "toluene is an aromatic ring of six carbon atoms with a methyl group. it is an aromatic hydrocarbon solvent."),
    ("Oc1ccccc1", "phenol", "phenol is an aromatic ring with a hydroxy group containing oxygen. it is a weak acid and antiseptic."),
    ("COc1ccccc1", "methoxybenzene", "anisole is an aromatic ring with a methoxy group, an ether oxygen bonded to the ring."),
    ("O=Cc1ccccc1", "benzaldehyde", "benzaldehyde is an aromatic ring with an aldehyde carbonyl group containing oxygen. it smells of almonds."),
    ("OC(=O)c1ccccc1", "benzoic acid", "benzoic acid is an aromatic ring with a carboxyl group containing oxygen. it is a food preservative."),
    ("Nc1ccccc1", "aniline", "aniline is an aromatic ring with an amino group containing nitrogen. it is a precursor of dyes."),
    ("NCc1ccccc1", "phenylmethanamine", "benzylamine is an aromatic ring with a methylene linked amino group containing nitrogen."),
    ("N#Cc1ccccc1", "benzonitrile", "benzonitrile is an aromatic ring with a nitrile group, a carbon nitrogen triple bond."),
    ("Fc1ccccc1", "fluorobenzene", "fluorobenzene is an aromatic ring with one fluorine halogen atom."),
    ("Clc1ccccc1", "chlorobenzene", "chlorobenzene is an aromatic ring with one chlorine halogen atom. it is a solvent."),
    ("c1ccncc1", "pyridine", "pyridine is an aromatic ring of five carbon atoms and one nitrogen atom. it is a basic heterocycle."),
    ("c1cncnc1", "pyrimidine", "pyrimidine is an aromatic ring with two nitrogen atoms. it is the core of several nucleobases."),
    ("c1cc[nH]c1", "1H-pyrrole", "pyrrole is a five membered aromatic ring with one nitrogen atom bearing hydrogen."),
    ("c1c[nH]cn1", "1H-imidazole", "imidazole is a five membered aromatic ring with two nitrogen atoms. it appears in histidine."),
    ("c1ccoc1", "furan", "furan is a five membered aromatic ring with one oxygen atom. it is a heterocycle."),
    ("c1ccsc1", "thiophene", "thiophene is a five membered aromatic ring with one sulfur atom. it is a heterocycle."),
    ("c1ccc2ccccc2c1", "naphthalene", "naphthalene is an aromatic hydrocarbon with two fused rings of carbon atoms. it is used in mothballs."),
    ("[NH4+].[Cl-]", "azanium chloride", "ammonium chloride is a salt of a charged nitrogen ion and a chloride ion."),
]


def labels(smiles):
    g = parse_smiles(smiles)
    heavy = [a for a in g.atoms if a.element != "H"]
    hetero = [a for a in heavy if a.element != "C"]
    return {
        "atom_count": round(len(heavy) / 10, 4),
        "has_oxygen": int(any(a.element == "O" for a in heavy)),
        "hetero_count": round(len(hetero) / 4, 4),
    }


def main():
    out = Path(__file__).resolve().parents[1] / "src" / "graphtoken" / "fixtures" / "molecules.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        for smiles, iupac, description in MOLECULES:
            rec = {"smiles": smiles, "iupac": iupac, "description": description, "labels": labels(smiles)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {len(MOLECULES)} records to {out}")


if __name__ == "__main__":
    main()
