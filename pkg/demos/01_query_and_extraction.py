"""
Finding microsystem occurrences
===============================

A microsystem is a handful of forms that compete for one job. The proform
system has IT, THIS and THAT; the article system has A, THE and the zero
article. This script walks from a single dependency pattern to the full
extraction of the bundled gold mini-corpus.
"""
from importlib import resources

from microsys import compile_pattern, extract_occurrences, get_microsystem, match_sentence, parse_conllu
from microsys.microsystems import MS_NAMES, evaluate_extraction, read_gold

data = resources.files("microsys") / "data"
docs = parse_conllu(data.joinpath("gold_mini.conllu").read_bytes())
print(f"{len(docs)} documents, {sum(len(d.sentences) for d in docs)} sentences")

###############################################################################
# A pattern is a small graph. The zero article is the absence of an edge, so it
# is written with negated edges whose far end is existential.

zero = compile_pattern("""
NODE N[upos=NOUN]
NODE D[]
NODE P[]
!EDGE N -[det]-> D
!EDGE N -[nmod:poss]-> P
ANCHOR N
""")
for d in docs[:2]:
    for n, s in enumerate(d.sentences, start=1):
        hits = [s[m.anchor_index].form for m in match_sentence(zero, s)]
        if hits:
            print(f"{d.writing_id}/{n}: {s.text!r} -> bare nouns {hits}")

###############################################################################
# The seven built-in microsystems bundle one pattern set per form. Extraction
# on the gold corpus should reproduce the hand annotation exactly.

with data.joinpath("gold_mini.csv").open(encoding="utf-8") as fh:
    gold = read_gold(fh)

for ms in MS_NAMES:
    spec = get_microsystem(ms)
    occ = extract_occurrences(spec, docs)
    rep = evaluate_extraction(occ, [g for g in gold if g.ms == ms], spec.forms)
    print(f"{ms:7s} {len(occ):3d} occurrences  accuracy {rep.accuracy:.2f}")

print()
print(rep.to_csv("REL"))
