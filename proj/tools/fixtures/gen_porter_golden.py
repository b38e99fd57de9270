"""Writes tests/fixtures/porter_golden.tsv from NLTK's Porter stemmer in its
original-algorithm mode. Words come from the given text files plus a fixed
list of classic Porter examples; only lowercase alphabetic words longer than
two letters are kept."""
import re
import sys

from nltk.stem.porter import PorterStemmer

CLASSIC = """caresses ponies ties caress cats feed agreed plastered bled motoring sing
conflated troubled sized hopping tanned falling hissing fizzed failing filing
happy sky relational conditional rational valenci hesitanci digitizer
conformabli radicalli differentli vileli analogousli vietnamization predication
operator feudalism decisiveness hopefulness callousness formaliti sensitiviti
sensibiliti triplicate formative formalize electriciti electrical hopeful goodness
revival allowance inference airliner gyroscopic adjustable defensible irritant
replacement adjustment dependent adoption homologou communism activate angulariti
homologous effective bowdlerize probate rate cease controll roll generalizations
oscillators""".split()


def main(out_path, *sources):
    words = set(CLASSIC)
    for src in sources:
        with open(src, encoding="utf-8", errors="ignore") as f:
            words.update(w.lower() for w in re.findall(r"[A-Za-z]+", f.read()))
    stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)
    with open(out_path, "w", encoding="utf-8") as out:
        for w in sorted(w for w in words if len(w) > 2):
            out.write(f"{w}\t{stemmer.stem(w)}\n")


if __name__ == "__main__":
    main(sys.argv[1], *sys.argv[2:])
