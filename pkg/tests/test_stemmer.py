import pytest
from nltk.stem.porter import PorterStemmer

from acrolocal.stemmer import stem

WORDS = """
caresses ponies ties caress cats feed agreed plastered bled motoring sing conflated troubled sized
hopping tanned falling hissing fizzed failing filing happy sky relational conditional rational valenci
hesitanci digitizer conformabli radicalli differentli vileli analogousli vietnamization predication
operator feudalism decisiveness hopefulness callousness formaliti sensitiviti sensibiliti triplicate
formative formalize electriciti electrical hopeful goodness revival allowance inference airliner
gyroscopic adjustable defensible irritant replacement adjustment dependent adoption homologou
communism activate angulariti homologous effective bowdlerize probate rate cease controll roll
generalizations oscillators stenosis sclerosis receptors interrogations outcomes cardiac device
patients demyelination imaging relapse therapy disease modifying emergency department standard
practice physical therapy prothrombin time multiple mitral stenosis carcinoma calcium
""".split()


def test_known_examples():
    assert stem("caresses") == "caress"
    assert stem("ponies") == "poni"
    assert stem("relational") == "relat"
    assert stem("generalizations") == "gener"
    assert stem("hopping") == "hop"


def test_short_words_untouched():
    assert stem("is") == "is"
    assert stem("as") == "as"


@pytest.mark.parametrize("word", WORDS)
def test_matches_reference_implementation(word):
    reference = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)
    assert stem(word) == reference.stem(word)
