"""gwlab: a desk-scale laboratory for the Oracle / Guesser / Questioner guessing game."""

__version__ = "1.0.0"
