"""Domain-adaptive duplicate question detection.

Stage 1 continues masked-language-model and next-sentence pretraining of a
small transformer encoder on unlabeled target-domain questions. Stage 2
fine-tunes a pair classifier on labeled duplicates and is scored by ROC
area restricted to low false-positive rates.
"""

__version__ = "0.1.0"
