"""dmt: a desk-scale neural machine translation toolkit for Indic language
pairs. Pipeline stages: corpus loading, Indic normalization/transliteration,
BPE subwording, four from-scratch seq2seq architectures, back-translation
augmentation, and averaged sentence-BLEU scoring."""

__version__ = "0.1.0"
