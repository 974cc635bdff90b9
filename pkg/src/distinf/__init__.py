"""Black-box distribution inference attacks, leakage metrics and defenses
for small tabular classifiers."""

__version__ = "0.1.0"
