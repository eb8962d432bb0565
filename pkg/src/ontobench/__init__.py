"""Ontology-grounded construction of custom science benchmarks.

Offline phase: select knowledge units from is-a concept DAGs, tag a QA
corpus into them, persist the index.  Online phase: resolve a free-text
requirement into units by multi-model voting, order and cut off candidates
by majority-vote binary search, select a distribution-matched proxy subset
and emit a validated multiple-choice benchmark.  Every model-dependent
step runs behind a pluggable oracle so the whole pipeline replays
deterministically offline.
"""

__version__ = "0.1.0"

from .errors import OntobenchError

__all__ = ["OntobenchError", "__version__"]
