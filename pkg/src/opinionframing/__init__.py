"""Toolkit for studying how news outlets frame attributed opinions.

The package covers the full working pipeline: corpus ingestion and
deduplication, reading dependency parses, rule-based extraction of
(source, predicate, opinion) tuples, probabilistic aggregation of crowd
stance annotations, a linear stance classifier, lexicon-based framing
statistics, and faithfulness-of-attribution reports.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
