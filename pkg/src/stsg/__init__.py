"""Dynamic scene graph generation with sparse temporal linking.

Per-frame scene graphs are proposed, contextualized with a GCN, linked
across adjacent frames by a learned relevance kernel (top-K sparse, dense,
or tracking-based), and refined into relation predictions. Ships with a
synthetic benchmark, training, evaluation metrics, efficiency accounting,
and a feature-bank event classifier.
"""

__version__ = "0.1.0"
