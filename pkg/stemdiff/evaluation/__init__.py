"""
Evaluation: toy-FAD on frozen contrastive-encoder embeddings, the mixture and
stem protocols, and the report runs built on them.
"""
