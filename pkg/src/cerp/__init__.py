"""Compositional entity embeddings built from two jointly pruned codebooks.

Entities are hashed into a pair of small meta-embedding tables, composed by
sum pooling, sparsified during training by learnable soft thresholds under a
complementarity regularizer, and retrained under frozen masks. Includes BPR
recommenders, a full-ranking evaluation harness, and a CLI
(prepare / train / eval / stats).
"""

__version__ = "0.1.0"
