"""
Conditioning Module - Shared Audio/Tag Embedding Space

Contrastive encoder for mixtures and style tags, condition dropout for
classifier-free guidance training.
"""
