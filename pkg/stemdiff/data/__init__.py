"""
Data Module - Data Models, Dataset and Storage

Defines core data structures and storage:
- Stem, mel and latent stacks, condition embeddings
- Procedural four-stem dataset with manifest and segment loading
- WAV I/O, JSON documents and checkpoint directories
"""
