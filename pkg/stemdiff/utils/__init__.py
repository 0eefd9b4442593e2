"""
Utils Module - Utility Functions and Helpers

Common utilities and helper functions:
- Logging setup and per-epoch training metrics
- Timing decorator
- Seeding and device selection
"""
