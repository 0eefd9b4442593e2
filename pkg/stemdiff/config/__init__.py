"""
Config Module - Configuration Management

Handles run configuration:
- Section dataclasses for every stage (mel, dataset, vae, conditioning, ldm, sampler, eval)
- Strict JSON loading with dotted-path overrides
- Desk-scale, full-scale and micro defaults
"""
