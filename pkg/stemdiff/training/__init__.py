"""
Training Module - Three-Stage Training

VAE, contrastive encoder and latent diffusion model, each resumable from
its checkpoint directory with per-epoch metrics.
"""
