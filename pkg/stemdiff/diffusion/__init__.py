"""
Diffusion Module - Latent Diffusion Model

Noise schedules, the 3D UNet denoiser, DDPM/DDIM sampling with
classifier-free guidance, and arrangement by masked latent imputation.
"""
