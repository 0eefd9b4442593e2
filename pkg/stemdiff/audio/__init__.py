"""
Audio Module - Mel Front End and Latent Codec

Maps stems to and from the latent space:
- Log-mel transform with a fixed filterbank
- Per-stem mel VAE with shared weights
- Griffin-Lim phase reconstruction
"""
