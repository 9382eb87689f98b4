"""Latent-diffusion 6-DoF grasp generation on point clouds.

A conditional VAE over grasp poses, a denoising diffusion prior in its
latent space, DDPM/DDIM samplers, and a geometric evaluation suite, all on
a small numpy autodiff core.
"""

__version__ = "0.1.0"
