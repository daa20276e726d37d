"""Desk-scale lab for latent-space reward feedback on a rectified-flow video generator.

Subpackages:
    autodiff   -- dense tensors, reverse-mode differentiation, AdamW
    synthdata  -- procedural latent-video world with oracle quality metrics
    generator  -- DiT-lite velocity model, flow-matching training, Euler rollouts
    reward     -- latent reward model scoring noisy latents at arbitrary timesteps
    posttrain  -- reward-feedback post-training loops and baselines
    evaluation -- metric/ablation/profile harness and report writers
    cli        -- command-line front end
"""

__version__ = "0.1.0"
