"""arclab: a desk-scale lab for adversarial relativistic-contrastive post-training
of rectified-flow generative models on synthetic conditional distributions.

Subpackages:
    flowcore  -- interpolant math, log-SNR transforms, timestep laws, Euler sampler
    toydata   -- synthetic conditional mixtures with known ground truth
    nets      -- small conditional MLPs (velocity / generator / discriminator) with exact gradients
    arcloss   -- training objectives (flow regression, relativistic, contrastive, least-squares)
    pingpong  -- few-step denoise/re-noise inference and style transfer
    evalkit   -- diversity / fidelity / adherence / timing metrics
    harness   -- experiment driver with reproducible seeds and run manifests
    cli       -- command-line front end and plot emission
"""

__version__ = "0.1.0"
