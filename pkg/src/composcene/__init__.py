"""composcene: compositional denoising-diffusion models over per-concept
conditionings, inverted to read scene descriptions out of single images.

Train a shared conditional denoiser whose composed prediction is the sum of
per-concept terms, then infer object coordinates, global attributes, concept
counts, or concept subsets by minimizing the Monte Carlo denoising error of
candidate conditionings.  Every inference algorithm can be validated against
a closed-form Gaussian oracle with a known optimum.
"""

from ._backend import backend_name, compiled_available

__version__ = "0.1.0"

__all__ = ["backend_name", "compiled_available", "__version__"]
