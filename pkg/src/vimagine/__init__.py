"""vimagine: turn one image into short, diverse videos.

The generator never paints pixels.  It proposes sequences of image
transformations (affine warps or convolution kernels), applies them
cumulatively to the input image, and merges the transformed candidates
into frames with per-pixel volumetric weights.  Training is adversarial
against a spatio-temporal critic under the Wasserstein objective.
Everything runs on a small tape-based autodiff core over numpy arrays.
"""

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
