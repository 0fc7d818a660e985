"""Blind non-uniform motion deblurring with pyramid deformable convolutions.

Library layout:

- ``tensor``     minimal NCHW autodiff core (conv/deconv, elementwise, MSE)
- ``layers``     Module base, Conv2d/Deconv2d/ResBlock, Xavier init
- ``deform``     bilinear sampling + modulated deformable convolution
- ``blocks``     the four-branch pyramid module, attention fusion, stacks
- ``deblur``     the one-stage residual deblurring network
- ``reblur``     the weight-shared reblurring network with dynamic filters
- ``synth``      synthetic non-uniform blur generation and corpora
- ``training``   Adam, lr schedules, the two pretrain phases + fine-tuning
- ``metrics``    PSNR / SSIM / difference-map reports
- ``imageio``    PNG <-> float image <-> tensor plumbing
- ``checkpoint`` binary parameter container
- ``config``     line-oriented key=value run configuration
- ``cli``        the ``aspdc`` command line
"""

__version__ = "0.1.0"

from .tensor import (  # noqa: F401
    ContractError,
    GradTape,
    NumericError,
    ShapeError,
    Tensor,
    backward,
)
