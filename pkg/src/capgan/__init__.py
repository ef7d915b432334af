"""capgan: a controllable caption-to-image GAN built on a from-scratch autodiff engine."""

__version__ = "0.1.0"
