"""Class-conditional image-to-image translation initialised from a pretrained conditional GAN."""

__version__ = "0.1.0"
