"""CPU pitch and periodicity estimation with a small convolutional network."""

__version__ = "0.1.0"
