"""Neural belief-propagation decoders and their generalization bounds."""

__version__ = "0.1.0"
