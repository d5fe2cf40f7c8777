"""Reference exporter: torchvision ViT-B/32 to the shared weight container."""

__version__ = "0.1.0"
