"""Line-resistance error modeling and sensitivity-driven column remapping
for memristive crossbar neural-network accelerators."""

__version__ = "0.1.0"
