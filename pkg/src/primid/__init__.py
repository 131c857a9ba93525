"""Primate face identification toolkit.

Pipeline: landmark-based alignment -> compact grouped-convolution embedding
network -> gallery/template matching -> biometric evaluation (verification,
closed-set and open-set identification). Exposed through a CLI (`primid`)
and an HTTP service (`primid.service`).
"""

__version__ = "0.1.0"
