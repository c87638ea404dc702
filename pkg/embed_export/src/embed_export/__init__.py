"""Offline exporter for the frozen embedding channels the retriever consumes.

Encodes dataset examples with a pretrained sentence encoder (mean-pooled
final-layer outputs, L2-normalized) and writes them in the binary embedding
format the core library reads. Two channels: the full problem+solution text
used by the policy, and problem-statement-only used by the kNN baseline.
"""

from .exporter import CHANNELS, ExportError, ExportSpec, channel_text, export

__all__ = ["CHANNELS", "ExportError", "ExportSpec", "channel_text", "export"]
__version__ = "0.1.0"
