"""modprobe: probing trained networks for modular structure.

Neurons of a trained MLP or small CNN are partitioned by spectral
clustering of weight or activation-correlation graphs. Each resulting
subcluster is then compared against same-sized random neuron sets by
lesioning and feature visualization, and the comparisons are aggregated
into p values and effect measures.

Core Concept: `modprobe all --config run.cfg` trains the replicate
networks, partitions them, measures every subcluster and writes a
consolidated report under the output directory.
"""

from .app import ModularityProbe
from .config import ModprobeSettings, load_settings

__version__ = "0.1.0"
__all__ = ["ModularityProbe", "ModprobeSettings", "load_settings"]
