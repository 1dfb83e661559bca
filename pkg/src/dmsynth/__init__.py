"""Desk-scale training-data synthesis with small conditional diffusion models.

Modules: ``nets`` (dense nets with manual backprop), ``diffusion`` (DDPM
schedule, loss, guided sampling), ``matching`` (MMD estimators and the
combined loss), ``conditioning`` (class and visual conditions), ``theory``
(generalization bound), ``taskbench`` (tasks and experiments), ``privacy``
(LiRA membership inference) and ``cli``.
"""

__version__ = "0.1.0"
