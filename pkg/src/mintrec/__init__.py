"""Seniority-aware helper recommendation for online health communities.

Patients are encoded by a disentangled sequential VAE (a time-invariant
latent ``x`` and a time-varying trajectory ``z_1..z_T``), the invariant part
is propagated over the seeker/helper support graph, and helpers are ranked
by dot product. A monotonic regularizer and a pairwise constraint tie the
time-varying latents to patient seniority.
"""

__version__ = "0.1.0"
