"""Two-stage unpaired image fusion.

Stage one trains a cycle-consistent pair of generators and patch
discriminators on two unpaired image domains. Stage two adapts the
pre-trained networks with a single image pair, freezing a random fraction of
generator parameters and adding a structural-similarity penalty that pulls
the fused output toward the target image.
"""

__version__ = "0.1.0"
