"""
Framework SegCLR : segmentation 2D supervisée et contrastive de volumes 3D.
"""

__version__ = "0.1.0"
