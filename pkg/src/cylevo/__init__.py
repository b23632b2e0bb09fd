"""Evolutionary approximation of point clouds by collections of cylinders."""

from cylevo.geometry import Cylinder, CylinderFrame, LocalPoint, NoContact, PatchGrid
from cylevo.io import PointCloud

__version__ = "0.1.0"

__all__ = ["Cylinder", "CylinderFrame", "LocalPoint", "NoContact", "PatchGrid", "PointCloud"]
