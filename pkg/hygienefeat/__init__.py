#!/usr/bin/env python3

from .corners import harris_corners, shi_tomasi_corners
from .imgcore import load_pnm, save_pnm
from .segmentation import segment_hand
from .sift import detect_and_describe

__version__ = "0.1.0"
