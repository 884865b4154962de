"""twinpix: photon-counting twin-photon image simulation and EPR analysis."""

from .correlator import CorrMap, Rect, RoiPair, build_mask, intercorrelation, \
    variance_of_difference, witness
from .detector import DetectorParams, Frame, FrameStack, check_fluence, rasterize
from .optics import OpticalGeometry, ff_pixels_to_momentum, heisenberg_product_1d, \
    nf_pixels_to_meters
from .peakfit import GaussFit, combine_axes, fit_gaussian, integrate_R
from .report import AnalysisOptions, EprReport, bootstrap_errors, build_report
from .source import Plane, PhotonEvents, SourceParams, calibrate_to_violation, \
    expected_violation, sample_frame

__version__ = "0.1.0"
