__version__ = '0.1'

from .errors import UnwarpError
from .volume import DisplacementMap, Mask3D, Volume3D
from .unwarp import AcquisitionParams, FieldMap, apply_vdm, correct_b0, fieldmap_to_vdm, forward_distort
from .network import UNet, UNetConfig
