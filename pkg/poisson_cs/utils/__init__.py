from .data_helpers import *
from .dataset_helpers import *
from .measurement_helpers import *
from .result_helpers import *
from .sensing_helpers import *
from .transform_helpers import *
