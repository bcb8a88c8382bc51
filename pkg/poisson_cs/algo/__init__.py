from .functions import *
from .core import *
from .stats import *
