from .solvers import *
