from .experiment_analyzers import *
