from .sqjsd_stats import *
