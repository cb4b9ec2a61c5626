from .benchmarks import *
from .problem import *
