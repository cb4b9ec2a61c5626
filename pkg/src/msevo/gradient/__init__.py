from .check import *
from .gradient import *
