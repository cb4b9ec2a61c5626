from .generation import *
from .projection import *
from .reduction import *
