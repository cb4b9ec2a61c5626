from .config import *
from .linesearch import *
from .optimizer import *
