from .integrate import *
from .mesh import *
