from .arc import *
from .basis import *
from .record import *
from .structure import *
