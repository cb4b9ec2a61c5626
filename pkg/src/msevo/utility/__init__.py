from .match import *
from .runs import *
from .synchronized_ostream import *
