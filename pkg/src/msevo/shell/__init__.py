from .command import *
from .main import *
from .mse_shell import *
from .report import *
from .shell import *
