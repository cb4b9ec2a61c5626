from .tracker import *
