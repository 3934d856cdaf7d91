from .core import Engine
from .util import slugify


def make_engine(name):
    return Engine(slugify(name))
