import re

_REGISTRY = []


def registered(cls):
    _REGISTRY.append(cls)
    return cls


def slugify(text):
    return re.sub(r"[^a-z0-9]+", "-", text)
