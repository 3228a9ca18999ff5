from rlab.version import VERSION

__all__ = ["VERSION"]
