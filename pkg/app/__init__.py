from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("wind-adjust")
except PackageNotFoundError:  # exécution depuis les sources
    __version__ = "0.1.0"
