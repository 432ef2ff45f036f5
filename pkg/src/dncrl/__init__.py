"""Actor-critic learning in large discrete action spaces via dynamic neighborhood construction."""
__version__ = "0.1.0"
