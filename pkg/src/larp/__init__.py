"""Role-playing language-agent runtime with a scripted text-world simulator."""

__version__ = "0.1.0"
