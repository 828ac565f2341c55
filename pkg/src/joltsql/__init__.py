"""Joint schema-linking and SQL-generation training at desk scale."""

__version__ = "0.1.0"
