"""Package initializer for config."""

__all__: list[str] = []
