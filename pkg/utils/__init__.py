"""Package initializer for utils."""

__all__: list[str] = []
