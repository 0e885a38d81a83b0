"""Package initializer for tests."""

__all__: list[str] = []
