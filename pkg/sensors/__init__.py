"""Package initializer for sensors."""

__all__: list[str] = []
