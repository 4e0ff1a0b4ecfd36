"""Built-in model definitions shipped as package data."""
