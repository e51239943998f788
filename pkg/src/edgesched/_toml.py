import sys

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


def load_toml_text(text: str) -> dict:
    return _toml.loads(text)
