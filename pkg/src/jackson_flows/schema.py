import json
from functools import lru_cache
from importlib import resources

import jsonschema

from .errors import NetworkError


class SchemaError(NetworkError):
    """A network document does not match the published JSON schema."""


@lru_cache(maxsize=None)
def network_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schemas/network.schema.json").read_text())


def validate_network_document(doc) -> None:
    try:
        jsonschema.validate(doc, network_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {exc.message}") from None
