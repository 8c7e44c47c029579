"""The HTTP control plane: start transfers, poll their status, and (in test mode) crash the process.

The `bucketmirror.service.server` submodule wires a complete worker together, `bucketmirror.service.app` defines the routes and `bucketmirror.service.client` talks to a running service.
"""

from bucketmirror.service.app import create_app
from bucketmirror.service.client import MirrorClient
from bucketmirror.service.server import MirrorService, build_object_store
