"""Minimal blocking JSON-over-HTTP client shared by remote experts and providers."""
from __future__ import annotations

import json
import urllib.error
import urllib.request


class TransportError(Exception):
    """Raised for connection failures and non-2xx responses."""


def post_json(url: str, payload: dict, timeout: float = 10.0):
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(
        url, data=body, method="POST", headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        raise TransportError(f"{url} returned HTTP {exc.code}") from exc
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(f"{url} unreachable: {exc}") from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{url} returned non-JSON body") from exc
