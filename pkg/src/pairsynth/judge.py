"""HTTP client for judge-based quality metrics, plus a deterministic stub.

Transport contract: POST a JSON body {"prompt": ...} to the configured
endpoint and read {"text": ...} back.  The verdict is parsed from the final
nonempty line of the response (Yes/No templates) or from the factuality tag.
The bundled stub server answers from markers embedded in the prompt so test
runs stay hermetic and reproducible.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from threading import Thread
from typing import Sequence

PAIR_RELEVANCE = "pair_relevance"
PAIR_NOVELTY = "pair_novelty"
NON_REPETITION = "non_repetition"
FACTUALITY = "factuality"
TEMPLATES = (PAIR_RELEVANCE, PAIR_NOVELTY, NON_REPETITION, FACTUALITY)

YES = "Yes"
NO = "No"
WELL_DEFINED_TRUE = "WellDefinedTrue"
WELL_DEFINED_FALSE = "WellDefinedFalse"
NOT_WELL_DEFINED = "NotWellDefined"

_FACTUALITY_TAGS = {
    "<well defined>True</well defined>": WELL_DEFINED_TRUE,
    "<well defined>False</well defined>": WELL_DEFINED_FALSE,
    "<not well defined></not well defined>": NOT_WELL_DEFINED,
}


class JudgeParseError(ValueError):
    def __init__(self, raw_text: str, detail: str = ""):
        self.raw_text = raw_text
        super().__init__(f"unparseable judge response{': ' + detail if detail else ''}")


class JudgeTransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class JudgeVerdict:
    item_ref: str
    verdict: str
    raw_text: str


def load_template(name: str) -> str:
    if name not in TEMPLATES:
        raise ValueError(f"unknown judge template {name!r}")
    return resources.files("pairsynth.prompts").joinpath(f"{name}.txt").read_text("utf-8")


def render_template(name: str, payload: dict) -> str:
    try:
        return load_template(name).format(**payload)
    except KeyError as exc:
        raise ValueError(f"template {name} needs payload field {exc}") from exc


def parse_verdict(template: str, text: str) -> str:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise JudgeParseError(text, "empty response")
    final = lines[-1]
    if template == FACTUALITY:
        if final in _FACTUALITY_TAGS:
            return _FACTUALITY_TAGS[final]
        raise JudgeParseError(text, f"unrecognized factuality tag {final!r}")
    if final in (YES, NO):
        return final
    raise JudgeParseError(text, f"final line {final!r} is not Yes or No")


class JudgeClient:
    """Posts rendered prompts to the judge endpoint with retry and backoff."""

    def __init__(
        self,
        endpoint: str,
        max_attempts: int = 3,
        backoff: float = 0.25,
        timeout: float = 30.0,
        max_workers: int = 4,
    ):
        self.endpoint = endpoint
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self.max_workers = max_workers

    def _post(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    payload = json.loads(response.read().decode("utf-8"))
                    return payload["text"]
            except (urllib.error.URLError, OSError, KeyError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff * (2**attempt))
        raise JudgeTransportError(
            f"judge endpoint failed after {self.max_attempts} attempts: {last_error}"
        )

    def evaluate(self, template: str, payload: dict, item_ref: str = "") -> JudgeVerdict:
        text = self._post(render_template(template, payload))
        return JudgeVerdict(item_ref=item_ref, verdict=parse_verdict(template, text), raw_text=text)

    def evaluate_many(
        self, template: str, payloads: Sequence[tuple[str, dict]]
    ) -> list[JudgeVerdict]:
        """Bounded-concurrency evaluation; output order matches input order."""
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            futures = [
                pool.submit(self.evaluate, template, payload, item_ref)
                for item_ref, payload in payloads
            ]
            return [f.result() for f in futures]


# markers the stub recognizes anywhere in the prompt body
STUB_MARKERS = {
    "[[JUDGE:YES]]": "Planted marker found.\nYes",
    "[[JUDGE:NO]]": "Planted marker found.\nNo",
    "[[JUDGE:WD_TRUE]]": "<well defined>True</well defined>",
    "[[JUDGE:WD_FALSE]]": "<well defined>False</well defined>",
    "[[JUDGE:NOT_WD]]": "<not well defined></not well defined>",
    "[[JUDGE:GARBLE]]": "I cannot decide.\nMaybe",
}


def stub_response(prompt: str) -> str:
    for marker, reply in STUB_MARKERS.items():
        if marker in prompt:
            return reply
    if "well-defined factuality" in prompt:
        return "<not well defined></not well defined>"
    return "No marker present.\nNo"


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length).decode("utf-8"))
        body = json.dumps({"text": stub_response(payload["prompt"])}).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):  # silence per-request chatter
        pass


class StubJudgeServer:
    """Hermetic in-process judge endpoint for tests and offline runs."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = ThreadingHTTPServer((host, port), _StubHandler)
        self._thread = Thread(target=self._server.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/judge"

    def start(self) -> "StubJudgeServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubJudgeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main() -> None:
    """Run the stub judge as a standalone process (for CLI-driven eval runs)."""
    import argparse

    parser = argparse.ArgumentParser(description="deterministic stub judge endpoint")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8799)
    args = parser.parse_args()
    server = ThreadingHTTPServer((args.host, args.port), _StubHandler)
    print(f"stub judge listening on http://{args.host}:{args.port}/judge", flush=True)
    server.serve_forever()


if __name__ == "__main__":
    main()
