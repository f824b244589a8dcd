"""Sandbox over HTTP (stdlib server) and the matching client session.

Wire format, all JSON:

    GET  /health                       -> {format_version, pages, records, episodes}
    POST /episodes {question_id}       -> {format_version, episode_id, question, budget}
    POST /episodes/{id}/search {query, k}
    POST /episodes/{id}/fetch {target}  -> served content, byte-for-byte as traced
    POST /episodes/{id}/submit {kind, answer_text, claims}
    POST /episodes/{id}/retrieve {eid, content_digest}
    POST /episodes/{id}/mark {label, info}
    POST /episodes/{id}/abandon
    GET  /episodes/{id}/trace          -> trace JSONL (409 while open)

Tool responses carry ``X-Seq`` and ``X-Content-Digest`` headers. Errors
are ``{format_version, error: {code, message}}``.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

import httpx

from .errors import SandboxError
from .sandbox import (
    FORMAT_VERSION,
    FinalResponse,
    Sandbox,
    ToolResult,
    Trace,
    abandon,
    canonical_json,
    digest,
    export_trace,
    fetch,
    mark,
    record_retrieve,
    search,
    submit,
)

log = logging.getLogger(__name__)
access_log = logging.getLogger(__name__ + ".access")

STATUS = {
    "not_found": 404,
    "unknown_episode": 404,
    "unknown_question": 404,
    "budget_exhausted": 409,
    "closed": 409,
    "open": 409,
    "unverified": 409,
    "bad_request": 400,
}

_ROUTE = re.compile(r"^/episodes/([^/]+)/(search|fetch|submit|retrieve|mark|abandon|trace)$")


class _Handler(BaseHTTPRequestHandler):
    server: "SandboxServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # replaced by the structured access log
        pass

    def _send(self, status: int, body: str, ctype="application/json", headers: dict | None = None):
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", f"{ctype}; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(data)
        access_log.info(canonical_json({"method": self.command, "path": self.path, "status": status}))

    def _json(self, status: int, obj: dict, headers: dict | None = None):
        self._send(status, canonical_json({"format_version": FORMAT_VERSION, **obj}), headers=headers)

    def _error(self, code: str, message: str):
        self._json(STATUS.get(code, 400), {"error": {"code": code, "message": message}})

    def _body(self) -> dict:
        n = int(self.headers.get("Content-Length") or 0)
        if not n:
            return {}
        data = json.loads(self.rfile.read(n))
        if not isinstance(data, dict):
            raise ValueError("request body must be a JSON object")
        return data

    def _tool(self, result: ToolResult):
        self._send(200, result.content, headers={"X-Seq": str(result.seq), "X-Content-Digest": result.digest})

    def _guarded(self, handler):
        try:
            handler()
        except Exception as exc:  # keep the connection alive and report instead of dropping it
            log.exception("request %s %s failed", self.command, self.path)
            self._json(500, {"error": {"code": "internal", "message": str(exc)}})

    def do_GET(self):
        self._guarded(self._get)

    def do_POST(self):
        self._guarded(self._post)

    def _get(self):
        sb = self.server.sandbox
        if self.path == "/health":
            return self._json(200, {
                "status": "ok", "pages": len(sb.store.pages), "records": len(sb.records), "episodes": len(sb.episodes),
            })
        m = _ROUTE.match(self.path)
        if not m or m.group(2) != "trace":
            return self._error("not_found", f"no route {self.path}")
        try:
            trace = export_trace(sb.get(m.group(1)))
        except SandboxError as exc:
            return self._error(exc.code, str(exc))
        self._send(200, trace.to_jsonl(), ctype="application/x-ndjson")

    def _post(self):
        sb = self.server.sandbox
        try:
            body = self._body()
        except ValueError as exc:
            return self._error("bad_request", f"invalid JSON body: {exc}")
        try:
            if self.path == "/episodes":
                qid = body.get("question_id")
                if not isinstance(qid, str):
                    return self._error("bad_request", "question_id required")
                ep = sb.start(qid)
                return self._json(201, {"episode_id": ep.episode_id, "question": ep.record.question, "budget": ep.budget})
            m = _ROUTE.match(self.path)
            if not m or m.group(2) == "trace":
                return self._error("not_found", f"no route {self.path}")
            ep = sb.get(m.group(1))
            op = m.group(2)
            if op == "search":
                query, k = body.get("query"), body.get("k", 5)
                if not isinstance(query, str) or not isinstance(k, int):
                    return self._error("bad_request", "search needs string 'query' and integer 'k'")
                return self._tool(search(ep, query, k))
            if op == "fetch":
                target = body.get("target")
                if not isinstance(target, str):
                    return self._error("bad_request", "fetch needs string 'target'")
                return self._tool(fetch(ep, target))
            if op == "submit":
                try:
                    response = FinalResponse.from_dict(body)
                except (KeyError, TypeError, ValueError) as exc:
                    return self._error("bad_request", f"invalid final response: {exc}")
                submit(ep, response)
                return self._json(200, {"status": ep.status})
            if op == "retrieve":
                eid, dig = body.get("eid"), body.get("content_digest")
                if not isinstance(eid, str) or not isinstance(dig, str):
                    return self._error("bad_request", "retrieve needs 'eid' and 'content_digest'")
                record_retrieve(ep, eid, content_digest=dig)
                return self._json(200, {"ok": True})
            if op == "mark":
                label = body.get("label")
                if not isinstance(label, str):
                    return self._error("bad_request", "mark needs 'label'")
                mark(ep, label, **dict(body.get("info") or {}))
                return self._json(200, {"ok": True})
            abandon(ep)
            return self._json(200, {"status": ep.status})
        except SandboxError as exc:
            return self._error(exc.code, str(exc))


class SandboxServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], sandbox: Sandbox):
        self.sandbox = sandbox
        super().__init__(address, _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def close(self) -> list[Trace]:
        """Stop serving and flush every still-open episode as abandoned."""
        self.shutdown()
        self.server_close()
        flushed = self.sandbox.shutdown()
        if flushed:
            log.info("flushed %d open episode(s) as abandoned", len(flushed))
        return flushed


def start_server(sandbox: Sandbox, host: str = "127.0.0.1", port: int = 0) -> SandboxServer:
    """Bind and serve on a background thread. Raises ``OSError`` on bind failure."""
    server = SandboxServer((host, port), sandbox)
    threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, name="sandbox-http", daemon=True).start()
    return server


class RemoteSession:
    """Client for one episode on a running sandbox server; mirrors ``LocalSession``."""

    def __init__(self, base_url: str, question_id: str, client: httpx.Client | None = None, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.client = client or httpx.Client(timeout=timeout)
        data = self._call("POST", "/episodes", {"question_id": question_id}).json()
        self.episode_id = data["episode_id"]
        self.question = data["question"]
        self.budget = data["budget"]
        self._seen_tool_calls = 0

    def _call(self, method: str, path: str, body: dict | None = None) -> httpx.Response:
        resp = self.client.request(method, self.base_url + path, json=body)
        if resp.status_code >= 400:
            try:
                err = resp.json()["error"]
                code, message = err["code"], err["message"]
            except (ValueError, KeyError, TypeError):
                code, message = "http_error", f"HTTP {resp.status_code}"
            raise SandboxError(code, message)
        return resp

    def _tool(self, op: str, body: dict) -> ToolResult:
        try:
            resp = self._call("POST", f"/episodes/{self.episode_id}/{op}", body)
        except SandboxError as exc:
            if exc.code != "budget_exhausted":
                self._seen_tool_calls += 1
            raise
        self._seen_tool_calls += 1
        content = resp.text
        if digest(content) != resp.headers.get("X-Content-Digest"):
            raise SandboxError("corrupt", "served content does not match its digest")
        return ToolResult(content, digest(content), int(resp.headers["X-Seq"]))

    def search(self, query: str, k: int = 5) -> ToolResult:
        return self._tool("search", {"query": query, "k": k})

    def fetch(self, target: str) -> ToolResult:
        return self._tool("fetch", {"target": target})

    def submit(self, response: FinalResponse) -> None:
        self._call("POST", f"/episodes/{self.episode_id}/submit", response.to_dict())

    def record_retrieve(self, eid: str, content: str) -> None:
        self._call("POST", f"/episodes/{self.episode_id}/retrieve", {"eid": eid, "content_digest": digest(content)})

    def mark(self, label: str, **info: Any) -> None:
        self._call("POST", f"/episodes/{self.episode_id}/mark", {"label": label, "info": info})

    def budget_remaining(self) -> int:
        return max(0, self.budget - self._seen_tool_calls)

    def trace(self) -> Trace:
        try:
            resp = self._call("GET", f"/episodes/{self.episode_id}/trace")
        except SandboxError as exc:
            if exc.code != "open":
                raise
            self._call("POST", f"/episodes/{self.episode_id}/abandon")
            resp = self._call("GET", f"/episodes/{self.episode_id}/trace")
        return Trace.from_jsonl(resp.text)


def serve_forever(sandbox: Sandbox, host: str, port: int, ready=None) -> None:
    """Run until interrupted, then flush open episodes."""
    server = start_server(sandbox, host, port)
    log.info("sandbox listening on %s", server.url)
    if ready is not None:
        ready(server)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
