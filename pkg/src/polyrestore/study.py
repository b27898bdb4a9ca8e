"""Blind preference study: bundle export and HTTP serving.

A study bundle presents raters with one query per original image: the
original plus one restored version per model, in anonymized slots. Which
slot belongs to which method is decided per query with a seeded shuffle and
written only to a sealed key file that is never served. Votes append to a
CSV log; selection ratios (votes per method / total votes) come from joining
the log against the key, server side, at results time.

Bundle layout:
    study.json   {"study_id", "seed", "queries": [{"query_id", "label",
                  "slots": {"s0": png, ...}}]}
    key.json     {"query_id": {"s0": method, ...}}   (sealed, never served)
    votes.csv    rater,query_id,slot,token           (append only)

HTTP API (JSON):
    GET  /study/{id}/next?rater=R   -> {"query_id", "label",
                                        "images": [{"slot", "png_base64"}]}
                                       query_id null when the rater is done
    POST /study/{id}/vote           <- {"query_id", "rater", "slot", "token"}
    GET  /study/{id}/results        -> {"total", "ratios": {method: ratio},
                                        "counts": {method: n}}
"""

from __future__ import annotations

import base64
import csv
import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .data import denormalize, load_image, normalize, save_image
from .metrics import restore_iterative

ORIGINAL = "original"


def _stable_shuffle(items, *seed_parts):
    digest = hashlib.sha256("|".join(str(p) for p in seed_parts).encode()).digest()
    rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def export_study(study_id, models, sample_paths, out_dir, seed=0, labels=None,
                 include_original=True):
    """Render one query per sample and write the bundle.

    models: list of (method_name, generator, iterate_k) triples. Method names
    end up only in key.json. ``labels`` optionally maps each sample to the
    disease label string shown to raters.
    """
    out = Path(out_dir)
    if (out / "study.json").exists():
        raise FileExistsError(f"study bundle already exists at {out}")
    (out / "images").mkdir(parents=True, exist_ok=True)
    queries = []
    key = {}
    for qi, sample_path in enumerate(sample_paths):
        query_id = f"q{qi:04d}"
        original = normalize(load_image(sample_path))
        entries = []
        if include_original:
            entries.append((ORIGINAL, original))
        for method, gen, k in models:
            entries.append((method, restore_iterative(gen, original, k)))
        entries = _stable_shuffle(entries, study_id, seed, query_id)
        slots = {}
        key[query_id] = {}
        for si, (method, image) in enumerate(entries):
            slot = f"s{si}"
            png = f"images/{query_id}_{slot}.png"
            save_image(out / png, denormalize(image))
            slots[slot] = png
            key[query_id][slot] = method
        queries.append({"query_id": query_id,
                        "label": labels[qi] if labels else "",
                        "slots": slots})
    (out / "study.json").write_text(json.dumps(
        {"study_id": study_id, "seed": seed, "queries": queries}, indent=1))
    (out / "key.json").write_text(json.dumps(key, indent=1))
    return out


class StudyStore:
    """Bundle access plus the serialized vote log."""

    def __init__(self, bundle_dir):
        self.root = Path(bundle_dir)
        spec = json.loads((self.root / "study.json").read_text())
        self.study_id = spec["study_id"]
        self.seed = spec["seed"]
        self.queries = {q["query_id"]: q for q in spec["queries"]}
        self.order = [q["query_id"] for q in spec["queries"]]
        self._lock = threading.Lock()
        self._votes = {}  # (rater, query_id) -> (slot, token)
        self.votes_path = self.root / "votes.csv"
        if self.votes_path.exists():
            with open(self.votes_path, newline="") as fh:
                for row in csv.DictReader(fh):
                    self._votes[(row["rater"], row["query_id"])] = (row["slot"], row["token"])
        else:
            with open(self.votes_path, "w", newline="") as fh:
                csv.writer(fh).writerow(["rater", "query_id", "slot", "token"])

    def next_query(self, rater):
        """First query this rater has not voted on; stable across refreshes."""
        with self._lock:
            for query_id in self.order:
                if (rater, query_id) not in self._votes:
                    return self._payload(query_id, rater)
        return {"query_id": None, "label": "", "images": []}

    def _payload(self, query_id, rater):
        q = self.queries[query_id]
        slots = _stable_shuffle(sorted(q["slots"]), self.study_id, self.seed, rater, query_id)
        images = []
        for slot in slots:
            png = (self.root / q["slots"][slot]).read_bytes()
            images.append({"slot": slot, "png_base64": base64.b64encode(png).decode()})
        return {"query_id": query_id, "label": q["label"], "images": images}

    def vote(self, rater, query_id, slot, token):
        """Record at most one vote per (rater, query); replaying the same
        idempotency token acks as accepted without double counting."""
        if query_id not in self.queries:
            return {"accepted": False, "reason": f"unknown query {query_id!r}"}
        if slot not in self.queries[query_id]["slots"]:
            return {"accepted": False, "reason": f"unknown slot {slot!r}"}
        if not rater:
            return {"accepted": False, "reason": "missing rater"}
        with self._lock:
            prev = self._votes.get((rater, query_id))
            if prev is not None:
                if prev[1] == token and token:
                    return {"accepted": True, "duplicate": True}
                return {"accepted": False, "reason": "already voted on this query"}
            self._votes[(rater, query_id)] = (slot, token)
            with open(self.votes_path, "a", newline="") as fh:
                csv.writer(fh).writerow([rater, query_id, slot, token])
        return {"accepted": True, "duplicate": False}

    def results(self):
        """Per-method selection ratios, resolved against the sealed key."""
        key = json.loads((self.root / "key.json").read_text())
        counts = {}
        with self._lock:
            votes = list(self._votes.items())
        for (rater, query_id), (slot, _) in votes:
            method = key[query_id][slot]
            counts[method] = counts.get(method, 0) + 1
        total = sum(counts.values())
        ratios = {m: c / total for m, c in counts.items()} if total else {}
        return {"total": total, "counts": counts, "ratios": ratios}


_CONTENT_TYPES = {".html": "text/html", ".js": "text/javascript",
                  ".css": "text/css", ".png": "image/png", ".map": "application/json"}


def make_handler(store: StudyStore, assets_dir=None):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _json(self, payload, status=200):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            if len(parts) == 3 and parts[0] == "study":
                study_id, action = parts[1], parts[2]
                if study_id != store.study_id:
                    return self._json({"error": f"unknown study {study_id!r}"}, 404)
                if action == "next":
                    rater = parse_qs(url.query).get("rater", [""])[0]
                    if not rater:
                        return self._json({"error": "missing rater"}, 400)
                    return self._json(store.next_query(rater))
                if action == "results":
                    return self._json(store.results())
                return self._json({"error": f"unknown action {action!r}"}, 404)
            return self._static(url.path)

        def _static(self, path):
            if assets_dir is None:
                return self._json({"error": "not found"}, 404)
            rel = "index.html" if path in ("", "/") else path.lstrip("/")
            target = (Path(assets_dir) / rel).resolve()
            if not str(target).startswith(str(Path(assets_dir).resolve())) or not target.is_file():
                return self._json({"error": "not found"}, 404)
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            if len(parts) == 3 and parts[0] == "study" and parts[2] == "vote":
                if parts[1] != store.study_id:
                    return self._json({"error": f"unknown study {parts[1]!r}"}, 404)
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    return self._json({"error": "invalid JSON"}, 400)
                result = store.vote(str(body.get("rater", "")), str(body.get("query_id", "")),
                                    str(body.get("slot", "")), str(body.get("token", "")))
                return self._json(result, 200 if result["accepted"] else 400)
            return self._json({"error": "not found"}, 404)

    return Handler


def serve_study(bundle_dir, port, assets_dir=None):
    """Blocking server; returns the ThreadingHTTPServer for external control."""
    store = StudyStore(bundle_dir)
    server = ThreadingHTTPServer(("0.0.0.0", port), make_handler(store, assets_dir))
    return server
