#!/usr/bin/env python3
"""Local stand-in for a text embedding endpoint.

Serves POST {"texts": [...]} -> {"vectors": [[...], ...]} with a hashed
bag-of-words embedding (unigrams and bigrams, signed buckets, L2 normalized).
Deterministic across runs and platforms, so the embedding corpus it produces
can be committed.

    python3 tools/hashing_embedder.py --port 8765
    tmeta embed --input data/descriptions/datasets.jsonl --endpoint http://127.0.0.1:8765/embed --out ...
"""

import argparse
import hashlib
import json
import math
import re
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

TOKEN = re.compile(r"[a-z0-9]+")


def embed(text, dim):
    tokens = TOKEN.findall(text.lower())
    grams = tokens + [a + " " + b for a, b in zip(tokens, tokens[1:])]
    vec = [0.0] * dim
    for g in grams:
        h = int.from_bytes(hashlib.blake2b(g.encode(), digest_size=8).digest(), "little")
        vec[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    norm = math.sqrt(sum(v * v for v in vec))
    if norm > 0:
        vec = [v / norm for v in vec]
    return vec


def make_handler(dim):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                texts = body["texts"]
                if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
                    raise ValueError("texts must be a list of strings")
            except (ValueError, KeyError, TypeError) as e:
                self.send_error(400, str(e))
                return
            payload = json.dumps({"vectors": [embed(t, dim) for t in texts]}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, fmt, *args):
            pass

    return Handler


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8765)
    ap.add_argument("--dim", type=int, default=768)
    args = ap.parse_args()
    ThreadingHTTPServer((args.host, args.port), make_handler(args.dim)).serve_forever()


if __name__ == "__main__":
    main()
