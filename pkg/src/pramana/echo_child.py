"""Test child for the line protocol: transcribes every segment as its own id.

Run as ``python -m pramana.echo_child``. Embedding requests (those carrying
a ``kind`` field) are answered with bag-of-characters vectors. Extra flags
make it misbehave on purpose for adapter tests.
"""

import argparse
import json
import sys
import time

from .embeddings import DEFAULT_ALPHABET, bag_of_chars


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--confidence", type=float)
    ap.add_argument("--drop", action="append", default=[], help="never answer this id")
    ap.add_argument("--garble", action="append", default=[], help="answer this id with a non-JSON line")
    ap.add_argument("--sleep", type=float, default=0.0, help="delay before every reply")
    ap.add_argument("--bad-hello", action="store_true")
    ap.add_argument("--alphabet", default=DEFAULT_ALPHABET)
    args = ap.parse_args(argv)

    out = sys.stdout
    for line in sys.stdin:
        req = json.loads(line)
        if req.get("op") == "hello":
            out.write(json.dumps({"op": "hello", "version": 0 if args.bad_hello else 1}) + "\n")
            out.flush()
            continue
        rid = req["id"]
        if rid in args.drop:
            continue
        if args.sleep:
            time.sleep(args.sleep)
        if rid in args.garble:
            out.write("{not json\n")
        elif "kind" in req:
            text = req.get("text") if req["kind"] == "text" else rid
            out.write(json.dumps({"id": rid, "vector": bag_of_chars(text, args.alphabet).tolist()}) + "\n")
        else:
            reply = {"id": rid, "text": rid}
            if args.confidence is not None:
                reply["confidence"] = args.confidence
            out.write(json.dumps(reply, ensure_ascii=False) + "\n")
        out.flush()


if __name__ == "__main__":
    main()
