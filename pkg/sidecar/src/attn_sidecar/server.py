"""Request loop: newline-delimited JSON on stdio, one response per request.

Ops: ``hello`` (model name, layer count, head count), ``attention``,
``mlm_topk``, ``upos``.  Request-level failures (sequence too long, unknown
op, malformed JSON) become ``{"id": ..., "error": ...}`` responses; the
process keeps serving.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

from .model import AttentionModel, ModelError
from .tagger import TaggerError, make_tagger


@dataclass(frozen=True)
class SidecarConfig:
    model_name: str = "bert-base-uncased"
    device: str = "cpu"
    tagger_package: str = "stanza"
    max_sequence_subwords: int = 512

    def __post_init__(self):
        if self.max_sequence_subwords < 8:
            raise ValueError("max_sequence_subwords must be >= 8")


def _encode(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False)


class Server:
    def __init__(self, config: SidecarConfig):
        self.config = config
        self.model = AttentionModel(config.model_name, device=config.device,
                                    max_subwords=config.max_sequence_subwords)
        self._tagger = None  # loaded on first upos request

    def tagger(self):
        if self._tagger is None:
            self._tagger = make_tagger(self.config.tagger_package)
        return self._tagger

    def handle(self, msg: dict) -> dict:
        op = msg.get("op")
        if op == "hello":
            response = {"model": self.config.model_name,
                        "layers": self.model.n_layers,
                        "heads": self.model.n_heads}
        elif op == "attention":
            words = msg.get("words") or []
            layers = msg.get("layers") or []
            if not layers:
                raise ModelError("attention request needs a layer list")
            response = self.model.attention(words, layers)
        elif op == "mlm_topk":
            response = self.model.mlm_topk(msg.get("words") or [],
                                           int(msg["position"]), int(msg["k"]))
        elif op == "upos":
            words = msg.get("words") or []
            if not words:
                raise ModelError("upos request needs words")
            response = {"upos": self.tagger().tag(words)}
        else:
            raise ModelError(f"unknown op {op!r}")
        if "id" in msg:
            response["id"] = msg["id"]
        return response

    def handle_line(self, line: str) -> str:
        msg_id = None
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ModelError("request must be a JSON object")
            msg_id = msg.get("id")
            return _encode(self.handle(msg))
        except (ModelError, TaggerError, KeyError, TypeError, ValueError) as exc:
            return _encode({"id": msg_id, "error": str(exc)})

    def serve(self, lines=None, out=None) -> None:
        lines = lines if lines is not None else sys.stdin
        out = out if out is not None else sys.stdout
        for line in lines:
            line = line.strip()
            if not line:
                continue
            out.write(self.handle_line(line) + "\n")
            out.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model-name", default="bert-base-uncased")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--tagger", default="stanza",
                        help="UPOS backend: stanza | lexicon")
    parser.add_argument("--max-subwords", type=int, default=512)
    args = parser.parse_args(argv)
    config = SidecarConfig(model_name=args.model_name, device=args.device,
                           tagger_package=args.tagger,
                           max_sequence_subwords=args.max_subwords)
    Server(config).serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
