"""The logits server: GET /meta and POST /logits over canonical JSON.

Model sources:
  file:<path>          a serialized BBOX model (linear or toy MLP)
  torchvision:<name>   a pretrained torchvision classifier (needs torch)

The process refuses to start if the model cannot be loaded.  Handling is
stateless, every request is answered in full or with a 400 error body.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

from fastapi import FastAPI, Request, Response

from .bbox_models import ModelFileError, ServedModel, load_bbox_file
from .wire import ProtocolError, decode_image_request, encode_error, encode_logits, encode_meta


@dataclass(frozen=True)
class ServerConfig:
    model: str
    host: str = "127.0.0.1"
    port: int = 8008
    device: str = "cpu"


def load_served_model(source: str, device: str = "cpu") -> ServedModel:
    if source.startswith("file:"):
        return load_bbox_file(source[len("file:"):])
    if source.startswith("torchvision:"):
        from .torch_models import load_torchvision_model

        return load_torchvision_model(source[len("torchvision:"):], device=device)
    raise ModelFileError(
        f"unknown model source {source!r}; use file:<path> or torchvision:<name>"
    )


def build_app(model: ServedModel) -> FastAPI:
    app = FastAPI(title="logits server", docs_url=None, redoc_url=None)

    def json_bytes(payload: bytes, status: int = 200) -> Response:
        return Response(content=payload, status_code=status,
                        media_type="application/json")

    @app.get("/meta")
    def meta() -> Response:
        return json_bytes(encode_meta(model.shape, model.classes))

    @app.post("/logits")
    async def logits(request: Request) -> Response:
        raw = await request.body()
        try:
            flat = decode_image_request(raw, model.input_length)
        except ProtocolError as exc:
            return json_bytes(encode_error(str(exc)), status=400)
        return json_bytes(encode_logits(model.logits(flat)))

    return app


def parse_args(argv) -> ServerConfig:
    parser = argparse.ArgumentParser(prog="model-server",
                                     description="Serve classifier logits over HTTP.")
    parser.add_argument("--model", required=True,
                        help="file:<path.bbox> or torchvision:<name>")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)
    return ServerConfig(args.model, args.host, args.port, args.device)


def serve(config: ServerConfig) -> None:
    import uvicorn

    model = load_served_model(config.model, config.device)  # fail fast
    print(f"serving {config.model}: shape {list(model.shape)}, "
          f"{model.classes} classes on {config.host}:{config.port}")
    uvicorn.run(build_app(model), host=config.host, port=config.port,
                log_level="warning")


def console_main() -> None:
    try:
        serve(parse_args(sys.argv[1:]))
    except (ModelFileError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    console_main()
