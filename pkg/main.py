# main.py — /health, /detect/{command}, /invariance
import logging
import os
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from hygienefeat import invariance, pipeline, synthetic
from hygienefeat.config import LOG_LEVEL, apply_overrides, load_settings
from hygienefeat.errors import HygieneFeatError
from hygienefeat.imgcore import loads_pnm

logging.basicConfig(level=LOG_LEVEL, format="%(message)s")
logger = logging.getLogger("hygienefeat.service")

CONFIG_FILE = os.getenv("HYGIENEFEAT_CONFIG_FILE")
ALLOWED_ORIGINS = [o for o in os.getenv("HYGIENEFEAT_CORS_ORIGINS", "http://localhost:3000").split(",") if o]

app = FastAPI(title="hygienefeat")

app.add_middleware(
    CORSMiddleware,
    allow_origins=ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class InvarianceRequest(BaseModel):
    seed: int = 0
    texture_size: Optional[int] = None


@app.exception_handler(HygieneFeatError)
async def hygienefeat_error(request: Request, exc: HygieneFeatError):
    logger.info("❌ %s: %s", type(exc).__name__, exc)
    return JSONResponse(status_code=422, content={"error": str(exc), "kind": type(exc).__name__})


def _settings(query: dict):
    """Settings from the environment/config file, with `section.field` query parameters on top."""
    settings = load_settings(CONFIG_FILE)
    overrides = {k: v for k, v in query.items() if "." in k}
    return apply_overrides(settings, overrides) if overrides else settings


@app.get("/health")
def health():
    return {"status": "ok", "commands": list(pipeline.COMMANDS)}


@app.post("/detect/{command}")
async def detect(command: str, request: Request):
    if command not in pipeline.COMMANDS:
        return JSONResponse(status_code=404, content={"error": f"unknown command {command!r}",
                                                      "commands": list(pipeline.COMMANDS)})
    settings = _settings(dict(request.query_params))
    img = loads_pnm(await request.body())
    print(f"🔍 {command} on {img.width}x{img.height} image")
    _, result, sidecar = pipeline.detect(command, img, settings)
    if sidecar is not None:
        result = dict(result, descriptors=sidecar)
    print(f"✅ {command} done")
    return JSONResponse(content=pipeline.round_sig(result))


@app.post("/invariance")
def invariance_report(req: InvarianceRequest):
    settings = load_settings(CONFIG_FILE)
    if req.texture_size is not None:
        settings = apply_overrides(settings, {"protocol.texture_size": req.texture_size})
    print(f"🧪 invariance matrix on synthetic texture seed={req.seed}")
    img = synthetic.canonical_texture(req.seed, settings.protocol.texture_size)
    reports = invariance.invariance_matrix(img, settings)
    matched = invariance.matches_expected(reports)
    print(f"{'✅' if matched else '⚠️'} pattern {'matches' if matched else 'differs'}")
    return {
        "rows": invariance.report_rows(reports),
        "table": invariance.render_table(reports),
        "matches_expected": matched,
    }
