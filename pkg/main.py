"""
Main FastAPI application for the dereverberation service
"""
import logging

from dotenv import load_dotenv
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from models import HealthResponse
from routers.dereverb import rir_router
from routers.dereverb import router as dereverb_router
from routers.metrics import router as metrics_router
from services.checkpoint_storage import CheckpointStorage
from services.config import configure_logging, get_settings

# Load environment variables
load_dotenv()

settings = get_settings()
configure_logging(settings.log_level)
logger = logging.getLogger(__name__)

app = FastAPI(
    title="Percussion Dereverberation API",
    description="Cold-diffusion dereverberation, RIR synthesis and percussion-oriented evaluation metrics",
    version="1.0.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(metrics_router)
app.include_router(dereverb_router)
app.include_router(rir_router)


@app.get("/")
async def root():
    return {"message": "Percussion Dereverberation API - POST /dereverb, /metrics/evaluate or /rir/synth"}


@app.get("/health", response_model=HealthResponse)
async def health_check():
    """Service status and the number of stored checkpoints"""
    current = get_settings()
    storage = CheckpointStorage(current.checkpoint_dir)
    return HealthResponse(
        status="healthy",
        service="percussion-dereverb",
        checkpoint_dir=current.checkpoint_dir,
        checkpoints=len(storage.list_checkpoints()),
    )


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
