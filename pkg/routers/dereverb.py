"""
Dereverberation and RIR synthesis routers
"""
import logging
from typing import Optional

from fastapi import APIRouter, File, Form, HTTPException, UploadFile
from fastapi.responses import Response

from models import ReverseMode, RirSynthResponse, RoomSpec, StftConfig
from routers.metrics import http_error
from services.audio_io import decode_waveform, encode_waveform
from services.checkpoint_storage import CheckpointStorage
from services.config import get_settings
from services.errors import AudioDataError, DereverbError
from services.inference import dereverb_waveform
from services.rir import measure_t60, synth_rir
from services.schedule import make_schedule

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/dereverb", tags=["dereverb"])
rir_router = APIRouter(prefix="/rir", tags=["rir"])


@router.post("")
async def dereverb(
    file: UploadFile = File(...),
    checkpoint: str = Form(...),
    mode: ReverseMode = Form(ReverseMode.DELTA),
):
    """
    Dereverberate an uploaded stereo WAV with a stored checkpoint's EMA weights

    Returns:
        32-bit float WAV of the same length as the upload
    """
    try:
        settings = get_settings()
        storage = CheckpointStorage(settings.checkpoint_dir)
        if not storage.path_for(checkpoint).is_file():
            raise HTTPException(status_code=404, detail=f"Checkpoint {checkpoint!r} not found")
        ckpt = storage.load(checkpoint, expected_mode=mode)
        stft_cfg = StftConfig.model_validate(ckpt.metadata.get("stft", {}))
        wet = decode_waveform(await file.read(), stft_cfg.sample_rate, name=file.filename or "upload")
        estimate = dereverb_waveform(wet, ckpt.ema, make_schedule(ckpt.ema.num_steps), mode, stft_cfg)
        logger.info(f"Dereverberated {file.filename} with checkpoint {checkpoint}")
        return Response(content=encode_waveform(estimate), media_type="audio/wav")
    except HTTPException:
        raise
    except DereverbError as e:
        logger.error(f"Dereverberation failed: {e}")
        raise http_error(e)
    except Exception as e:
        logger.error(f"Unexpected error during dereverberation: {e}")
        raise HTTPException(status_code=500, detail="Failed to dereverberate upload")


@rir_router.post("/synth", response_model=RirSynthResponse)
async def synthesize_rir(spec: RoomSpec):
    """
    Synthesize a shoebox RIR and report its length, direct-path delay and measured T60
    """
    try:
        rir = synth_rir(spec)
        try:
            measured: Optional[float] = measure_t60(rir)
        except AudioDataError:
            measured = None
        direct = int(round(spec.distance / spec.speed_of_sound * spec.sample_rate))
        return RirSynthResponse(
            num_taps=int(rir.taps.shape[-1]),
            sample_rate=rir.sample_rate,
            direct_delay_samples=direct,
            measured_t60=measured,
            t60_target=spec.t60_target,
        )
    except DereverbError as e:
        logger.error(f"RIR synthesis failed: {e}")
        raise http_error(e)
