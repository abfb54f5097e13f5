"""
Metrics router: score an uploaded estimate against its reference and reverberant input
"""
import logging

from fastapi import APIRouter, File, HTTPException, UploadFile

from models import MetricConfig, MetricRow, StftConfig
from services.audio_io import decode_waveform
from services.config import get_settings
from services.errors import DereverbError, NumericalInstabilityError
from services.evaluation import evaluate_all

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/metrics", tags=["metrics"])


def http_error(e: DereverbError) -> HTTPException:
    """400 for bad input or configuration, 500 for numerical failures"""
    status = 500 if isinstance(e, NumericalInstabilityError) else 400
    return HTTPException(status_code=status, detail=str(e))


@router.post("/evaluate", response_model=MetricRow)
async def evaluate(
    estimate: UploadFile = File(...),
    reference: UploadFile = File(...),
    reverberant: UploadFile = File(...),
):
    """
    Compute every metric for one uploaded triple

    Args:
        estimate: Dereverberated stereo WAV
        reference: Clean stereo WAV
        reverberant: Reverberant input WAV

    Returns:
        MetricRow with the default MetricConfig
    """
    try:
        rate = get_settings().sample_rate or StftConfig().sample_rate
        est = decode_waveform(await estimate.read(), rate, name="estimate")
        ref = decode_waveform(await reference.read(), rate, name="reference")
        rev = decode_waveform(await reverberant.read(), rate, name="reverberant")
        row = evaluate_all(est, ref, rev, MetricConfig(), example_id=estimate.filename or "")
        logger.info(f"Evaluated upload {row.example_id}: si_sdri={row.si_sdri:.3f}")
        return row
    except HTTPException:
        raise
    except DereverbError as e:
        logger.error(f"Evaluation failed: {e}")
        raise http_error(e)
    except Exception as e:
        logger.error(f"Unexpected error during evaluation: {e}")
        raise HTTPException(status_code=500, detail="Failed to evaluate upload")
