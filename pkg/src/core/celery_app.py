from celery import Celery
from src.core.config import settings
from src.core.logger import get_logger

logger = get_logger(__name__)

celery_app = Celery(
    "precision_tasks",
    broker=settings.CELERY_BROKER_URL,
    backend=settings.CELERY_RESULT_BACKEND,
    include=["src.bench.tasks"],
)

celery_app.conf.update(
    task_track_started=True,
    broker_connection_retry_on_startup=True,
    task_always_eager=settings.CELERY_TASK_ALWAYS_EAGER,
    task_eager_propagates=True,
    task_serializer="json",
    result_serializer="json",
    accept_content=["json"],
)

if settings.CELERY_TASK_ALWAYS_EAGER:
    logger.info("Celery app configured in eager mode; trials run in-process")
else:
    logger.info(f"Celery app configured with broker: {settings.CELERY_BROKER_URL}")
