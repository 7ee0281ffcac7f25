"""HTTP API for the expert review console.

Serves the review queue, per-channel frame matrices for delegated windows,
label submission, pipeline metrics, and a live decision feed. The live
feed is server-sent events: one ``data:`` message per emitted decision,
which browsers consume with the auto-reconnecting EventSource API.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from pathlib import Path
from typing import Callable

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from .decision import (
    DecisionStatus,
    ExpertLabel,
    ReviewConflictError,
    ReviewItem,
    ReviewNotFoundError,
    ReviewStore,
    TrackDecision,
    decision_to_json,
    verdict_to_json,
)
from .ingest import SAMPLE_WINDOW_US, VELOCITY_MPS
from .taxonomy import DefectClass, group_by_id


class Broadcaster:
    """Fans emitted decisions out to any number of live-feed subscribers."""

    def __init__(self, history: int = 256) -> None:
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        self._history: list[dict] = []
        self._history_cap = history

    def publish(self, decision: TrackDecision) -> None:
        payload = decision_to_json(decision)
        with self._lock:
            self._history.append(payload)
            if len(self._history) > self._history_cap:
                self._history = self._history[-self._history_cap :]
            targets = list(self._subscribers)
        for q in targets:
            try:
                q.put_nowait(payload)
            except queue.Full:
                pass  # a stalled client only loses its own feed

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1024)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)


class ServiceHub:
    """Shared state between the running pipeline and the API handlers."""

    def __init__(
        self,
        review_store: ReviewStore,
        metrics_provider: Callable[[], dict] | None = None,
        broadcaster: Broadcaster | None = None,
    ) -> None:
        self.review_store = review_store
        self.metrics_provider = metrics_provider or (lambda: {})
        self.broadcaster = broadcaster or Broadcaster()


class LabelIn(BaseModel):
    decision_id: int
    defect_class: str = Field(alias="class")
    comment: str | None = None

    model_config = {"populate_by_name": True}


def _queue_entry(item: ReviewItem) -> dict:
    d = item.decision
    return {
        "decision_id": item.decision_id,
        "track_start_m": d.track_start_m,
        "track_end_m": d.track_end_m,
        "machine_class": d.defect_class.value,
        "confidence": d.confidence,
        "apparent_depth_mm": d.apparent_depth_mm,
        "contributing_group_ids": list(d.contributing_group_ids),
        "created_at": item.created_at,
        "age_s": max(0.0, time.time() - item.created_at),
        "verdicts": [verdict_to_json(v) for v in d.verdicts],
    }


def _contributing_angles(decision: TrackDecision) -> list[int]:
    angles: set[int] = set()
    for gid in decision.contributing_group_ids:
        angles.update(group_by_id(gid).angles)
    return sorted(angles)


def _class_options(decision: TrackDecision) -> list[str]:
    options = [DefectClass.NO_INDICATION.value]
    for gid in decision.contributing_group_ids:
        for cls in group_by_id(gid).class_set:
            if cls.value not in options:
                options.append(cls.value)
    return options


def create_app(hub: ServiceHub) -> FastAPI:
    app = FastAPI(title="udrt review API", version="1.0")

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        fields = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(
            status_code=400,
            content={"error": "invalid request body", "fields": fields},
        )

    @app.get("/api/queue")
    def get_queue():
        return [_queue_entry(item) for item in hub.review_store.pending()]

    @app.get("/api/frames/{decision_id}")
    def get_frames(decision_id: int):
        try:
            item = hub.review_store.get_item(decision_id)
        except (ReviewNotFoundError, ReviewConflictError):
            return JSONResponse(
                status_code=404,
                content={"error": f"no pending review item {decision_id}"},
            )
        d = item.decision
        channels = []
        for angle in _contributing_angles(d):
            frame = item.frames[angle]
            matrix = np.round(frame.data.astype(np.float64), 4)
            channels.append(
                {
                    "angle_deg": angle,
                    "track_start_m": frame.track_start_m,
                    "track_end_m": frame.track_end_m,
                    "matrix": matrix.tolist(),
                }
            )
        return {
            "decision_id": decision_id,
            "track_start_m": d.track_start_m,
            "track_end_m": d.track_end_m,
            "machine_class": d.defect_class.value,
            "status": d.status.value,
            "channels": channels,
            "verdicts": [verdict_to_json(v) for v in d.verdicts],
            "class_options": _class_options(d),
            "depth_axis": {
                "velocity_mps": VELOCITY_MPS,
                "sample_window_us": SAMPLE_WINDOW_US,
                "depth_samples": next(iter(item.frames.values())).data.shape[0],
            },
        }

    @app.post("/api/labels")
    def post_label(label: LabelIn):
        try:
            defect_class = DefectClass(label.defect_class)
        except ValueError:
            return JSONResponse(
                status_code=400,
                content={
                    "error": "invalid request body",
                    "fields": [
                        {
                            "field": "class",
                            "message": f"unknown class {label.defect_class!r}",
                        }
                    ],
                },
            )
        try:
            decision, entries = hub.review_store.apply_label(
                ExpertLabel(
                    decision_id=label.decision_id,
                    defect_class=defect_class,
                    comment=label.comment,
                    timestamp=time.time(),
                )
            )
        except ReviewNotFoundError:
            return JSONResponse(
                status_code=404,
                content={"error": f"unknown decision id {label.decision_id}"},
            )
        except ReviewConflictError as exc:
            return JSONResponse(status_code=409, content={"error": str(exc)})
        return {
            "decision": decision_to_json(decision),
            "retraining_entries": len(entries),
        }

    @app.get("/api/metrics")
    def get_metrics():
        metrics = dict(hub.metrics_provider())
        metrics["decisions_recorded"] = {
            status.value: sum(
                1
                for d in hub.review_store.decisions()
                if d.status is status
            )
            for status in DecisionStatus
        }
        metrics["queue_depth_review"] = len(hub.review_store.pending())
        return metrics

    @app.get("/api/live")
    def get_live(limit: int | None = None, keepalive_s: float = 10.0):
        """Server-sent events: one data message per emitted decision.

        ``limit`` closes the stream after that many decisions, which suits
        scripts and tests; browsers leave it unset and rely on EventSource
        reconnection.
        """
        feed = hub.broadcaster.subscribe()

        def _events():
            sent = 0
            try:
                yield ": connected\n\n"
                while limit is None or sent < limit:
                    try:
                        payload = feed.get(timeout=keepalive_s)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    yield f"data: {json.dumps(payload)}\n\n"
                    sent += 1
            finally:
                hub.broadcaster.unsubscribe(feed)

        return StreamingResponse(
            _events(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache"},
        )

    return app


def mount_ui(app: FastAPI, ui_dir: str | Path) -> None:
    """Serve a built review console from /ui (optional convenience)."""
    from fastapi.staticfiles import StaticFiles

    app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")
