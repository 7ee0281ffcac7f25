import asyncio
import json
import threading

import httpx
import numpy as np
import pytest

from udrt.decision import (
    ReviewStore,
    decision_from_json,
)
from udrt.server import Broadcaster, ServiceHub, create_app
from udrt.taxonomy import DefectClass

from helpers import delegated_decision, make_frames, quiet_bank, verdict
from udrt.decision import compose


def build_hub(decisions=()):
    store = ReviewStore()
    for decision, frames in decisions:
        store.record(decision, frames)
    hub = ServiceHub(
        review_store=store,
        metrics_provider=lambda: {"columns_per_s": 12345.0},
    )
    return hub


def g3_delegation(start=4.0):
    window = (start, start + 0.512)
    bank = quiet_bank(window=window)
    bank[3] = verdict(
        3, DefectClass.BOLT_HOLE_STAR_CRACK, 0.6, margin=0.1, window=window
    )
    (decision,) = compose(list(bank.values()))
    return decision


def api(hub):
    transport = httpx.ASGITransport(app=create_app(hub))
    return httpx.AsyncClient(transport=transport, base_url="http://testserver")


def run(coro):
    return asyncio.run(coro)


class TestQueueAndFrames:
    def test_queue_lists_pending_items(self):
        hub = build_hub([(g3_delegation(), make_frames(start_m=4.0))])

        async def scenario():
            async with api(hub) as client:
                r = await client.get("/api/queue")
                assert r.status_code == 200
                items = r.json()
                assert len(items) == 1
                assert items[0]["decision_id"] == 0
                assert items[0]["contributing_group_ids"] == [3]
                assert items[0]["machine_class"] == "BoltHoleStarCrack"
                assert len(items[0]["verdicts"]) == 5

        run(scenario())

    def test_g3_delegation_serves_exactly_five_channel_matrices(self):
        hub = build_hub([(g3_delegation(), make_frames(start_m=4.0, h=8, w=16))])

        async def scenario():
            async with api(hub) as client:
                r = await client.get("/api/frames/0")
                assert r.status_code == 200
                payload = r.json()
                angles = [c["angle_deg"] for c in payload["channels"]]
                assert angles == [-70, -35, 0, 35, 70]
                assert len(payload["channels"]) == 5
                matrix = payload["channels"][0]["matrix"]
                assert len(matrix) == 8 and len(matrix[0]) == 16
                assert payload["class_options"] == [
                    "NoIndication",
                    "BoltHoleIntact",
                    "BoltedJoint",
                    "BoltHoleStarCrack",
                ]
                assert payload["depth_axis"]["velocity_mps"] == 5900.0

        run(scenario())

    def test_unknown_frame_id_is_404(self):
        hub = build_hub()

        async def scenario():
            async with api(hub) as client:
                r = await client.get("/api/frames/123")
                assert r.status_code == 404

        run(scenario())


class TestLabels:
    def test_label_round_trip_clears_queue(self):
        hub = build_hub([(g3_delegation(), make_frames(start_m=4.0))])

        async def scenario():
            async with api(hub) as client:
                r = await client.post(
                    "/api/labels",
                    json={"decision_id": 0, "class": "BoltHoleStarCrack"},
                )
                assert r.status_code == 200
                body = r.json()
                assert body["decision"]["status"] == "ExpertResolved"
                assert body["retraining_entries"] == 1

                r = await client.get("/api/queue")
                assert r.json() == []

        run(scenario())
        assert len(hub.review_store.retraining) == 1

    def test_double_label_is_409(self):
        hub = build_hub([(g3_delegation(), make_frames(start_m=4.0))])

        async def scenario():
            async with api(hub) as client:
                first = await client.post(
                    "/api/labels", json={"decision_id": 0, "class": "NoIndication"}
                )
                assert first.status_code == 200
                again = await client.post(
                    "/api/labels", json={"decision_id": 0, "class": "NoIndication"}
                )
                assert again.status_code == 409

        run(scenario())

    def test_unknown_id_is_404(self):
        hub = build_hub()

        async def scenario():
            async with api(hub) as client:
                r = await client.post(
                    "/api/labels", json={"decision_id": 55, "class": "Weld"}
                )
                assert r.status_code == 404

        run(scenario())

    def test_malformed_body_is_400_with_field_message(self):
        hub = build_hub()

        async def scenario():
            async with api(hub) as client:
                r = await client.post("/api/labels", json={"class": "Weld"})
                assert r.status_code == 400
                body = r.json()
                assert any("decision_id" in f["field"] for f in body["fields"])

                r = await client.post(
                    "/api/labels", json={"decision_id": 0, "class": "NotAClass"}
                )
                assert r.status_code == 400
                assert r.json()["fields"][0]["field"] == "class"

        run(scenario())


class TestMetrics:
    def test_metrics_merge_pipeline_and_review_state(self):
        hub = build_hub([(g3_delegation(), make_frames(start_m=4.0))])

        async def scenario():
            async with api(hub) as client:
                r = await client.get("/api/metrics")
                assert r.status_code == 200
                body = r.json()
                assert body["columns_per_s"] == 12345.0
                assert body["decisions_recorded"]["Delegated"] == 1
                assert body["queue_depth_review"] == 1

        run(scenario())


class TestLiveFeed:
    def test_decisions_stream_and_round_trip(self):
        hub = build_hub()
        published = delegated_decision(start=7.0)
        published.decision_id = 41

        async def scenario():
            async with api(hub) as client:
                # publish shortly after the handler has subscribed
                threading.Timer(
                    0.1, hub.broadcaster.publish, args=(published,)
                ).start()
                r = await client.get("/api/live", params={"limit": 1})
                assert r.status_code == 200
                assert r.headers["content-type"].startswith("text/event-stream")
                data_lines = [
                    line for line in r.text.splitlines()
                    if line.startswith("data: ")
                ]
                assert len(data_lines) == 1
                decoded = decision_from_json(
                    json.loads(data_lines[0][len("data: "):])
                )
                assert decoded == published

        run(asyncio.wait_for(scenario(), timeout=20))

    def test_stalled_subscribers_do_not_block_publishing(self):
        hub = build_hub()
        feed = hub.broadcaster.subscribe()
        for i in range(2000):  # overflow the per-subscriber buffer
            hub.broadcaster.publish(delegated_decision(start=float(i)))
        assert feed.qsize() <= 1024
        hub.broadcaster.unsubscribe(feed)
