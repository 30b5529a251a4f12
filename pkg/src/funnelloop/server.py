"""WebSocket state stream for the operator UI.

The simulation runs in a worker thread and publishes one JSON frame per
simulated 50 ms; connected clients receive frames and may send
{"set_goal": {x, y}} or {"toggle_region": {x0, y0, x1, y1}} commands, which
are injected into the simulation as events at the next epoch. When a built
frontend exists under frontend/dist it is served over plain HTTP.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time
from pathlib import Path

import uvicorn
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles

from funnelloop.simulator import run


def build_app(command_queue):
    app = FastAPI()

    clients: set = set()
    clients_lock = threading.Lock()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        q: asyncio.Queue = asyncio.Queue(maxsize=64)
        with clients_lock:
            clients.add(q)

        async def sender():
            while True:
                await ws.send_text(await q.get())

        async def receiver():
            while True:
                msg = await ws.receive_text()
                try:
                    command_queue.put(json.loads(msg))
                except (json.JSONDecodeError, TypeError):
                    await ws.send_text(json.dumps({"error": "bad command"}))

        tasks = {asyncio.create_task(sender()), asyncio.create_task(receiver())}
        try:
            done, pending = await asyncio.wait(tasks,
                                               return_when=asyncio.FIRST_EXCEPTION)
            for t in pending:
                t.cancel()
        except WebSocketDisconnect:
            pass
        finally:
            for t in tasks:
                t.cancel()
            with clients_lock:
                clients.discard(q)

    app.state.clients = clients
    app.state.clients_lock = clients_lock

    dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    index = Path(__file__).resolve().parents[2] / "frontend" / "index.html"
    if dist.exists():
        app.mount("/dist", StaticFiles(directory=str(dist)), name="dist")
    if index.exists():
        @app.get("/")
        async def root():
            return HTMLResponse(index.read_text())

    return app


def serve(scenario, library, planner_config=None, port: int = 8765,
          speed: float = 1.0, ready_event=None):
    """Run the scenario while streaming frames on ws://localhost:port/ws.
    Returns the run log when the scenario finishes."""
    command_queue = queue.Queue()
    app = build_app(command_queue)

    loop_holder = {}

    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)

    def broadcast(frame):
        payload = json.dumps(frame)
        loop = loop_holder.get("loop")
        if loop is None:
            return
        with app.state.clients_lock:
            targets = list(app.state.clients)
        for q in targets:
            def put(q=q):
                if q.full():
                    try:
                        q.get_nowait()  # drop the oldest frame, never block
                    except asyncio.QueueEmpty:
                        pass
                q.put_nowait(payload)
            loop.call_soon_threadsafe(put)

    wall_per_frame = 0.05 / max(speed, 1e-6)
    last_emit = [0.0]

    def frame_hook(frame):
        broadcast(frame)
        # pace the simulation toward the requested real-time factor
        now = time.perf_counter()
        lag = wall_per_frame - (now - last_emit[0])
        if 0 < lag < 1.0:
            time.sleep(lag)
        last_emit[0] = time.perf_counter()

    result = {}

    def sim_worker():
        try:
            result["log"] = run(scenario, library, planner_config,
                                frame_hook=frame_hook,
                                command_queue=command_queue)
        finally:
            server.should_exit = True

    async def main():
        loop_holder["loop"] = asyncio.get_running_loop()
        serve_task = asyncio.create_task(server.serve())
        while not server.started and not serve_task.done():
            await asyncio.sleep(0.02)
        worker = threading.Thread(target=sim_worker, daemon=True)
        worker.start()
        if ready_event is not None:
            ready_event.set()
        await serve_task
        worker.join(timeout=5)

    asyncio.run(main())
    return result.get("log")
