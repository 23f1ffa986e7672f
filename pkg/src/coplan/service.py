"""Interactive session service.

Exposes live collaborations over HTTP: create a session (memorize phase,
then collaborate), submit validated human actions, stream ordered client
events (state snapshots, robot actions, assignment offers and verdicts,
belief updates) over server-sent events, and download the raw engine log.

One session = one engine plus one pump task that maps wall-clock time onto
simulated time at a configurable scale. All mutations go through the
session's lock, so clients observe a single serialized event order; the
stream replays from sequence 0 for late subscribers and resumes from
`from_seq` after a disconnect.
"""

from __future__ import annotations

import asyncio
import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, AsyncIterator

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel, Field

from .engine import (
    EngineConfig,
    ProtocolError,
    SessionAborted,
    SessionEngine,
    compute_metrics,
    events_to_jsonl,
)
from .world import (
    Agent,
    Difficulty,
    Scenario,
    ScenarioConfig,
    ScenarioError,
    build_scenario,
)

DEFAULT_MEMORIZE_S = 90.0


class CreateSessionRequest(BaseModel):
    difficulty: str = "medium"
    seed: int = 0
    time_scale: float = Field(default=0.0, ge=0.0, description="0 = server default")
    memorize_s: float = Field(default=DEFAULT_MEMORIZE_S, gt=0.0)
    config: dict[str, Any] | None = None


class ActionRequest(BaseModel):
    kind: str
    task: str | None = None
    color: str | None = None


@dataclass
class SessionRuntime:
    session_id: str
    engine: SessionEngine
    scenario: Scenario
    time_scale: float
    memorize_deadline: float  # wall time
    phase: str = "memorize"
    wall_t0: float | None = None
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    client_events: list[dict] = field(default_factory=list)
    new_event: asyncio.Condition = field(default_factory=asyncio.Condition)
    kick: asyncio.Event = field(default_factory=asyncio.Event)
    pump_task: asyncio.Task | None = None
    consumed_engine_seq: int = 0

    # ------------------------------------------------------------- lifecycle

    def sim_now(self) -> float:
        if self.wall_t0 is None:
            return 0.0
        return (time.monotonic() - self.wall_t0) * self.time_scale

    async def start_collaboration(self) -> None:
        if self.phase != "memorize":
            return
        self.phase = "collaborate"
        self.wall_t0 = time.monotonic()
        await self._emit({"event": "state_snapshot", "state": self.snapshot()})

    async def maybe_auto_start(self) -> None:
        if self.phase == "memorize" and time.monotonic() >= self.memorize_deadline:
            await self.start_collaboration()

    async def finish(self, reason: str = "finished_by_client") -> None:
        if self.phase == "finished":
            return
        if not self.engine.finished:
            self.engine.finished = True
            self.engine._record("session", kind="finished", outcome=reason)
        await self._drain_engine_events()
        self.phase = "finished"
        metrics = compute_metrics(self.engine.events)
        await self._emit(
            {
                "event": "session_complete",
                "completed": self.engine.is_complete(),
                "reason": reason,
                "metrics": metrics.as_dict(),
            }
        )

    # ------------------------------------------------------------ event flow

    async def _emit(self, payload: dict) -> None:
        payload = dict(payload)
        payload["seq"] = len(self.client_events)
        payload["session_id"] = self.session_id
        self.client_events.append(payload)
        async with self.new_event:
            self.new_event.notify_all()

    async def _drain_engine_events(self) -> None:
        """Translate fresh engine records into client events."""
        fresh = self.engine.events[self.consumed_engine_seq:]
        self.consumed_engine_seq = len(self.engine.events)
        emitted_any = False
        for rec in fresh:
            rec_type = rec["type"]
            if rec_type == "belief":
                await self._emit(
                    {
                        "event": "belief_update",
                        "t": rec["t"],
                        "obs": rec["kind"],
                        "p_f": rec["p_f"],
                        "p_e": rec["p_e"],
                        "preference_pmf": rec["preference_pmf"],
                        "performance_pmf": rec["performance_pmf"],
                    }
                )
                emitted_any = True
            elif rec_type == "session" and rec["kind"] == "assignment_accepted":
                await self._emit(
                    {
                        "event": "assignment_verdict",
                        "task": rec.get("task"),
                        "accepted": True,
                        "reason": rec.get("outcome", "accepted"),
                    }
                )
                emitted_any = True
            elif rec_type == "action" and rec["agent"] == Agent.ROBOT.value:
                kind = rec["kind"]
                if kind == "assign_task_to_human":
                    await self._emit(
                        {"event": "assignment_offer", "task": rec["task"], "t": rec["t"]}
                    )
                elif kind == "reject_human_assignment":
                    await self._emit(
                        {
                            "event": "assignment_verdict",
                            "task": rec.get("task"),
                            "accepted": False,
                            "reason": rec.get("outcome", "rejected"),
                        }
                    )
                else:
                    await self._emit(
                        {
                            "event": "robot_action",
                            "kind": kind,
                            "task": rec.get("task"),
                            "outcome": rec.get("outcome"),
                            "t": rec["t"],
                        }
                    )
                emitted_any = True
        if emitted_any or fresh:
            await self._emit({"event": "state_snapshot", "state": self.snapshot()})

    async def advance(self) -> None:
        """Advance simulated time to 'now' and publish whatever happened."""
        if self.phase != "collaborate":
            return
        try:
            self.engine.advance_to(self.sim_now())
        except SessionAborted as abort:
            await self._drain_engine_events()
            await self.finish(reason=abort.reason)
            return
        await self._drain_engine_events()
        if self.engine.finished:
            await self.finish(reason="completed" if self.engine.is_complete() else "ended")

    async def pump(self) -> None:
        try:
            while self.phase != "finished":
                await self.maybe_auto_start()
                if self.phase == "memorize":
                    delay = max(0.01, self.memorize_deadline - time.monotonic())
                    try:
                        await asyncio.wait_for(self.kick.wait(), timeout=min(delay, 0.5))
                    except asyncio.TimeoutError:
                        pass
                    self.kick.clear()
                    continue
                async with self.lock:
                    await self.advance()
                    nxt = self.engine.next_wakeup()
                if self.phase == "finished":
                    break
                if nxt is None:
                    timeout = 0.2
                else:
                    wall_target = (self.wall_t0 or 0.0) + nxt / self.time_scale
                    timeout = max(0.001, wall_target - time.monotonic())
                try:
                    await asyncio.wait_for(self.kick.wait(), timeout=min(timeout, 0.5))
                except asyncio.TimeoutError:
                    pass
                self.kick.clear()
        except asyncio.CancelledError:
            pass

    # -------------------------------------------------------------- snapshot

    def snapshot(self) -> dict:
        return build_snapshot(self.engine, self.scenario, self.phase)


def build_snapshot(engine: SessionEngine, scenario: Scenario, phase: str) -> dict:
    """The client-facing session state; never names an unplaced true color."""
    board = []
    in_progress = engine._in_progress_ids()
    available = {t.task_id for t in engine.available_tasks()}
    for task in scenario.graph.tasks:
        key = (task.workspace, task.spot)
        placed = engine.occupancy.get(key)
        board.append(
            {
                "task": task.task_id,
                "workspace": task.workspace,
                "spot": task.spot,
                "options": [c.value for c in engine.variant.spots[key].options]
                if phase != "memorize"
                else [],
                "placed": placed.value if placed is not None else None,
                "completed": task.task_id in engine.completed,
                "misplaced": task.task_id in engine.misplaced,
                "selectable": task.task_id in available
                and task.task_id not in engine.pending_verdicts
                and task.task_id not in engine.robot_committed,
                "in_progress": task.task_id in in_progress,
            }
        )
    agents = {}
    for agent, rt in engine.agents.items():
        agents[agent.value] = {
            "busy": rt.busy,
            "task": rt.activity.task_id if rt.activity else None,
            "phase": rt.activity.phase if rt.activity else None,
        }
    return {
        "phase": phase,
        "t": round(engine.clock, 3),
        "board": board,
        "agents": agents,
        "assigned_to_you": sorted(engine.announced, key=lambda t: engine.announced[t]),
        "awaiting_verdict": list(engine.pending_verdicts),
        "accepted_requests": list(engine.robot_committed),
        "completed_count": len(engine.completed),
        "total_tasks": len(scenario.graph.tasks),
        "p_f": round(engine.beliefs.follow_preference, 6),
        "p_e": round(engine.beliefs.error_proneness, 6),
    }


def create_app(
    default_time_scale: float = 1.0,
    log_dir: str | None = None,
    ui_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="coplan session service", version="0.1.0")
    sessions: dict[str, SessionRuntime] = {}
    log_path = Path(log_dir) if log_dir else None
    if log_path:
        log_path.mkdir(parents=True, exist_ok=True)

    # Serve the built web client when present (frontend/ next to the package
    # checkout, or an explicit directory).
    candidates = [Path(ui_dir)] if ui_dir else [
        Path(__file__).resolve().parents[2] / "frontend"
    ]
    for candidate in candidates:
        if candidate.is_dir() and (candidate / "index.html").exists():
            from fastapi.staticfiles import StaticFiles

            app.mount("/ui", StaticFiles(directory=str(candidate), html=True), name="ui")
            break

    def get_session(session_id: str) -> SessionRuntime:
        rt = sessions.get(session_id)
        if rt is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return rt

    @app.exception_handler(ProtocolError)
    async def protocol_error_handler(_req: Request, exc: ProtocolError):
        return JSONResponse(
            status_code=409,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "sessions": len(sessions)}

    @app.post("/sessions", status_code=201)
    async def create_session(req: CreateSessionRequest):
        try:
            difficulty = Difficulty(req.difficulty)
        except ValueError:
            raise HTTPException(
                status_code=422,
                detail=f"difficulty must be one of {[d.value for d in Difficulty]}",
            )
        try:
            cfg = (
                ScenarioConfig.from_dict(req.config) if req.config else ScenarioConfig.default()
            )
            scenario = build_scenario(cfg)
        except ScenarioError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        time_scale = req.time_scale or default_time_scale
        # The stall guard bounds wall time, so the simulated-clock cap has to
        # grow with the playback rate.
        engine_config = EngineConfig(clock_cap_s=3600.0 * max(1.0, time_scale))
        engine = SessionEngine(
            scenario, seed=req.seed, difficulty=difficulty, config=engine_config
        )
        session_id = uuid.uuid4().hex[:12]
        rt = SessionRuntime(
            session_id=session_id,
            engine=engine,
            scenario=scenario,
            time_scale=time_scale,
            memorize_deadline=time.monotonic() + req.memorize_s,
        )
        sessions[session_id] = rt
        rt.pump_task = asyncio.create_task(rt.pump())
        # The full pattern is revealed only here, for the memorize phase.
        pattern = [
            {
                "workspace": w,
                "spot": s,
                "color": scenario.pattern.color_at(w, s).value,
            }
            for (w, s) in scenario.pattern.spots()
        ]
        variant = [
            {
                "workspace": w,
                "spot": s,
                "options": [c.value for c in spot.options],
            }
            for (w, s), spot in sorted(engine.variant.spots.items())
        ]
        return {
            "session_id": session_id,
            "phase": rt.phase,
            "difficulty": difficulty.value,
            "memorize_deadline_s": req.memorize_s,
            "pattern": pattern,
            "variant": variant,
            "workspaces": cfg.workspaces,
            "spots_per_workspace": cfg.spots_per_workspace,
            "time_scale": rt.time_scale,
        }

    @app.post("/sessions/{session_id}/start")
    async def start_session(session_id: str):
        rt = get_session(session_id)
        async with rt.lock:
            await rt.start_collaboration()
            rt.kick.set()
        return {"phase": rt.phase}

    @app.get("/sessions/{session_id}/state")
    async def get_state(session_id: str):
        rt = get_session(session_id)
        async with rt.lock:
            await rt.maybe_auto_start()
            await rt.advance()
            return rt.snapshot()

    @app.post("/sessions/{session_id}/actions")
    async def submit_action(session_id: str, action: ActionRequest):
        rt = get_session(session_id)
        async with rt.lock:
            await rt.maybe_auto_start()
            if rt.phase == "memorize":
                raise ProtocolError("wrong_phase", "the session is still in the memorize phase")
            if rt.phase == "finished":
                raise ProtocolError("wrong_phase", "the session is already finished")
            await rt.advance()
            if rt.phase == "finished":
                raise ProtocolError("wrong_phase", "the session is already finished")
            records = rt.engine.submit_human_action(action.kind, action.task, action.color)
            await rt._drain_engine_events()
            if rt.engine.finished:
                await rt.finish(reason="completed")
        rt.kick.set()
        return {
            "applied": True,
            "kind": action.kind,
            "task": action.task,
            "events": [r for r in records if r["type"] == "action"],
        }

    @app.get("/sessions/{session_id}/events")
    async def subscribe(session_id: str, request: Request, from_seq: int = 0):
        rt = get_session(session_id)

        async def stream() -> AsyncIterator[str]:
            cursor = from_seq
            while True:
                while cursor < len(rt.client_events):
                    ev = rt.client_events[cursor]
                    cursor += 1
                    yield f"id: {ev['seq']}\ndata: {json.dumps(ev, separators=(',', ':'))}\n\n"
                if await request.is_disconnected():
                    return
                if rt.phase == "finished" and cursor >= len(rt.client_events):
                    yield "event: end\ndata: {}\n\n"
                    return
                quiet = False
                async with rt.new_event:
                    try:
                        await asyncio.wait_for(rt.new_event.wait(), timeout=0.25)
                    except asyncio.TimeoutError:
                        quiet = True
                if quiet:
                    # keep-alive outside the lock: a suspended generator must
                    # never hold the condition other tasks notify through
                    yield ": ping\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.post("/sessions/{session_id}/finish")
    async def finish_session(session_id: str):
        rt = get_session(session_id)
        async with rt.lock:
            await rt.finish()
        if rt.pump_task:
            rt.pump_task.cancel()
        if log_path:
            (log_path / f"{session_id}.jsonl").write_text(events_to_jsonl(rt.engine.events))
        return {"phase": rt.phase, "completed": rt.engine.is_complete()}

    @app.get("/sessions/{session_id}/log")
    async def download_log(session_id: str):
        rt = get_session(session_id)
        # The raw engine log names every fetched color (it knows the pattern);
        # it only becomes downloadable once the session is over.
        if rt.phase != "finished":
            raise ProtocolError("wrong_phase", "the log is available after the session ends")
        return PlainTextResponse(events_to_jsonl(rt.engine.events))

    @app.get("/sessions/{session_id}/metrics")
    async def get_metrics(session_id: str):
        rt = get_session(session_id)
        return compute_metrics(rt.engine.events).as_dict()

    return app


app = create_app()
