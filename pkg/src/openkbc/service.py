"""Session-oriented HTTP API over the engine.

Each query runs as one episode on its own thread; interactive actions park
the episode on a blocking channel until the client answers (or declines).
KB mutations stay serialized behind one engine-wide lock, which the channel
releases while a session waits so other sessions keep moving.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .engine import Engine
from .executor import Answer, Question
from .kb import QueryTriple
from .mdp import Action
from .strategy import DataInstance, run_episode

DEFAULT_WAIT_SECONDS = 30.0


@dataclass
class Session:
    id: int
    query: QueryTriple
    instance: DataInstance
    phase: str = "running"             # running | awaiting_answer | finished
    pending: Question | None = None
    answer: Answer | None = None
    won: bool | None = None
    aborted: bool = False
    cond: threading.Condition = field(default_factory=threading.Condition)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "query": [self.query.s, self.query.r, self.query.t],
            "phase": self.phase,
            "question": self.pending.to_json() if self.pending else None,
            "trace": [f"a{int(a)}" for a in self.instance.strategy],
            "verdict": self.instance.verdict,
            "won": self.won,
            "aborted": self.aborted,
            "remaining_budget": self.instance.budget,
            "questions_asked": self.instance.questions_asked,
        }


class SessionChannel:
    """Blocking request/response bridge between an episode and HTTP."""

    def __init__(self, session: Session, engine_lock: threading.RLock,
                 timeout: float | None):
        self.session = session
        self.engine_lock = engine_lock
        self.timeout = timeout

    def ask(self, question: Question) -> Answer:
        s = self.session
        with s.cond:
            s.pending = question
            s.answer = None
            s.phase = "awaiting_answer"
            s.cond.notify_all()
        self.engine_lock.release()
        try:
            with s.cond:
                if s.answer is None:
                    s.cond.wait(timeout=self.timeout)
                answer = s.answer if s.answer is not None else Answer.decline()
                s.answer = None
                s.pending = None
                s.phase = "running"
        finally:
            self.engine_lock.acquire()
        return answer


class SessionManager:
    def __init__(self, engine: Engine, answer_timeout: float | None = None):
        self.engine = engine
        self.answer_timeout = answer_timeout
        self.engine_lock = threading.RLock()
        self.sessions: dict[int, Session] = {}
        self._ids = itertools.count(1)

    def create(self, query: QueryTriple, budget: int | None = None) -> Session:
        sid = next(self._ids)
        instance = DataInstance(
            triple=query,
            budget=(budget if budget is not None
                    else self.engine.config.params.interaction_limit),
            mode="E",
        )
        session = Session(sid, query, instance)
        self.sessions[sid] = session
        thread = threading.Thread(
            target=self._run, args=(session,), daemon=True,
            name=f"okbc-session-{sid}",
        )
        thread.start()
        return session

    def _run(self, session: Session) -> None:
        channel = SessionChannel(session, self.engine_lock, self.answer_timeout)
        rng = self.engine.session_rng("session", session.id, session.query)
        executor = self.engine.executor(channel, rng)
        try:
            with self.engine_lock:
                result = run_episode(
                    session.instance, self.engine.table, executor,
                    mode="act", rng=rng,
                )
            with session.cond:
                session.won = result.won
                session.aborted = result.aborted
                session.phase = "finished"
                session.pending = None
                session.cond.notify_all()
        except Exception:
            with session.cond:
                session.phase = "finished"
                session.aborted = True
                session.cond.notify_all()
            raise

    def get(self, sid: int) -> Session:
        session = self.sessions.get(sid)
        if session is None:
            raise KeyError(sid)
        return session

    def wait_for_turn(self, session: Session, timeout: float) -> None:
        """Block until the session needs input or finished (or timeout)."""
        deadline = threading.get_native_id  # placeholder to appease linters
        with session.cond:
            if session.phase == "running":
                session.cond.wait(timeout=timeout)

    def submit_answer(self, session: Session, answer: Answer) -> None:
        with session.cond:
            if session.phase != "awaiting_answer":
                raise RuntimeError("session is not waiting for an answer")
            session.answer = answer
            session.cond.notify_all()


class CreateSessionBody(BaseModel):
    triple: list[str]
    budget: int | None = None


class AnswerBody(BaseModel):
    kind: str
    triple: list[str] | None = None
    relation: str | None = None


def create_app(engine: Engine, answer_timeout: float | None = None) -> FastAPI:
    app = FastAPI(title="openkbc", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )
    manager = SessionManager(engine, answer_timeout)
    app.state.manager = manager

    def _session_or_404(sid: int) -> Session:
        try:
            return manager.get(sid)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no session {sid}")

    @app.post("/sessions")
    def create_session(body: CreateSessionBody, wait: float = DEFAULT_WAIT_SECONDS):
        if len(body.triple) != 3 or not all(
            isinstance(x, str) and x for x in body.triple
        ):
            raise HTTPException(status_code=400,
                                detail="triple must be three non-empty strings")
        session = manager.create(QueryTriple(*body.triple), body.budget)
        manager.wait_for_turn(session, wait)
        return session.to_json()

    @app.get("/sessions/{sid}")
    def get_session(sid: int, wait: float = 0.0):
        session = _session_or_404(sid)
        if wait > 0:
            manager.wait_for_turn(session, wait)
        return session.to_json()

    @app.post("/sessions/{sid}/answer")
    def answer_session(sid: int, body: AnswerBody,
                       wait: float = DEFAULT_WAIT_SECONDS):
        session = _session_or_404(sid)
        answer = Answer.from_json(body.model_dump())
        try:
            manager.submit_answer(session, answer)
        except RuntimeError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        manager.wait_for_turn(session, wait)
        return session.to_json()

    @app.get("/kb/stats")
    def kb_stats():
        return engine.stats()

    @app.get("/tasks")
    def tasks():
        relations = engine.store.graph.relations
        return {
            "tasks": [
                {"relation": relations.label(rid), "mcc": mcc}
                for rid, mcc in sorted(engine.store.task_scores.items().items())
            ]
        }

    return app
