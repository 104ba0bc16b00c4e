"""Live elicitation sessions: state machine, durable log, and HTTP API.

A session wraps the query/response loop for one real occupant. Every mutation
is appended to a per-session newline-delimited JSON log and fsynced before the
call returns; posterior ensembles are never persisted because they are
re-derivable from (seed, history). Restarting the service replays each log
through the exact same fitting path, so recovered state is byte-identical to
what the live service held.

Refits run on a worker pool. While one is in flight the session reports
status "computing" and rejects further mutation; reads never wait on it.
Submits are idempotent per step index, which doubles as the client step token.
"""

import json
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .acquisition import ElicitationHistory, select_next, should_stop
from .model import (
    TEMP_RANGE,
    ModelConstants,
    PreferenceDataset,
    VirtualGrid,
    default_init,
    preference_target,
)
from .predict import XBestPosterior, utility_quantiles, xbest_posterior
from .sampler import HmcConfig, run_hmc

SCHEMA_VERSION = 1
STATUSES = ("awaiting_response", "computing", "converged", "budget_exhausted")

#: Quantile levels reported for the normalized utility band.
QUANTILE_QS = (0.05, 0.25, 0.5, 0.75, 0.95)


class UnknownSessionError(KeyError):
    """No session with the given id."""


class ConflictError(RuntimeError):
    """Mutation not legal in the session's current status."""


class RequestError(ValueError):
    """Malformed request payload."""


@dataclass(frozen=True)
class FitResult:
    """Everything one posterior refit produces that the session keeps."""

    xbest: XBestPosterior
    eui_map: dict
    next_temp: float
    eui_best: float
    quantiles: np.ndarray  # (len(QUANTILE_QS), J)


FitFn = Callable[[tuple, int, int], FitResult]


def make_fit_fn(
    grid: Optional[VirtualGrid] = None,
    constants: ModelConstants = ModelConstants(),
    hmc: HmcConfig = HmcConfig(),
) -> FitFn:
    """Build the production fit function: HMC refit, EUI sweep, summaries.

    The returned callable maps (pairs, seed, budget) to a FitResult, where
    pairs is the full ((temp, response), ...) history. Seeding matches the
    synthetic-trial driver: step k of session seed s uses the HMC stream
    derived from (s, k, 0x5EED), so a live session and its replay agree
    bit for bit.
    """
    grid = grid or VirtualGrid()

    def fit(pairs, seed: int, budget: int) -> FitResult:
        step = len(pairs)
        data = PreferenceDataset()
        for t, r in pairs:
            data = data.append(t, r)
        target = preference_target(data, grid, constants, pad_to=max(budget, step))
        hmc_seed = int(np.random.SeedSequence((seed, step, 0x5EED)).generate_state(1)[0])
        cfg = replace(hmc, seed=hmc_seed)
        init = target.layout.pack(default_init(target.layout, grid, seed=seed))
        ensemble = run_hmc(target, init, cfg)
        xb = xbest_posterior(ensemble, grid)
        next_temp, eui_best, eui_map = select_next(pairs[-1][0], ensemble, data, grid)
        return FitResult(
            xbest=xb,
            eui_map=eui_map,
            next_temp=next_temp,
            eui_best=eui_best,
            quantiles=utility_quantiles(ensemble, QUANTILE_QS),
        )

    return fit


@dataclass
class Session:
    """Mutable server-side state for one occupant's elicitation."""

    id: str
    created_at: float
    status: str
    budget: int
    seed: int
    current_query: float
    history: ElicitationHistory = field(default_factory=ElicitationHistory)
    comments: list = field(default_factory=list)  # (step, text) pairs
    posterior_summary: Optional[XBestPosterior] = None
    eui_map: Optional[dict] = None
    quantiles: Optional[np.ndarray] = None
    stop_reason: Optional[str] = None
    error: Optional[str] = None


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if np.isfinite(v) else None


def session_to_json(s: Session) -> dict:
    """Stable JSON view of a session; non-finite ratios map to null."""
    steps = []
    for i, st in enumerate(s.history.steps):
        steps.append({
            "step": i + 1,
            "query_temp": st.query_temp,
            "response": st.response,
            "eui": _finite_or_none(st.eui),
            "eui_ratio": _finite_or_none(st.eui_ratio),
            "ci95": None if st.ci95 is None else [st.ci95[0], st.ci95[1]],
            "timestamp": st.timestamp,
        })
    xb = s.posterior_summary
    return {
        "schema": SCHEMA_VERSION,
        "id": s.id,
        "created_at": s.created_at,
        "status": s.status,
        "budget": s.budget,
        "seed": s.seed,
        "current_query": s.current_query,
        "history": steps,
        "comments": [{"step": k, "text": t} for k, t in s.comments],
        "eui": None if s.eui_map is None
        else {str(t): v for t, v in s.eui_map.items()},
        "posterior_summary": None if xb is None
        else {"median": xb.median, "ci95": [xb.ci95[0], xb.ci95[1]]},
        "stop_reason": s.stop_reason,
        "error": s.error,
    }


def posterior_to_json(s: Session, grid: VirtualGrid) -> dict:
    """Posterior payload for the console chart; placeholder form when absent."""
    xb = s.posterior_summary
    if xb is None or s.quantiles is None:
        return {"schema": SCHEMA_VERSION, "available": False}
    return {
        "schema": SCHEMA_VERSION,
        "available": True,
        "grid": [float(x) for x in grid.array],
        "pmf": [float(p) for p in xb.pmf],
        "median": xb.median,
        "ci95": [xb.ci95[0], xb.ci95[1]],
        "quantiles": {
            "qs": list(QUANTILE_QS),
            "values": [[float(v) for v in row] for row in s.quantiles],
        },
    }


class SessionStore:
    """Append-only NDJSON log per session under one directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.ndjson"

    def append(self, session_id: str, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with open(self._path(session_id), "a", encoding="utf-8") as f:
            f.write(line + "\n")
            f.flush()
            os.fsync(f.fileno())

    def session_ids(self) -> list:
        return sorted(p.stem for p in self.root.glob("*.ndjson"))

    def read_log(self, session_id: str) -> tuple:
        """(records, corrupt_line_index or None).

        A final line without a trailing newline is a crash artifact, dropped
        silently; an unparsable newline-terminated line is real corruption
        and its index is reported.
        """
        text = self._path(session_id).read_text(encoding="utf-8")
        complete, _, tail = text.rpartition("\n")
        del tail  # truncated trailing fragment, if any
        records = []
        for i, line in enumerate(complete.splitlines()):
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                return records, i
        return records, None


def _create_record(session: Session, init_temp: float) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "create",
        "id": session.id,
        "created_at": session.created_at,
        "init_temp": init_temp,
        "budget": session.budget,
        "seed": session.seed,
    }


def _advance(session: Session, queried: float, response: int,
             timestamp: Optional[float], fit: FitResult,
             comment: Optional[str] = None) -> None:
    """Fold one completed refit into the session. Shared by live and replay."""
    if comment:
        session.comments.append((len(session.history) + 1, comment))
    session.history = session.history.append(
        queried, response, fit.eui_best, ci95=fit.xbest.ci95, timestamp=timestamp
    )
    session.posterior_summary = fit.xbest
    session.eui_map = fit.eui_map
    session.quantiles = fit.quantiles
    stop, reason = should_stop(session.history, fit.xbest, session.budget)
    if stop:
        session.stop_reason = reason
        session.status = (
            "budget_exhausted" if reason == "budget_exhausted" else "converged"
        )
    else:
        session.current_query = fit.next_temp
        session.status = "awaiting_response"


@dataclass(frozen=True)
class RecoveryResult:
    sessions: list
    unrecoverable: dict  # id -> reason


def _effective_responses(records: list) -> list:
    """Response records that actually mutated state, in application order.

    A response whose refit failed is followed by a fit_failed marker for the
    same step; the marker voids that attempt so the logged retry takes its
    place. Anything else out of sequence means the log is inconsistent.
    """
    effective = []
    for rec in records:
        kind = rec.get("kind")
        if kind == "response":
            step = int(rec["step"])
            if step != len(effective) + 1:
                raise ValueError(f"gap in step sequence at {step}")
            effective.append(rec)
        elif kind == "fit_failed":
            if int(rec["step"]) != len(effective):
                raise ValueError("failure marker without a matching attempt")
            effective.pop()
        else:
            raise ValueError(f"unexpected record kind {kind!r}")
    return effective


def _replay_records(records: list, fit_fn: FitFn) -> Session:
    """Session rebuilt from one log. Raises ValueError on bad logs."""
    if not records or records[0].get("kind") != "create":
        raise ValueError("log must start with a create record")
    head = records[0]
    session = Session(
        id=head["id"],
        created_at=head["created_at"],
        status="awaiting_response",
        budget=int(head["budget"]),
        seed=int(head["seed"]),
        current_query=float(head["init_temp"]),
    )
    pairs = ()
    for rec in _effective_responses(records[1:]):
        if session.status != "awaiting_response":
            raise ValueError("response recorded after terminal status")
        queried = session.current_query
        response = int(rec["response"])
        pairs = pairs + ((queried, response),)
        fit = fit_fn(pairs, session.seed, session.budget)
        _advance(session, queried, response, rec.get("timestamp"), fit,
                 comment=rec.get("comment"))
    return session


def recover_sessions(store_dir, fit_fn: Optional[FitFn] = None) -> RecoveryResult:
    """Rebuild every session in a store by replaying its log.

    Sessions whose logs hold a corrupt or inconsistent record are reported in
    `unrecoverable` and do not affect the rest.
    """
    store = SessionStore(store_dir)
    fit_fn = fit_fn or make_fit_fn()
    sessions, bad = [], {}
    for sid in store.session_ids():
        try:
            records, corrupt_at = store.read_log(sid)
            if corrupt_at is not None:
                raise ValueError(f"corrupt record at line {corrupt_at + 1}")
            session = _replay_records(records, fit_fn)
        except Exception as exc:
            bad[sid] = str(exc)
            continue
        sessions.append(session)
    return RecoveryResult(sessions=sessions, unrecoverable=bad)


class SessionService:
    """Thread-safe registry of live sessions backed by a SessionStore.

    Per-session locks serialize mutations; refits run on the executor so
    submit returns as soon as the response is durably logged. Reads snapshot
    under the lock, which is never held across a refit.
    """

    def __init__(self, store_dir, *, fit_fn: Optional[FitFn] = None,
                 grid: Optional[VirtualGrid] = None,
                 default_budget: int = 10, default_seed: int = 0,
                 max_workers: int = 4):
        self.grid = grid or VirtualGrid()
        self.store = SessionStore(store_dir)
        self.default_budget = default_budget
        self.default_seed = default_seed
        self._fit = fit_fn or make_fit_fn(self.grid)
        self._sessions: dict = {}
        self._locks: dict = {}
        self._pending: dict = {}  # id -> step index of the in-flight refit
        self._registry_lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=max_workers)
        recovered = recover_sessions(store_dir, self._fit)
        for s in recovered.sessions:
            self._sessions[s.id] = s
            self._locks[s.id] = threading.RLock()
        self.unrecoverable = recovered.unrecoverable

    # -- lookup ---------------------------------------------------------

    def _entry(self, session_id: str) -> tuple:
        with self._registry_lock:
            if session_id not in self._sessions:
                raise UnknownSessionError(session_id)
            return self._sessions[session_id], self._locks[session_id]

    def list_sessions(self) -> list:
        with self._registry_lock:
            items = list(self._sessions.values())
        items.sort(key=lambda s: (s.created_at, s.id))
        return [self.get_state(s.id) for s in items]

    def get_state(self, session_id: str) -> dict:
        session, lock = self._entry(session_id)
        with lock:
            return session_to_json(session)

    def get_posterior(self, session_id: str) -> dict:
        session, lock = self._entry(session_id)
        with lock:
            return posterior_to_json(session, self.grid)

    def get_eui(self, session_id: str) -> dict:
        session, lock = self._entry(session_id)
        with lock:
            eui = None if session.eui_map is None else {
                str(t): v for t, v in session.eui_map.items()
            }
            return {"schema": SCHEMA_VERSION, "step": len(session.history),
                    "eui": eui}

    # -- mutation -------------------------------------------------------

    def create_session(self, init_temp: float, budget: Optional[int] = None,
                       seed: Optional[int] = None) -> dict:
        if not TEMP_RANGE[0] <= init_temp <= TEMP_RANGE[1]:
            raise RequestError(f"init_temp must be within {TEMP_RANGE}")
        budget = self.default_budget if budget is None else int(budget)
        if budget < 1:
            raise RequestError("budget must be >= 1")
        session = Session(
            id=uuid.uuid4().hex[:12],
            created_at=time.time(),
            status="awaiting_response",
            budget=budget,
            seed=self.default_seed if seed is None else int(seed),
            current_query=float(init_temp),
        )
        self.store.append(session.id, _create_record(session, float(init_temp)))
        with self._registry_lock:
            self._sessions[session.id] = session
            self._locks[session.id] = threading.RLock()
        return session_to_json(session)

    def submit_response(self, session_id: str, step: int, response: int,
                        comment: Optional[str] = None) -> dict:
        session, lock = self._entry(session_id)
        with lock:
            if step < 1:
                raise RequestError("step token must be >= 1")
            # replayed token: the step is already recorded or in flight
            if step <= len(session.history) or step == self._pending.get(session_id):
                return session_to_json(session)
            if session.status != "awaiting_response":
                raise ConflictError(f"session is {session.status}")
            if step != len(session.history) + 1:
                raise ConflictError(
                    f"expected step {len(session.history) + 1}, got {step}"
                )
            if response not in (-1, 0, 1):
                raise RequestError("response must be -1, 0, or 1")
            timestamp = time.time()
            record = {
                "schema": SCHEMA_VERSION,
                "kind": "response",
                "step": step,
                "response": int(response),
                "comment": comment,
                "timestamp": timestamp,
            }
            self.store.append(session_id, record)
            session.status = "computing"
            session.error = None
            self._pending[session_id] = step
            queried = session.current_query
            self._executor.submit(
                self._run_fit, session_id, step, queried, int(response),
                comment, timestamp,
            )
            return session_to_json(session)

    def _run_fit(self, session_id: str, step: int, queried: float,
                 response: int, comment: Optional[str],
                 timestamp: float) -> None:
        session, lock = self._entry(session_id)
        pairs = tuple(
            (s.query_temp, s.response) for s in session.history.steps
        ) + ((queried, response),)
        try:
            fit = self._fit(pairs, session.seed, session.budget)
        except Exception as exc:  # surfaced to clients, session stays usable
            with lock:
                # void the logged attempt so replay skips it, then reopen
                self.store.append(session_id, {
                    "schema": SCHEMA_VERSION,
                    "kind": "fit_failed",
                    "step": step,
                    "timestamp": time.time(),
                })
                session.error = f"{type(exc).__name__}: {exc}"
                session.status = "awaiting_response"
                self._pending.pop(session_id, None)
            return
        with lock:
            _advance(session, queried, response, timestamp, fit,
                     comment=comment)
            self._pending.pop(session_id, None)

    def wait_idle(self, session_id: str, timeout: float = 60.0) -> dict:
        """Poll until no refit is in flight; test and CLI convenience."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            state = self.get_state(session_id)
            if state["status"] != "computing":
                return state
            time.sleep(0.02)
        raise TimeoutError(f"session {session_id} still computing")

    def shutdown(self) -> None:
        self._executor.shutdown(wait=True)


def create_app(service: SessionService, static_dir=None):
    """FastAPI app exposing the session API, optionally with console assets."""
    from fastapi import FastAPI, HTTPException
    from pydantic import BaseModel

    class CreateBody(BaseModel):
        init_temp: float
        budget: Optional[int] = None
        seed: Optional[int] = None

    class ResponseBody(BaseModel):
        step: int
        response: int
        comment: Optional[str] = None

    app = FastAPI(title="therm-elicit sessions")

    def guard(fn, *args):
        try:
            return fn(*args)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except RequestError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/sessions", status_code=201)
    def create(body: CreateBody):
        return guard(service.create_session, body.init_temp, body.budget,
                     body.seed)

    @app.get("/sessions")
    def index():
        return service.list_sessions()

    @app.get("/sessions/{sid}")
    def show(sid: str):
        return guard(service.get_state, sid)

    @app.post("/sessions/{sid}/response")
    def respond(sid: str, body: ResponseBody):
        return guard(service.submit_response, sid, body.step, body.response,
                     body.comment)

    @app.get("/sessions/{sid}/eui")
    def eui(sid: str):
        return guard(service.get_eui, sid)

    @app.get("/sessions/{sid}/posterior")
    def posterior(sid: str):
        return guard(service.get_posterior, sid)

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="console")
    return app
