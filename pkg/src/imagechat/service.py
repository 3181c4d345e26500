"""HTTP facade over trained models: catalog, chat, rank, health.

The handlers are plain functions over a ModelBundle returning
(status_code, payload); the FastAPI app is a thin wrapper so the
terminal chat loop and tests can call them in-process.
"""

import json
import threading
import uuid
from dataclasses import dataclass, field

from .data import TurnContext
from .retrieval import rank_by_scores


class ServiceError(Exception):
    def __init__(self, status, code, message):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class ChatSession:
    session_id: str
    image_id: str
    style_human: str | None
    style_model: str
    model_kind: str
    transcript: list = field(default_factory=list)  # of {speaker, text}
    lock: threading.Lock = field(default_factory=threading.Lock)

    def export(self):
        return {"session_id": self.session_id, "image_id": self.image_id,
                "style_human": self.style_human,
                "style_model": self.style_model,
                "model_kind": self.model_kind,
                "transcript": list(self.transcript)}


@dataclass
class ModelBundle:
    catalog: object                  # StyleCatalog
    features: object                 # FeatureStore
    retrieval_model: object = None
    generative_model: object = None
    candidate_stores: dict = field(default_factory=dict)  # turn -> responses
    seed: int = 0
    sessions: dict = field(default_factory=dict)

    def candidates_for_turn(self, turn, n_candidates=None):
        # long sessions draw from the deepest turn-conditioned store
        store = self.candidate_stores.get(min(turn, max(
            self.candidate_stores, default=0)))
        if not store:
            raise ServiceError(503, "no_candidates",
                               "no candidate store loaded")
        if n_candidates:
            store = store[:n_candidates]
        return store

    def respond(self, context: TurnContext, model_kind, n_candidates=None):
        if model_kind == "retrieval":
            if self.retrieval_model is None:
                raise ServiceError(503, "model_not_loaded",
                                   "retrieval model not loaded")
            cands = self.candidates_for_turn(context.turn_index, n_candidates)
            result = self.retrieval_model.rank_candidates(context, cands)
            text, score = result.ordered[0]
            return text, score, len(cands)
        if model_kind == "generative":
            if self.generative_model is None:
                raise ServiceError(503, "model_not_loaded",
                                   "generative model not loaded")
            text, logprob = self.generative_model.decode_text(context)
            return text, logprob, 0
        raise ServiceError(400, "bad_model_kind",
                           f"unknown model_kind {model_kind!r}")


def _check_context_inputs(bundle, image_id, style):
    if image_id not in bundle.features:
        raise ServiceError(404, "unknown_image",
                           f"image id not in feature store: {image_id}")
    if style not in bundle.catalog:
        raise ServiceError(404, "unknown_style",
                           f"style trait not in catalog: {style}")


def handle_catalog(bundle: ModelBundle):
    return 200, {
        "styles": [{"name": n, "class": c} for n, c in bundle.catalog.traits],
        "images": list(bundle.features.image_ids),
    }


def handle_chat(bundle: ModelBundle, payload):
    if "start_session" in payload:
        spec = payload["start_session"]
        _check_context_inputs(bundle, spec["image_id"], spec["style_model"])
        session = ChatSession(
            session_id=uuid.uuid4().hex,
            image_id=spec["image_id"],
            style_human=spec.get("style_human"),
            style_model=spec["style_model"],
            model_kind=spec.get("model_kind", "retrieval"))
        bundle.sessions[session.session_id] = session
        return 200, {"session_id": session.session_id}

    if "session_id" in payload:
        session = bundle.sessions.get(payload["session_id"])
        if session is None:
            raise ServiceError(404, "unknown_session", "no such session")
        with session.lock:
            session.transcript.append(
                {"speaker": "human", "text": payload["text"]})
            history = [t["text"] for t in session.transcript]
            context = TurnContext(
                image_id=session.image_id,
                responder_style=session.style_model,
                history=history, turn_index=len(history) + 1)
            text, score, considered = bundle.respond(
                context, payload.get("model_kind", session.model_kind),
                payload.get("n_candidates"))
            session.transcript.append({"speaker": "model", "text": text})
        return 200, {"text": text, "score_or_logprob": score,
                     "candidates_considered": considered,
                     "session_id": session.session_id}

    # stateless form
    for key in ("image_id", "style"):
        if key not in payload:
            raise ServiceError(400, "missing_field", f"missing {key!r}")
    _check_context_inputs(bundle, payload["image_id"], payload["style"])
    history = list(payload.get("history", []))
    context = TurnContext(image_id=payload["image_id"],
                          responder_style=payload["style"],
                          history=history, turn_index=len(history) + 1)
    text, score, considered = bundle.respond(
        context, payload.get("model_kind", "retrieval"),
        payload.get("n_candidates"))
    return 200, {"text": text, "score_or_logprob": score,
                 "candidates_considered": considered}


MAX_RANK_CANDIDATES = 1000


def handle_rank(bundle: ModelBundle, payload):
    cands = payload.get("candidates", [])
    if not cands:
        raise ServiceError(400, "no_candidates", "need candidates to rank")
    if len(cands) > MAX_RANK_CANDIDATES:
        raise ServiceError(400, "too_many_candidates",
                           f"limit is {MAX_RANK_CANDIDATES} per call")
    ctx = payload.get("context", {})
    _check_context_inputs(bundle, ctx.get("image_id"), ctx.get("style"))
    if bundle.retrieval_model is None:
        raise ServiceError(503, "model_not_loaded",
                           "retrieval model not loaded")
    history = list(ctx.get("history", []))
    context = TurnContext(image_id=ctx["image_id"],
                          responder_style=ctx["style"],
                          history=history, turn_index=len(history) + 1)
    scores = bundle.retrieval_model.score(context, cands)
    ranked = rank_by_scores(cands, scores)
    return 200, {"ranked": [{"text": c, "score": s} for c, s in ranked.ordered]}


def handle_session_export(bundle: ModelBundle, session_id):
    session = bundle.sessions.get(session_id)
    if session is None:
        raise ServiceError(404, "unknown_session", "no such session")
    return 200, session.export()


def create_app(bundle: ModelBundle):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="imagechat")

    @app.exception_handler(ServiceError)
    async def _service_error(request, exc):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code,
                                     "message": exc.message})

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.get("/api/catalog")
    async def catalog():
        _, payload = handle_catalog(bundle)
        return payload

    @app.post("/api/chat")
    async def chat(request: Request):
        payload = json.loads(await request.body() or b"{}")
        status, out = handle_chat(bundle, payload)
        return JSONResponse(status_code=status, content=out)

    @app.post("/api/rank")
    async def rank(request: Request):
        payload = json.loads(await request.body() or b"{}")
        status, out = handle_rank(bundle, payload)
        return JSONResponse(status_code=status, content=out)

    @app.get("/api/session/{session_id}")
    async def session_export(session_id: str):
        status, out = handle_session_export(bundle, session_id)
        return JSONResponse(status_code=status, content=out)

    return app
