"""HTTP/JSON API over the trial service.

Roles: when role tokens are configured, requests authenticate with an
``x-role-token`` header.  The enrollment role may create trials, enroll
batches, and update covariates; balance reports and the raw event feed
require the statistician role (blinding hygiene: no balance peeking from
the enrollment desk, and the API never reveals thresholds or upcoming
assignments to anyone).
"""

from __future__ import annotations

import io
from typing import Optional

from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse

from ..core import InsufficientDataError, ValidationError, read_csv_records
from .service import TrialService


def _role_of(tokens: Optional[dict], token: Optional[str]) -> str:
    if not tokens:
        return "statistician"  # open mode: full access
    for role, expected in tokens.items():
        if token == expected:
            return role
    raise HTTPException(status_code=401, detail="invalid role token")


def create_app(service: TrialService,
               tokens: Optional[dict] = None) -> FastAPI:
    app = FastAPI(title="trial randomization service")

    @app.exception_handler(ValidationError)
    async def _validation(request: Request, exc: ValidationError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(InsufficientDataError)
    async def _insufficient(request: Request, exc: InsufficientDataError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(KeyError)
    async def _missing(request: Request, exc: KeyError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    def require(token: Optional[str], *allowed: str) -> str:
        role = _role_of(tokens, token)
        if role not in allowed:
            raise HTTPException(status_code=403,
                                detail=f"role {role!r} not permitted")
        return role

    @app.post("/trials", status_code=201)
    async def create_trial(body: dict,
                           x_role_token: Optional[str] = Header(None)):
        require(x_role_token, "statistician")
        for key in ("config", "schema", "planned_n"):
            if key not in body:
                raise ValidationError(f"missing field {key!r}")
        trial_id = service.create_trial(
            body["config"], body["schema"], int(body["planned_n"]),
            seed=body.get("seed"), idempotency=body.get("idempotency"))
        return {"trial_id": trial_id}

    @app.post("/trials/{trial_id}/batches")
    async def enroll_batch(trial_id: str, request: Request,
                           x_role_token: Optional[str] = Header(None)):
        require(x_role_token, "enrollment", "statistician")
        ctype = request.headers.get("content-type", "")
        if ctype.startswith("text/csv"):
            text = (await request.body()).decode()
            records = read_csv_records(io.StringIO(text))
        else:
            body = await request.json()
            records = body.get("records") if isinstance(body, dict) else body
            if not isinstance(records, list):
                raise ValidationError("body must be a record list or "
                                      "{'records': [...]}")
        return service.enroll_batch(trial_id, records)

    @app.patch("/trials/{trial_id}/participants/{pid}")
    async def update_covariate(trial_id: str, pid: str, body: dict,
                               x_role_token: Optional[str] = Header(None)):
        require(x_role_token, "enrollment", "statistician")
        if "field" not in body or "value" not in body:
            raise ValidationError("body needs 'field' and 'value'")
        return service.update_covariate(trial_id, pid, body["field"],
                                        body["value"])

    @app.get("/trials/{trial_id}/report")
    async def trial_report(trial_id: str,
                           x_role_token: Optional[str] = Header(None)):
        require(x_role_token, "statistician")
        return service.trial_report(trial_id)

    @app.get("/trials/{trial_id}/events")
    async def events(trial_id: str, since: int = -1,
                     x_role_token: Optional[str] = Header(None)):
        require(x_role_token, "statistician")
        return {"events": service.events(trial_id, since)}

    @app.get("/trials/{trial_id}/schema")
    async def trial_schema(trial_id: str,
                           x_role_token: Optional[str] = Header(None)):
        require(x_role_token, "enrollment", "statistician")
        runtime = service.trials.get(trial_id)
        if runtime is None:
            raise HTTPException(status_code=404, detail="unknown trial")
        from .service import schema_to_spec
        return {"trial_id": trial_id,
                "schema": schema_to_spec(runtime.schema),
                "planned_n": runtime.planned_N,
                "enrolled": runtime.enrolled,
                "closed": runtime.closed}

    return app
