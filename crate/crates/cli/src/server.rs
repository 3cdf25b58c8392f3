use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::Value;
use tower_http::services::ServeDir;

use prescriptor::costs::CostKind;
use prescriptor::service::{ApiError, ApiResult, PrescribeRequest, ServiceState, SimulateRequest};

type Shared = Arc<ServiceState>;

struct Reply(ApiResult);

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        match self.0 {
            Ok(v) => (StatusCode::OK, Json(v)).into_response(),
            Err(e) => {
                let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
                (status, Json(e.body())).into_response()
            }
        }
    }
}

async fn blocking<F>(state: Shared, f: F) -> Reply
where
    F: FnOnce(&ServiceState) -> ApiResult + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&state)).await {
        Ok(r) => Reply(r),
        Err(e) => Reply(Err(ApiError::new(500, e.to_string()))),
    }
}

#[derive(Deserialize, Default)]
struct KindQuery {
    region: Option<String>,
    cost_model: Option<CostKind>,
    seed: Option<u64>,
}

fn region_param(q: &KindQuery) -> Result<String, ApiError> {
    q.region
        .clone()
        .ok_or_else(|| ApiError::bad_request("missing `region` query parameter"))
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Value) -> Result<T, ApiError> {
    serde_json::from_value(body.clone()).map_err(|e| ApiError::bad_request(e.to_string()))
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/regions", get(|State(s): State<Shared>| blocking(s, |s| s.regions())))
        .route("/api/weight-sets", get(|State(s): State<Shared>| blocking(s, |s| s.weight_sets())))
        .route(
            "/api/cost-models",
            get(|State(s): State<Shared>, Query(q): Query<KindQuery>| blocking(s, move |s| s.cost_models(q.seed))),
        )
        .route(
            "/api/prescribe",
            post(|State(s): State<Shared>, Json(body): Json<Value>| {
                blocking(s, move |s| s.prescribe(&parse_json::<PrescribeRequest>(&body)?))
            }),
        )
        .route(
            "/api/simulate",
            post(|State(s): State<Shared>, Json(body): Json<Value>| {
                blocking(s, move |s| s.simulate(&parse_json::<SimulateRequest>(&body)?))
            }),
        )
        .route(
            "/api/evaluations",
            get(|State(s): State<Shared>, Query(q): Query<KindQuery>| {
                blocking(s, move |s| s.evaluations(&region_param(&q)?, q.cost_model))
            }),
        )
        .route(
            "/api/pareto",
            get(|State(s): State<Shared>, Query(q): Query<KindQuery>| {
                blocking(s, move |s| s.pareto(&region_param(&q)?, q.cost_model))
            }),
        )
        .route(
            "/api/evaluations/{region}",
            get(
                |State(s): State<Shared>, UrlPath(region): UrlPath<String>, Query(q): Query<KindQuery>| {
                    blocking(s, move |s| s.evaluations(&region, q.cost_model))
                },
            ),
        )
        .route(
            "/api/pareto/{region}",
            get(
                |State(s): State<Shared>, UrlPath(region): UrlPath<String>, Query(q): Query<KindQuery>| {
                    blocking(s, move |s| s.pareto(&region, q.cost_model))
                },
            ),
        )
        .with_state(state)
}

pub fn serve(state: Shared, addr: &str, static_dir: Option<&Path>) -> Result<()> {
    let addr: SocketAddr = addr.parse().with_context(|| format!("bad address `{addr}`"))?;
    let mut app = router(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}
