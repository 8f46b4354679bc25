//! HTTP front end for the auction service. JSON over POST/GET, one mutex
//! around the service, and a background task that fires phase deadlines and
//! writes reports once an auction is over.

pub mod tools;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use openfloor_core::clock::{Clock, ManualClock, SystemClock};
use openfloor_core::domain::{AuctionConfig, AuctionId, Millis, PersonId};
use openfloor_core::engine::Registry;
use openfloor_core::report::write_reports;
use openfloor_core::rpc::{
    AdminAction, AuctionService, Directory, InviteRequest, Journal, RpcError, ServiceOptions,
};
use openfloor_core::store::{FlushPolicy, Store, DEFAULT_SNAPSHOT_EVERY};

pub type Service = AuctionService<Arc<dyn Clock>>;

/// How often the background task looks for due deadlines.
pub const TICK_EVERY: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    pub data_dir: Option<PathBuf>,
    pub directory: Directory,
    pub capacity_rps: Option<f64>,
    /// Start a manual clock at this time instead of using the wall clock.
    pub sim_clock: Option<Millis>,
}

#[derive(Clone)]
pub struct AppState {
    service: Arc<Mutex<Service>>,
    sim_clock: Option<ManualClock>,
    data_dir: Option<PathBuf>,
    reported: Arc<Mutex<BTreeSet<AuctionId>>>,
}

impl AppState {
    /// Builds the service, recovering from `data_dir` when one is given.
    pub fn build(options: ServerOptions) -> Result<AppState, String> {
        let sim_clock = options.sim_clock.map(ManualClock::new);
        let clock: Arc<dyn Clock> = match &sim_clock {
            Some(c) => Arc::new(c.clone()),
            None => Arc::new(SystemClock),
        };
        let (registry, journal) = match &options.data_dir {
            Some(dir) => {
                let (store, registry, recovery) =
                    Store::open(dir, FlushPolicy::Batch, DEFAULT_SNAPSHOT_EVERY)
                        .map_err(|e| format!("{}: {e}", dir.display()))?;
                tracing::info!(
                    dir = %dir.display(),
                    auctions = registry.len(),
                    snapshot = ?recovery.snapshot_seq,
                    replayed = recovery.records_replayed,
                    torn_bytes = recovery.torn_bytes,
                    "recovered"
                );
                (registry, Journal::Dir(store))
            }
            None => (Registry::new(), Journal::Memory),
        };
        let mut service_options = ServiceOptions::default();
        if let Some(rps) = options.capacity_rps {
            service_options.capacity_rps = rps;
        }
        let service = AuctionService::new(
            clock,
            options.directory,
            registry,
            journal,
            service_options,
        );
        Ok(AppState {
            service: Arc::new(Mutex::new(service)),
            sim_clock,
            data_dir: options.data_dir,
            // rewritten once per start; report files are deterministic
            reported: Arc::default(),
        })
    }

    pub fn service(&self) -> MutexGuard<'_, Service> {
        self.service.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Fires due deadlines and writes reports for auctions that just ended.
    pub fn tick(&self) {
        let mut service = self.service();
        if let Err(e) = service.tick_due() {
            tracing::error!(error = %e, "tick failed");
        }
        let Some(dir) = &self.data_dir else {
            return;
        };
        let mut reported = self.reported.lock().unwrap_or_else(|e| e.into_inner());
        for (id, state) in service.registry().iter() {
            if state.phase.is_terminal() && !reported.contains(id) {
                match write_reports(dir, state) {
                    Ok(files) => tracing::info!(auction = %id, files = files.len(), "reports written"),
                    Err(e) => tracing::error!(auction = %id, error = %e, "report failed"),
                }
                reported.insert(id.clone());
            }
        }
    }
}

pub struct ApiError(RpcError);

impl From<RpcError> for ApiError {
    fn from(e: RpcError) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &RpcError) -> StatusCode {
    match e {
        RpcError::Unauthorized | RpcError::BadCredentials => StatusCode::UNAUTHORIZED,
        RpcError::Forbidden => StatusCode::FORBIDDEN,
        RpcError::UnknownAuction { .. } => StatusCode::NOT_FOUND,
        RpcError::CursorAhead { .. } => StatusCode::CONFLICT,
        RpcError::Engine { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        RpcError::BadRequest { .. } => StatusCode::BAD_REQUEST,
        RpcError::Storage { .. } => StatusCode::SERVICE_UNAVAILABLE,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(self.0)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError(RpcError::BadRequest {
            reason: e.to_string(),
        })
    })
}

fn bearer(headers: &HeaderMap) -> Result<&str, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(ApiError(RpcError::Unauthorized))
}

pub fn app(state: AppState) -> Router {
    let mut router = Router::new()
        .route("/api/login", post(login))
        .route("/api/poll", post(poll))
        .route("/api/bid", post(bid))
        .route("/api/auctions", get(auctions))
        .route("/api/admin/auction", post(create_auction))
        .route("/api/admin/{auction_id}/invite", post(invite))
        .route("/api/admin/{auction_id}/status", get(status))
        .route("/api/admin/{auction_id}/{action}", post(admin));
    if state.sim_clock.is_some() {
        router = router.route("/api/sim/clock", post(sim_clock));
    }
    router.with_state(state)
}

async fn login(State(st): State<AppState>, body: Bytes) -> ApiResult<impl Serialize> {
    Ok(Json(st.service().login(&parse(&body)?)?))
}

async fn poll(State(st): State<AppState>, body: Bytes) -> ApiResult<impl Serialize> {
    Ok(Json(st.service().handle_poll(&parse(&body)?)?))
}

async fn bid(State(st): State<AppState>, body: Bytes) -> ApiResult<impl Serialize> {
    Ok(Json(st.service().submit_bid(&parse(&body)?)?))
}

async fn auctions(State(st): State<AppState>, headers: HeaderMap) -> ApiResult<impl Serialize> {
    Ok(Json(st.service().list_auctions(bearer(&headers)?)?))
}

async fn create_auction(
    State(st): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl Serialize> {
    let token = bearer(&headers)?;
    let config: AuctionConfig = parse(&body)?;
    Ok(Json(st.service().create_auction(token, config)?))
}

async fn invite(
    State(st): State<AppState>,
    Path(auction_id): Path<AuctionId>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<serde_json::Value> {
    let token = bearer(&headers)?;
    let req: InviteRequest = parse(&body)?;
    st.service().invite(token, &auction_id, &req)?;
    Ok(Json(serde_json::json!({})))
}

async fn status(
    State(st): State<AppState>,
    Path(auction_id): Path<AuctionId>,
    headers: HeaderMap,
) -> ApiResult<impl Serialize> {
    Ok(Json(
        st.service().list_status(bearer(&headers)?, &auction_id)?,
    ))
}

#[derive(Deserialize)]
struct PersonBody {
    person_id: PersonId,
}

#[derive(Deserialize)]
struct ProlongBody {
    delta_ms: Millis,
}

async fn admin(
    State(st): State<AppState>,
    Path((auction_id, action)): Path<(AuctionId, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<serde_json::Value> {
    let token = bearer(&headers)?;
    let person = || parse::<PersonBody>(&body).map(|b| b.person_id);
    let action = match action.as_str() {
        "sign" => AdminAction::SignContract {
            person_id: person()?,
        },
        "password-delivered" => AdminAction::MarkPasswordDelivered {
            person_id: person()?,
        },
        "admit" => AdminAction::Admit {
            person_id: person()?,
        },
        "ban" => AdminAction::Ban {
            person_id: person()?,
        },
        "prolong" => AdminAction::Prolong {
            delta_ms: parse::<ProlongBody>(&body)?.delta_ms,
        },
        "cancel" => AdminAction::Cancel,
        "open" => AdminAction::Open,
        other => {
            return Err(ApiError(RpcError::BadRequest {
                reason: format!("unknown admin action {other}"),
            }))
        }
    };
    st.service().admin(token, &auction_id, action)?;
    Ok(Json(serde_json::json!({})))
}

#[derive(Deserialize)]
struct ClockBody {
    #[serde(default)]
    set_ms: Option<Millis>,
    #[serde(default)]
    advance_ms: Option<Millis>,
}

async fn sim_clock(State(st): State<AppState>, body: Bytes) -> ApiResult<serde_json::Value> {
    let req: ClockBody = parse(&body)?;
    let clock = st.sim_clock.as_ref().expect("route only exists with a sim clock");
    if let Some(t) = req.set_ms {
        clock.set(t);
    }
    if let Some(d) = req.advance_ms {
        clock.advance(d);
    }
    st.tick();
    Ok(Json(serde_json::json!({ "now": clock.now_ms() })))
}

/// Serves until ctrl-c, ticking in the background.
pub async fn serve(state: AppState, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let ticker = state.clone();
    tokio::spawn(async move {
        let mut every = tokio::time::interval(TICK_EVERY);
        loop {
            every.tick().await;
            ticker.tick();
        }
    });
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
