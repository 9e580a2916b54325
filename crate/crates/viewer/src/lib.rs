//! Live frame server: one render worker per WebSocket session, PNG frames
//! with selection statistics, and a small HTTP surface for the browser UI.

pub mod protocol;

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tower_http::services::ServeDir;

use v3dg_core::pipeline::{render_frame, FrameRequest, DEFAULT_CLIP};
use v3dg_core::raster::RasterConfig;
use v3dg_core::select::{CullMode, LoadedScene};
use v3dg_core::Result;

pub use protocol::{parse_client_message, ClientMessage, FrameStats, ServerMessage, SessionState};

pub struct Viewer {
    pub scene: LoadedScene,
    pub raster: RasterConfig,
    /// Served at `/` when set (the browser console's build output).
    pub static_dir: Option<PathBuf>,
}

impl Viewer {
    pub fn new(scene: LoadedScene) -> Self {
        Self {
            scene,
            raster: RasterConfig::default(),
            static_dir: None,
        }
    }
}

/// Scene summary returned by `GET /scene`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneInfo {
    pub assets: Vec<String>,
    pub instance_count: usize,
    pub resident_count: usize,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneInfo {
    pub fn of(scene: &LoadedScene) -> Self {
        Self {
            assets: scene.scene.assets.keys().cloned().collect(),
            instance_count: scene.scene.instances.len(),
            resident_count: scene.resident_count(),
            bbox: scene.bounds().map(|(lo, hi)| BBox {
                min: lo.into(),
                max: hi.into(),
            }),
        }
    }
}

/// Render the frame `state` describes. Culling is off so that percentages
/// are fractions of the whole scene and vanilla mode reads 100%.
pub fn render_state(scene: &LoadedScene, state: &SessionState, raster: &RasterConfig, frame_id: u64) -> Result<ServerMessage> {
    let cam = state.camera()?;
    let req = FrameRequest {
        tolerance: state.tolerance,
        mode: state.mode,
        clip: DEFAULT_CLIP,
        cull: CullMode::Off,
    };
    let frame = render_frame(scene, &cam, &req, raster)?;
    let png = frame.image.to_png()?;
    Ok(ServerMessage::Frame {
        frame_id,
        stats: FrameStats {
            selected_count: frame.rendered_count,
            resident_count: frame.selection.resident_count,
            percentage: frame.percentage(),
            select_ms: frame.selection.select_ms,
            render_ms: frame.render_ms,
            tau: state.tolerance.get(),
            mode: state.mode.to_string(),
        },
        png: base64::engine::general_purpose::STANDARD.encode(png),
    })
}

pub fn router(viewer: Arc<Viewer>) -> Router {
    let static_dir = viewer.static_dir.clone();
    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/scene", get(scene_info))
        .with_state(viewer);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

pub async fn serve(listener: TcpListener, viewer: Arc<Viewer>) -> std::io::Result<()> {
    axum::serve(listener, router(viewer)).await
}

async fn scene_info(State(viewer): State<Arc<Viewer>>) -> Json<SceneInfo> {
    Json(SceneInfo::of(&viewer.scene))
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(viewer): State<Arc<Viewer>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, viewer)).into_response()
}

async fn session(socket: WebSocket, viewer: Arc<Viewer>) {
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            let text = serde_json::to_string(&msg).expect("server messages serialize");
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });

    let mut state = SessionState::for_scene(&viewer.scene);
    let (state_tx, state_rx) = watch::channel(state.clone());
    let worker = tokio::spawn(render_worker(viewer.clone(), state_rx, out_tx.clone()));

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Binary(_) => {
                let _ = out_tx.send(ServerMessage::error("binary messages are not supported"));
                continue;
            }
            Message::Close(_) => break,
            _ => continue,
        };
        match parse_client_message(&text).and_then(|m| state.apply(&m)) {
            Ok(()) => {
                state_tx.send_replace(state.clone());
            }
            Err(e) => {
                let _ = out_tx.send(ServerMessage::from_error(&e));
            }
        }
    }
    drop(state_tx);
    let _ = worker.await;
    drop(out_tx);
    let _ = writer.await;
}

/// Renders the latest state whenever it changes. A frame whose state was
/// superseded while it rendered is dropped instead of sent.
async fn render_worker(viewer: Arc<Viewer>, mut rx: watch::Receiver<SessionState>, out: mpsc::UnboundedSender<ServerMessage>) {
    let mut frame_id = 0u64;
    while rx.changed().await.is_ok() {
        let state = rx.borrow_and_update().clone();
        let v = viewer.clone();
        let id = frame_id + 1;
        let rendered = tokio::task::spawn_blocking(move || render_state(&v.scene, &state, &v.raster, id)).await;
        if rx.has_changed().unwrap_or(false) {
            continue;
        }
        let msg = match rendered {
            Ok(Ok(frame)) => {
                frame_id = id;
                frame
            }
            Ok(Err(e)) => ServerMessage::from_error(&e),
            Err(e) => ServerMessage::error(format!("render task failed: {e}")),
        };
        if out.send(msg).is_err() {
            break;
        }
    }
}
