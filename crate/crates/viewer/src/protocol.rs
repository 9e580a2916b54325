//! Wire messages and per-connection state.

use serde::{Deserialize, Serialize};

use v3dg_core::model::{focal_from_fov, Camera, Vec3};
use v3dg_core::pipeline::RenderMode;
use v3dg_core::select::{LoadedScene, Tolerance};
use v3dg_core::{Error, Result};

pub const MAX_WIDTH: u32 = 1920;
pub const MAX_HEIGHT: u32 = 1080;
/// Horizontal field of view of every session camera.
pub const FOV_X: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ClientMessage {
    SetCamera {
        position: [f64; 3],
        target: [f64; 3],
        #[serde(default = "z_up")]
        up: [f64; 3],
    },
    SetTolerance {
        tau: f64,
    },
    SetMode {
        mode: String,
    },
    SetResolution {
        w: u32,
        h: u32,
    },
    RequestFrame,
}

fn z_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameStats {
    pub selected_count: usize,
    pub resident_count: usize,
    pub percentage: f64,
    pub select_ms: f64,
    pub render_ms: f64,
    pub tau: f64,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum ServerMessage {
    Frame { frame_id: u64, stats: FrameStats, png: String },
    Error { message: String },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }

    /// Error reply for a failed operation; argument errors are sent without
    /// their category prefix.
    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Argument(m) => Self::error(m.clone()),
            other => Self::error(other.to_string()),
        }
    }
}

/// Everything a frame depends on. One per connection.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub tolerance: Tolerance,
    pub mode: RenderMode,
    pub width: u32,
    pub height: u32,
}

impl SessionState {
    /// 640x360 at tau 2048, looking at the scene from above one corner of
    /// its bounding box.
    pub fn for_scene(scene: &LoadedScene) -> Self {
        let (lo, hi) = scene.bounds().unwrap_or((Vec3::repeat(-1.0), Vec3::repeat(1.0)));
        let target = (lo + hi) / 2.0;
        let reach = ((hi - lo).norm() / 2.0).max(1e-3);
        Self {
            position: target + Vec3::new(1.0, 0.6, 0.8).normalize() * reach * 2.5,
            target,
            up: Vec3::z(),
            tolerance: Tolerance::new(2048.0).expect("positive"),
            mode: RenderMode::Lod,
            width: 640,
            height: 360,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let f = focal_from_fov(self.width, FOV_X);
        Camera::look_at(self.position, self.target, self.up, self.width, self.height, f, f)
    }

    /// Apply one message. On error the state is left as it was.
    pub fn apply(&mut self, msg: &ClientMessage) -> Result<()> {
        let mut next = self.clone();
        match msg {
            ClientMessage::SetCamera { position, target, up } => {
                next.position = Vec3::from(*position);
                next.target = Vec3::from(*target);
                next.up = Vec3::from(*up);
            }
            ClientMessage::SetTolerance { tau } => next.tolerance = Tolerance::new(*tau)?,
            ClientMessage::SetMode { mode } => next.mode = mode.parse()?,
            ClientMessage::SetResolution { w, h } => {
                if !(1..=MAX_WIDTH).contains(w) || !(1..=MAX_HEIGHT).contains(h) {
                    return Err(Error::Argument(format!(
                        "resolution {w}x{h} outside 1x1..={MAX_WIDTH}x{MAX_HEIGHT}"
                    )));
                }
                next.width = *w;
                next.height = *h;
            }
            ClientMessage::RequestFrame => {}
        }
        next.camera()?;
        *self = next;
        Ok(())
    }
}

pub fn parse_client_message(text: &str) -> Result<ClientMessage> {
    serde_json::from_str(text).map_err(|e| Error::Argument(format!("malformed message: {e}")))
}
