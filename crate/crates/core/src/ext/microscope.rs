//! A simulated microscope stage and camera.
//!
//! Images are rendered from a procedurally generated world: the plane is cut
//! into square cells, each holding a few Gaussian blobs whose placement is
//! derived from the world seed and the cell coordinates. A snap shows the
//! 256 × 256 µm field centred on the stage (1 µm per pixel).

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::embed::fnv1a64;
use crate::tools::{ToolDescriptor, ToolError, ToolHandler};

pub const STAGE_LIMIT_UM: f64 = 10_000.0;
pub const IMAGE_SIZE: usize = 256;
pub const DEFAULT_WORLD_SEED: u64 = 0x5eed_cafe;
pub const SERVICE_ID: &str = "microscope-sim";

const CELL_UM: f64 = 64.0;
const MAX_SIGMA: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDescriptor {
    pub width: usize,
    pub height: usize,
    pub pixel_format: String,
    /// Base64 of `width * height` bytes, row-major.
    pub data: String,
    pub acquired_at: DateTime<Utc>,
    pub stage_position: StageState,
    pub exposure_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MicroscopeError {
    #[error("move would put the {axis} axis at {target} µm, outside ±{STAGE_LIMIT_UM} µm; stage stays at ({x}, {y})")]
    OutOfRange { axis: char, target: f64, x: f64, y: f64 },
    #[error("stage deltas must be finite numbers")]
    NonFinite,
    #[error("exposure must be between 1 and 5000 ms, got {0}")]
    BadExposure(f64),
}

impl MicroscopeError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::OutOfRange { .. } => "OutOfRange",
            Self::NonFinite => "InvalidArgument",
            Self::BadExposure(_) => "BadExposure",
        }
    }
}

impl From<MicroscopeError> for ToolError {
    fn from(e: MicroscopeError) -> Self {
        ToolError::new(e.kind(), e.to_string())
    }
}

/// The device. All operations queue on one lock, in arrival order.
#[derive(Debug)]
pub struct MicroscopeSim {
    stage: Mutex<StageState>,
    world_seed: u64,
    latency: Duration,
}

impl Default for MicroscopeSim {
    fn default() -> Self {
        Self::new(DEFAULT_WORLD_SEED)
    }
}

#[derive(Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amplitude: f64,
}

fn cell_blobs(seed: u64, cx: i64, cy: i64) -> Vec<Blob> {
    let mut key = Vec::with_capacity(24);
    key.extend_from_slice(&seed.to_le_bytes());
    key.extend_from_slice(&cx.to_le_bytes());
    key.extend_from_slice(&cy.to_le_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&key));
    let n = rng.random_range(0..=3);
    (0..n)
        .map(|_| Blob {
            x: (cx as f64 + rng.random::<f64>()) * CELL_UM,
            y: (cy as f64 + rng.random::<f64>()) * CELL_UM,
            sigma: rng.random_range(2.0..MAX_SIGMA),
            amplitude: rng.random_range(0.3..1.0),
        })
        .collect()
}

/// Renders the field of view centred on `pos`. Pure in `(seed, pos, exposure)`.
pub fn render_field(seed: u64, pos: StageState, exposure_ms: f64) -> Vec<u8> {
    let half = IMAGE_SIZE as f64 / 2.0;
    let (x0, y0) = (pos.x - half, pos.y - half);
    let margin = 3.0 * MAX_SIGMA;
    let cell = |v: f64| (v / CELL_UM).floor() as i64;
    let mut field = vec![0f64; IMAGE_SIZE * IMAGE_SIZE];
    for cy in cell(y0 - margin)..=cell(y0 + IMAGE_SIZE as f64 + margin) {
        for cx in cell(x0 - margin)..=cell(x0 + IMAGE_SIZE as f64 + margin) {
            for b in cell_blobs(seed, cx, cy) {
                let reach = 3.0 * b.sigma;
                let px_lo = ((b.x - reach - x0).floor().max(0.0)) as usize;
                let px_hi = ((b.x + reach - x0).ceil().min(IMAGE_SIZE as f64 - 1.0)).max(-1.0);
                let py_lo = ((b.y - reach - y0).floor().max(0.0)) as usize;
                let py_hi = ((b.y + reach - y0).ceil().min(IMAGE_SIZE as f64 - 1.0)).max(-1.0);
                if px_hi < 0.0 || py_hi < 0.0 {
                    continue;
                }
                let inv = 1.0 / (2.0 * b.sigma * b.sigma);
                for py in py_lo..=py_hi as usize {
                    let dy = y0 + py as f64 - b.y;
                    for px in px_lo..=px_hi as usize {
                        let dx = x0 + px as f64 - b.x;
                        field[py * IMAGE_SIZE + px] += b.amplitude * (-(dx * dx + dy * dy) * inv).exp();
                    }
                }
            }
        }
    }
    let gain = exposure_ms / 100.0;
    field
        .into_iter()
        .map(|v| ((8.0 + 200.0 * v) * gain).round().clamp(0.0, 255.0) as u8)
        .collect()
}

impl MicroscopeSim {
    pub fn new(world_seed: u64) -> Self {
        Self {
            stage: Mutex::new(StageState { x: 0.0, y: 0.0 }),
            world_seed,
            latency: Duration::ZERO,
        }
    }

    /// Adds a fixed delay to every operation, as a slow device would.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    async fn settle(&self) {
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
    }

    pub async fn position(&self) -> StageState {
        *self.stage.lock().await
    }

    pub async fn move_stage(&self, dx: f64, dy: f64) -> Result<StageState, MicroscopeError> {
        if !dx.is_finite() || !dy.is_finite() {
            return Err(MicroscopeError::NonFinite);
        }
        let mut stage = self.stage.lock().await;
        self.settle().await;
        let (tx, ty) = (stage.x + dx, stage.y + dy);
        for (axis, target) in [('x', tx), ('y', ty)] {
            if target.abs() > STAGE_LIMIT_UM {
                return Err(MicroscopeError::OutOfRange {
                    axis,
                    target,
                    x: stage.x,
                    y: stage.y,
                });
            }
        }
        *stage = StageState { x: tx, y: ty };
        Ok(*stage)
    }

    pub async fn snap_image(&self, exposure_ms: f64) -> Result<ImageDescriptor, MicroscopeError> {
        if !(1.0..=5000.0).contains(&exposure_ms) {
            return Err(MicroscopeError::BadExposure(exposure_ms));
        }
        let stage = self.stage.lock().await;
        self.settle().await;
        let pixels = render_field(self.world_seed, *stage, exposure_ms);
        Ok(ImageDescriptor {
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
            pixel_format: "grey-u8".into(),
            data: base64::engine::general_purpose::STANDARD.encode(&pixels),
            acquired_at: Utc::now(),
            stage_position: *stage,
            exposure_ms,
        })
    }
}

/// Descriptors for `move_stage` and `snap_image`.
pub fn get_schema() -> Vec<ToolDescriptor> {
    vec![
        ToolDescriptor::new(
            "move_stage",
            "Move the microscope stage by a relative offset in micrometers. Moves that would leave the \
             ±10000 µm travel range are rejected and the stage does not move.",
            json!({
                "type": "object",
                "properties": {
                    "dx": {"type": "number", "description": "Offset along x in µm"},
                    "dy": {"type": "number", "description": "Offset along y in µm"}
                },
                "required": ["dx", "dy"]
            }),
        ),
        ToolDescriptor::new(
            "snap_image",
            "Acquire a 256x256 8-bit greyscale image at the current stage position.",
            json!({
                "type": "object",
                "properties": {
                    "exposure_ms": {"type": "number", "default": 100, "description": "Exposure time, 1 to 5000 ms"}
                }
            }),
        ),
    ]
}

enum Op {
    Move,
    Snap,
}

struct MicroscopeTool {
    sim: Arc<MicroscopeSim>,
    op: Op,
}

#[async_trait]
impl ToolHandler for MicroscopeTool {
    async fn call(&self, args: Value) -> Result<Value, ToolError> {
        match self.op {
            Op::Move => {
                let dx = args["dx"].as_f64().unwrap_or(f64::NAN);
                let dy = args["dy"].as_f64().unwrap_or(f64::NAN);
                let s = self.sim.move_stage(dx, dy).await?;
                Ok(json!({"x": s.x, "y": s.y}))
            }
            Op::Snap => {
                let exposure = args["exposure_ms"].as_f64().unwrap_or(100.0);
                let img = self.sim.snap_image(exposure).await?;
                Ok(serde_json::to_value(img).expect("image serializes"))
            }
        }
    }
}

/// The simulator's tools, ready for registration.
pub fn microscope_tools(sim: Arc<MicroscopeSim>) -> Vec<(ToolDescriptor, Arc<dyn ToolHandler>)> {
    get_schema()
        .into_iter()
        .map(|d| {
            let op = if d.name == "move_stage" { Op::Move } else { Op::Snap };
            let handler: Arc<dyn ToolHandler> = Arc::new(MicroscopeTool { sim: sim.clone(), op });
            (d, handler)
        })
        .collect()
}
