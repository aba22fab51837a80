//! Websocket render service. See `docs/protocol.md` for the wire format.

use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use anyhow::{Context, Result};
use gaussblend::anim::gba::load_avatar;
use gaussblend::anim::{Pose, RuntimeAvatar};
use gaussblend::math::Vec3;
use gaussblend::render::image::encode_png;
use gaussblend::render::{render_tiled, Camera, DEFAULT_TILE_SIZE};
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::commands::avatar_bounds;
use crate::ServeArgs;

pub const MAX_RESOLUTION: u32 = 1024;
const DEFAULT_FOV_Y: f64 = 0.6;

struct Served {
    avatar: RuntimeAvatar,
    joint_names: Vec<String>,
    target: Vec3,
    radius: f64,
}

#[derive(Serialize)]
struct Meta<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    k: usize,
    j: usize,
    joint_names: &'a [String],
    n: usize,
    mouth: usize,
    sh_degree: usize,
    max_resolution: u32,
    target: [f64; 3],
    default_dist: f64,
    default_fov_y: f64,
}

#[derive(Serialize)]
struct ErrorReply {
    #[serde(rename = "type")]
    kind: &'static str,
    id: Option<u64>,
    message: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Orbit {
    yaw: f64,
    pitch: f64,
    dist: f64,
    #[serde(default)]
    fov_y: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(rename = "type")]
    kind: String,
    id: u64,
    psi: Vec<f64>,
    theta: Pose,
    cam: Orbit,
    width: u32,
    height: u32,
}

pub fn run(a: ServeArgs) -> Result<()> {
    let avatar = load_avatar(&a.avatar)?;
    let (target, radius) = avatar_bounds(&avatar);
    let served = Arc::new(Served {
        joint_names: avatar.skeleton.names().to_vec(),
        avatar: RuntimeAvatar::from_avatar(&avatar),
        target,
        radius,
    });
    drop(avatar);
    let listener = TcpListener::bind((a.bind.as_str(), a.port))
        .with_context(|| format!("binding {}:{}", a.bind, a.port))?;
    let addr = listener.local_addr()?;
    println!("listening on ws://{addr}");
    std::io::stdout().flush()?;
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let served = Arc::clone(&served);
        std::thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = serve_connection(stream, &served) {
                log::info!("connection {peer:?} ended: {e:#}");
            }
        });
    }
    Ok(())
}

fn serve_connection(stream: TcpStream, s: &Served) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake: {e}"))?;
    let meta = Meta {
        kind: "meta",
        k: s.avatar.blendshape_count(),
        j: s.avatar.joint_count(),
        joint_names: &s.joint_names,
        n: s.avatar.len(),
        mouth: s.avatar.mouth_len(),
        sh_degree: s.avatar.sh_degree(),
        max_resolution: MAX_RESOLUTION,
        target: s.target.into(),
        default_dist: 3.0 * s.radius,
        default_fov_y: DEFAULT_FOV_Y,
    };
    ws.send(Message::text(serde_json::to_string(&meta)?))?;
    let mut scratch = Vec::new();
    loop {
        let Some(first) = next_request(&mut ws, true)? else {
            return Ok(());
        };
        let latest = coalesce(&mut ws, first)?;
        let reply = match handle(&latest, s, &mut scratch) {
            Ok((id, png)) => {
                let mut frame = Vec::with_capacity(8 + png.len());
                frame.extend_from_slice(&id.to_le_bytes());
                frame.extend_from_slice(&png);
                Message::binary(frame)
            }
            Err((id, message)) => Message::text(serde_json::to_string(&ErrorReply {
                kind: "error",
                id,
                message,
            })?),
        };
        ws.send(reply)?;
    }
}

/// Next request payload; `None` once the peer has closed. Binary messages
/// are passed through as text so they get an error reply.
fn next_request(ws: &mut WebSocket<TcpStream>, blocking: bool) -> Result<Option<String>> {
    loop {
        match ws.read() {
            Ok(Message::Text(t)) => return Ok(Some(t.to_string())),
            Ok(Message::Binary(b)) => return Ok(Some(String::from_utf8_lossy(&b).into_owned())),
            Ok(Message::Close(_)) => return Ok(None),
            Ok(_) => continue,
            Err(tungstenite::Error::Io(e)) if !blocking && e.kind() == std::io::ErrorKind::WouldBlock => {
                return Ok(None)
            }
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
}

/// Drops every request already queued behind `first` except the newest.
fn coalesce(ws: &mut WebSocket<TcpStream>, first: String) -> Result<String> {
    ws.get_mut().set_nonblocking(true)?;
    let mut latest = first;
    let drained = loop {
        match next_request(ws, false) {
            Ok(Some(m)) => latest = m,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    ws.get_mut().set_nonblocking(false)?;
    drained.map(|()| latest)
}

type Reply = std::result::Result<(u64, Vec<u8>), (Option<u64>, String)>;

fn handle(text: &str, s: &Served, scratch: &mut Vec<f32>) -> Reply {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| (None, format!("malformed JSON: {e}")))?;
    let id = value.get("id").and_then(|v| v.as_u64());
    let err = |m: String| (id, m);
    if value.get("type").and_then(|t| t.as_str()) != Some("params") {
        return Err(err("expected a message with type \"params\"".into()));
    }
    let p: Params = serde_json::from_value(value).map_err(|e| err(format!("invalid params: {e}")))?;
    debug_assert_eq!(p.kind, "params");
    if p.width == 0 || p.height == 0 {
        return Err(err(format!("resolution {}x{} is empty", p.width, p.height)));
    }
    let (w, h) = (p.width.min(MAX_RESOLUTION), p.height.min(MAX_RESOLUTION));
    let k = s.avatar.blendshape_count();
    if p.psi.len() != k {
        return Err(err(format!("psi has {} entries, the avatar has K = {k}", p.psi.len())));
    }
    if p.psi.iter().any(|v| !v.is_finite()) {
        return Err(err("psi has non-finite entries".into()));
    }
    p.theta.validate(s.avatar.joint_count()).map_err(|e| err(e.to_string()))?;
    let c = &p.cam;
    let fov = c.fov_y.unwrap_or(DEFAULT_FOV_Y);
    if ![c.yaw, c.pitch, c.dist, fov].iter().all(|v| v.is_finite()) || c.dist <= 0.0 {
        return Err(err("camera needs finite yaw and pitch and a positive dist".into()));
    }
    if fov <= 0.0 || fov >= std::f64::consts::PI {
        return Err(err(format!("fov_y {fov} outside (0, pi)")));
    }
    let cam = Camera::orbit(s.target, c.yaw, c.pitch, c.dist, fov, w, h);
    let psi: Vec<f32> = p.psi.iter().map(|&v| v as f32).collect();
    let rendered = s
        .avatar
        .synthesize(&psi, &p.theta, scratch)
        .and_then(|g| render_tiled(&g, &cam, [0.0; 3], DEFAULT_TILE_SIZE))
        .map_err(|e| err(e.to_string()))?;
    let png = encode_png(rendered.width, rendered.height, &rendered.color).map_err(|e| err(e.to_string()))?;
    Ok((p.id, png))
}
