use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{look_at, Rigid, RigidSpec, Vec3};

/// Pinhole camera with an OpenCV-style frame (x right, y down, z forward).
/// Pixel `(px, py)` covers `[px, px+1) × [py, py+1)` and is sampled at its
/// center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraSpec", into = "CameraSpec")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub world_to_camera: Rigid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub extrinsic: RigidSpec,
}

impl TryFrom<CameraSpec> for Camera {
    type Error = Error;

    fn try_from(s: CameraSpec) -> Result<Camera> {
        Camera::new(
            s.fx,
            s.fy,
            s.cx,
            s.cy,
            s.width,
            s.height,
            Rigid::try_from(&s.extrinsic)?,
        )
    }
}

impl From<Camera> for CameraSpec {
    fn from(c: Camera) -> CameraSpec {
        CameraSpec {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            extrinsic: RigidSpec::from(&c.world_to_camera),
        }
    }
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        world_to_camera: Rigid,
    ) -> Result<Self> {
        let c = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_camera,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::invalid("camera", "focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::NonFinite("principal point".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera", "width and height must be at least 1"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target` with the given vertical field of
    /// view (radians) and the principal point at the image center.
    pub fn looking_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: u32, height: u32) -> Self {
        let fy = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Self {
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            world_to_camera: look_at(eye, target, up),
        }
    }

    /// Orbit camera around `target`: `yaw` about world y, `pitch` up/down,
    /// at distance `dist`. Zero yaw and pitch looks along −z from the +z
    /// side (the avatar's front), with world +y up.
    pub fn orbit(
        target: Vec3,
        yaw: f64,
        pitch: f64,
        dist: f64,
        fov_y: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let dir = Vec3::new(pitch.cos() * yaw.sin(), pitch.sin(), pitch.cos() * yaw.cos());
        Self::looking_at(target + dir * dist, target, Vec3::y(), fov_y, width, height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.world_to_camera.inverse().translation
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let c = Camera::orbit(Vec3::zeros(), 0.3, -0.1, 0.5, 0.5, 64, 48);
        let s = serde_json::to_string(&c).unwrap();
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert!((back.center() - c.center()).norm() < 1e-12);
        assert_eq!(back.width, 64);
        let bad = s.replace("\"width\":64", "\"width\":0");
        assert!(serde_json::from_str::<Camera>(&bad).is_err());
    }

    #[test]
    fn orbit_front_view_faces_negative_z() {
        let c = Camera::orbit(Vec3::zeros(), 0.0, 0.0, 2.0, 0.5, 8, 8);
        assert!((c.center() - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        let p = c.world_to_camera.transform_point(&Vec3::zeros());
        assert!((p - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }
}
