//! Pinhole intrinsics and the rectified stereo rig.
//!
//! Camera frame: x' forward (depth), y' left, z' up. Image frame: origin at
//! the top-left pixel, x to the right, y down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    #[serde(flatten)]
    pub intrinsics: CameraIntrinsics,
    /// Distance between the two camera centers, meters.
    pub baseline: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for StereoRig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 180.0,
            },
            baseline: 0.12,
            width: 640,
            height: 360,
        }
    }
}

impl StereoRig {
    pub fn validate(&self) -> Result<()> {
        let i = &self.intrinsics;
        let fail = |msg: String| Err(Error::InvalidRig(msg));
        if !(i.fx > 0.0 && i.fy > 0.0) {
            return fail(format!("focal lengths must be positive (fx={}, fy={})", i.fx, i.fy));
        }
        if !(self.baseline > 0.0) {
            return fail(format!("baseline must be positive, got {}", self.baseline));
        }
        if !(0.0..self.width as f64).contains(&i.cx) || !(0.0..self.height as f64).contains(&i.cy) {
            return fail(format!(
                "principal point ({}, {}) outside {}x{} image",
                i.cx, i.cy, self.width, self.height
            ));
        }
        Ok(())
    }

    /// Parses a calibration file: TOML with `fx`, `fy`, `cx`, `cy`,
    /// `baseline`, `width`, `height`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let rig: StereoRig = toml::from_str(text).map_err(|e| Error::InvalidRig(e.to_string()))?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("rig serializes")
    }
}
