//! Keypoint index convention and cone color classes.
//!
//! Index | Location
//! ------|-------------------------
//! 0     | stripe, top-left corner
//! 1     | stripe, top-right corner
//! 2     | stripe, bottom-left corner
//! 3     | stripe, bottom-right corner
//! 4     | base, left corner
//! 5     | base, right corner
//!
//! Left and right refer to the cone as seen upright in the image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const NUM_KEYPOINTS: usize = 6;

pub const STRIPE_TOP_LEFT: usize = 0;
pub const STRIPE_TOP_RIGHT: usize = 1;
pub const STRIPE_BOTTOM_LEFT: usize = 2;
pub const STRIPE_BOTTOM_RIGHT: usize = 3;
pub const BASE_LEFT: usize = 4;
pub const BASE_RIGHT: usize = 5;

/// Pixel coordinate `(x, y)`, origin top-left, y pointing down.
pub type Point = [f64; 2];

/// Six keypoints in index-convention order.
pub type ConeKeypoints = [Point; NUM_KEYPOINTS];

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn mean_point(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ConeColor {
    Blue,
    Yellow,
    Orange,
    Unknown,
}

impl ConeColor {
    pub const ALL: [ConeColor; 4] = [
        ConeColor::Blue,
        ConeColor::Yellow,
        ConeColor::Orange,
        ConeColor::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConeColor::Blue => "blue",
            ConeColor::Yellow => "yellow",
            ConeColor::Orange => "orange",
            ConeColor::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ConeColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConeColor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConeColor::ALL
            .into_iter()
            .find(|c| c.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown cone color `{s}`"))
    }
}
