//! Oval-track cost field: zero on the drivable band around the centerline,
//! ramping linearly to one along the track normals, one everywhere else.
//!
//! Distance to the centerline is computed analytically from the oval
//! geometry (two straights joined by two semicircles); the grid is only a
//! sampling cache for fast bilinear lookups inside the controller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of the oval course and its cost band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    /// Length of each straight segment (m).
    pub straight_len: f64,
    /// Radius of the semicircular ends (m).
    pub radius: f64,
    /// Half-width of the zero-cost band around the centerline (m).
    pub half_width: f64,
    /// Width of the linear 0 -> 1 ramp beyond the band (m).
    pub ramp_width: f64,
    /// Track center in world coordinates (m).
    pub center: [f64; 2],
    /// Rotation of the long axis from world +X (rad).
    pub heading: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        TrackSpec {
            straight_len: 3.0,
            radius: 1.0,
            half_width: 0.25,
            ramp_width: 0.5,
            center: [0.0, 0.0],
            heading: 0.0,
        }
    }
}

/// Which part of the oval a point lies beside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sector {
    TopStraight,
    BottomStraight,
    RightArc,
    LeftArc,
}

impl TrackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.straight_len <= 0.0
            || self.radius <= 0.0
            || self.half_width <= 0.0
            || self.ramp_width <= 0.0
        {
            return Err(Error::InvalidArg(format!(
                "degenerate track spec: {self:?}"
            )));
        }
        Ok(())
    }

    /// World point into the track frame (long axis along +X).
    pub fn to_frame(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let (s, c) = self.heading.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Exact distance from a world point to the oval centerline.
    pub fn centerline_distance(&self, x: f64, y: f64) -> f64 {
        let (tx, ty) = self.to_frame(x, y);
        let half = self.straight_len / 2.0;
        if tx > half {
            ((tx - half).hypot(ty) - self.radius).abs()
        } else if tx < -half {
            ((tx + half).hypot(ty) - self.radius).abs()
        } else {
            (ty - self.radius).abs().min((ty + self.radius).abs())
        }
    }

    /// Cost of being `d` meters from the centerline.
    pub fn cost_at_distance(&self, d: f64) -> f64 {
        if d <= self.half_width {
            0.0
        } else if d < self.half_width + self.ramp_width {
            (d - self.half_width) / self.ramp_width
        } else {
            1.0
        }
    }

    /// Exact (grid-free) track cost at a world point.
    pub fn exact_cost(&self, x: f64, y: f64) -> f64 {
        self.cost_at_distance(self.centerline_distance(x, y))
    }

    pub fn sector(&self, x: f64, y: f64) -> Sector {
        let (tx, ty) = self.to_frame(x, y);
        let half = self.straight_len / 2.0;
        if tx > half {
            Sector::RightArc
        } else if tx < -half {
            Sector::LeftArc
        } else if ty >= 0.0 {
            Sector::TopStraight
        } else {
            Sector::BottomStraight
        }
    }

    /// Centerline length of one lap.
    pub fn lap_length(&self) -> f64 {
        2.0 * self.straight_len + 2.0 * std::f64::consts::PI * self.radius
    }

    /// Point and heading at clockwise arc position `s` in [0, lap_length),
    /// starting at the left end of the top straight. Headings are unwrapped
    /// and decrease by 2*pi per lap.
    pub fn centerline_point(&self, s: f64) -> ([f64; 2], f64) {
        let len = self.lap_length();
        let s = s.rem_euclid(len);
        let half = self.straight_len / 2.0;
        let arc = std::f64::consts::PI * self.radius;
        let (tx, ty, th) = if s < self.straight_len {
            (-half + s, self.radius, 0.0)
        } else if s < self.straight_len + arc {
            let a = (s - self.straight_len) / self.radius;
            (half + self.radius * a.sin(), self.radius * a.cos(), -a)
        } else if s < 2.0 * self.straight_len + arc {
            let d = s - self.straight_len - arc;
            (half - d, -self.radius, -std::f64::consts::PI)
        } else {
            let a = (s - 2.0 * self.straight_len - arc) / self.radius;
            (
                -half - self.radius * a.sin(),
                -self.radius * a.cos(),
                -std::f64::consts::PI - a,
            )
        };
        let (sn, cs) = self.heading.sin_cos();
        (
            [
                self.center[0] + cs * tx - sn * ty,
                self.center[1] + sn * tx + cs * ty,
            ],
            th + self.heading,
        )
    }
}

/// Sampled cost grid. Values live at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    /// Cell edge length (m).
    pub resolution: f64,
    /// World coordinates of the grid's lower-left corner (m).
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Samples the analytic oval cost onto a grid covering the track plus a
/// margin. `resolution` must resolve the ramp with at least 4 cells.
pub fn build_oval_costmap(spec: &TrackSpec, resolution: f64) -> Result<Costmap> {
    spec.validate()?;
    if resolution <= 0.0 || resolution > spec.ramp_width / 4.0 {
        return Err(Error::InvalidArg(format!(
            "costmap resolution {resolution} must be in (0, ramp_width/4 = {}]",
            spec.ramp_width / 4.0
        )));
    }
    let margin = 0.5;
    let reach = spec.radius + spec.half_width + spec.ramp_width + margin;
    let ext_x = spec.straight_len / 2.0 + reach;
    let ext_y = reach;
    // Rotation can mix the extents; cover the rotated bounding box.
    let (s, c) = spec.heading.sin_cos();
    let world_ext_x = (c.abs() * ext_x + s.abs() * ext_y).max(ext_y);
    let world_ext_y = (s.abs() * ext_x + c.abs() * ext_y).max(ext_y);
    let width = (2.0 * world_ext_x / resolution).ceil() as usize;
    let height = (2.0 * world_ext_y / resolution).ceil() as usize;
    let origin = [
        spec.center[0] - world_ext_x,
        spec.center[1] - world_ext_y,
    ];
    let mut data = vec![0.0; width * height];
    for j in 0..height {
        let y = origin[1] + (j as f64 + 0.5) * resolution;
        for i in 0..width {
            let x = origin[0] + (i as f64 + 0.5) * resolution;
            data[j * width + i] = spec.exact_cost(x, y);
        }
    }
    Ok(Costmap {
        resolution,
        origin,
        width,
        height,
        data,
    })
}

impl Costmap {
    fn cell(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.width + i]
    }

    /// Bilinear cost lookup. Anything outside the mapped area costs 1 so
    /// the controller never profits from leaving it.
    pub fn track_cost(&self, x: f64, y: f64) -> f64 {
        let w = self.width as f64 * self.resolution;
        let h = self.height as f64 * self.resolution;
        let lx = x - self.origin[0];
        let ly = y - self.origin[1];
        if lx < 0.0 || ly < 0.0 || lx >= w || ly >= h {
            return 1.0;
        }
        // Continuous cell-center coordinates, clamped so border queries use
        // the edge cells.
        let gx = (lx / self.resolution - 0.5).clamp(0.0, (self.width - 1) as f64);
        let gy = (ly / self.resolution - 0.5).clamp(0.0, (self.height - 1) as f64);
        let i0 = gx.floor() as usize;
        let j0 = gy.floor() as usize;
        let i1 = (i0 + 1).min(self.width - 1);
        let j1 = (j0 + 1).min(self.height - 1);
        let fx = gx - i0 as f64;
        let fy = gy - j0 as f64;
        let top = self.cell(i0, j1) * (1.0 - fx) + self.cell(i1, j1) * fx;
        let bot = self.cell(i0, j0) * (1.0 - fx) + self.cell(i1, j0) * fx;
        bot * (1.0 - fy) + top * fy
    }

    /// Renders the grid as a binary PGM (white = cost 0, black = cost 1),
    /// top row at maximum Y.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                let c = self.cell(i, j).clamp(0.0, 1.0);
                out.push(((1.0 - c) * 255.0).round() as u8);
            }
        }
        out
    }

    /// Writes the PGM image plus a JSON sidecar with resolution and origin.
    pub fn save_pgm(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        let meta = serde_json::json!({
            "resolution": self.resolution,
            "origin": self.origin,
            "width": self.width,
            "height": self.height,
        });
        std::fs::write(
            path.with_extension("json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Ok(())
    }
}
