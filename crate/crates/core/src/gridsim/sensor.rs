use serde::{Deserialize, Serialize};

use super::{Cell, Pose, World};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub rays: usize,
    /// Total field of view in degrees, centred on the heading.
    pub fov_deg: f64,
    /// Rays march samples `1..max_range`; a ray that meets nothing reports
    /// `max_range`.
    pub max_range: u32,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { rays: 15, fov_deg: 90.0, max_range: 10 }
    }
}

impl SensorConfig {
    /// Per-ray unit direction in the agent frame as `(forward, right)`,
    /// ordered left to right.
    pub fn ray_directions(&self) -> Vec<(f64, f64)> {
        let n = self.rays.max(1);
        (0..n)
            .map(|i| {
                let phi = if n == 1 {
                    0.0
                } else {
                    -self.fov_deg / 2.0 + self.fov_deg * i as f64 / (n - 1) as f64
                };
                let phi = phi.to_radians();
                (phi.cos(), phi.sin())
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub category: u8,
    pub distance: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pose: Pose,
    pub sensor: SensorConfig,
    pub depth: Vec<f32>,
    pub hits: Vec<Option<Hit>>,
}

impl Observation {
    /// True when ray `i` terminated on an obstacle (or the world edge) rather
    /// than running out of range.
    pub fn blocked(&self, i: usize) -> bool {
        self.depth[i] < self.sensor.max_range as f32
    }
}

/// Cell containing the `k`-th unit sample along a ray with agent-frame
/// direction `(forward, right)`.
pub fn ray_cell(pose: Pose, (forward, right): (f64, f64), k: u32) -> Cell {
    let (hx, hy) = pose.heading.vector();
    let (rx, ry) = pose.heading.right().vector();
    let dx = forward * hx as f64 + right * rx as f64;
    let dy = forward * hy as f64 + right * ry as f64;
    let k = k as f64;
    let px = pose.cell.0 as f64 + 0.5 + k * dx;
    let py = pose.cell.1 as f64 + 0.5 + k * dy;
    (px.floor() as i32, py.floor() as i32)
}

/// Marches each ray cell by cell. Depth is the sample index of the first
/// obstacle (or off-world cell), else `max_range`; the hit is the first
/// semantic cell strictly before that.
pub fn observe(world: &World, pose: Pose, sensor: &SensorConfig) -> Observation {
    let dirs = sensor.ray_directions();
    let mut depth = Vec::with_capacity(dirs.len());
    let mut hits = Vec::with_capacity(dirs.len());
    for &dir in &dirs {
        let mut d = sensor.max_range;
        let mut hit = None;
        for k in 1..sensor.max_range {
            let c = ray_cell(pose, dir, k);
            if !world.in_bounds(c) || world.is_obstacle(c) {
                d = k;
                break;
            }
            let cat = world.semantic_at(c);
            if hit.is_none() && cat > 0 {
                hit = Some(Hit { category: cat, distance: k as f32 });
            }
        }
        depth.push(d as f32);
        hits.push(hit);
    }
    Observation { pose, sensor: *sensor, depth, hits }
}
