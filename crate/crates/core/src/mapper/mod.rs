//! Semantic map accumulation and the egocentric view fed to the policy.
//!
//! A map holds `C + 2` boolean channels over an `M x M` grid: channel 0 is
//! explored free space, channel 1 obstacles, channel `1 + c` category `c`.

mod codec;
mod describe;
mod render;

use serde::{Deserialize, Serialize};

use crate::gridsim::{ray_cell, Cell, Observation, Pose, World};
use crate::{Error, Result};

pub use codec::{decode_map, encode_map, MAP_MAGIC, MAP_VERSION};
pub use describe::{
    bucket_for_run, category_name, describe_map, sector_of, MapDescription, Sector, DESCRIPTION_RANGE,
    NUM_BUCKETS, NUM_SECTORS, RECENT_ACTIONS, SECTOR_NAMES,
};
pub use render::{render_map, Palette};

pub const FREE: usize = 0;
pub const OBSTACLE: usize = 1;

/// Default egocentric window; odd so the agent sits on the centre cell.
pub const EGO_WINDOW: usize = 33;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Allocentric,
    Egocentric,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMap {
    num_categories: usize,
    size: usize,
    /// World cell at the map centre `(size / 2, size / 2)`.
    origin: Cell,
    frame: Frame,
    bits: Vec<u64>,
}

/// Channel holding category `cat` (1-based).
pub fn category_channel(cat: u8) -> usize {
    1 + cat as usize
}

impl SemanticMap {
    pub fn new(num_categories: usize, size: usize, origin: Cell, frame: Frame) -> SemanticMap {
        let n_bits = (num_categories + 2) * size * size;
        SemanticMap { num_categories, size, origin, frame, bits: vec![0; n_bits.div_ceil(64)] }
    }

    /// Empty allocentric map covering the whole world.
    pub fn for_world(world: &World) -> SemanticMap {
        let size = world.width.max(world.height);
        let half = (size / 2) as i32;
        SemanticMap::new(world.num_categories, size, (half, half), Frame::Allocentric)
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn channels(&self) -> usize {
        self.num_categories + 2
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn origin(&self) -> Cell {
        self.origin
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    fn bit(&self, ch: usize, row: usize, col: usize) -> usize {
        (ch * self.size + row) * self.size + col
    }

    pub fn get(&self, ch: usize, row: usize, col: usize) -> bool {
        let b = self.bit(ch, row, col);
        self.bits[b / 64] >> (b % 64) & 1 == 1
    }

    pub fn set(&mut self, ch: usize, row: usize, col: usize) {
        let b = self.bit(ch, row, col);
        self.bits[b / 64] |= 1 << (b % 64);
    }

    /// Raw bit index view, channel-major then row-major.
    pub fn get_flat(&self, b: usize) -> bool {
        self.bits[b / 64] >> (b % 64) & 1 == 1
    }

    pub fn set_flat(&mut self, b: usize) {
        self.bits[b / 64] |= 1 << (b % 64);
    }

    pub fn total_bits(&self) -> usize {
        self.channels() * self.size * self.size
    }

    /// `(row, col)` of a world cell, if inside the map.
    pub fn locate(&self, (x, y): Cell) -> Option<(usize, usize)> {
        let half = (self.size / 2) as i32;
        let col = x - (self.origin.0 - half);
        let row = y - (self.origin.1 - half);
        if col >= 0 && row >= 0 && (col as usize) < self.size && (row as usize) < self.size {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    /// World cell at `(row, col)`.
    pub fn world_cell(&self, row: usize, col: usize) -> Cell {
        let half = (self.size / 2) as i32;
        (col as i32 + self.origin.0 - half, row as i32 + self.origin.1 - half)
    }

    pub fn get_world(&self, ch: usize, cell: Cell) -> bool {
        self.locate(cell).is_some_and(|(r, c)| self.get(ch, r, c))
    }

    fn set_world(&mut self, ch: usize, cell: Cell) {
        if let Some((r, c)) = self.locate(cell) {
            self.set(ch, r, c);
        }
    }

    /// Known free or known obstacle.
    pub fn is_known(&self, cell: Cell) -> bool {
        self.get_world(FREE, cell) || self.get_world(OBSTACLE, cell)
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_channel(&self, ch: usize) -> usize {
        let n = self.size * self.size;
        (ch * n..(ch + 1) * n).filter(|&b| self.get_flat(b)).count()
    }

    /// Every bit set here is also set in `other`.
    pub fn is_subset_of(&self, other: &SemanticMap) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    /// Any cell carrying the given category.
    pub fn has_category(&self, cat: u8) -> bool {
        self.count_channel(category_channel(cat)) > 0
    }

    /// World cells carrying the given category.
    pub fn category_cells(&self, cat: u8) -> Vec<Cell> {
        let ch = category_channel(cat);
        let mut out = Vec::new();
        for row in 0..self.size {
            for col in 0..self.size {
                if self.get(ch, row, col) {
                    out.push(self.world_cell(row, col));
                }
            }
        }
        out
    }

    pub(crate) fn raw_bits(&self) -> &[u64] {
        &self.bits
    }

    /// Folds one observation into this allocentric map. Bits are only ever set.
    pub fn integrate(&mut self, obs: &Observation) -> Result<()> {
        if self.frame != Frame::Allocentric {
            return Err(Error::Precondition("update_map needs an allocentric map".into()));
        }
        let dirs = obs.sensor.ray_directions();
        if dirs.len() != obs.depth.len() {
            return Err(Error::Precondition("observation ray count disagrees with its sensor".into()));
        }
        for (i, &dir) in dirs.iter().enumerate() {
            let depth = obs.depth[i] as u32;
            for k in 0..depth {
                self.set_world(FREE, ray_cell(obs.pose, dir, k));
            }
            if obs.blocked(i) {
                self.set_world(OBSTACLE, ray_cell(obs.pose, dir, depth));
            }
            if let Some(hit) = obs.hits[i] {
                if hit.category >= 1 && hit.category as usize <= self.num_categories {
                    self.set_world(category_channel(hit.category), ray_cell(obs.pose, dir, hit.distance as u32));
                }
            }
        }
        Ok(())
    }
}

/// Returns `map` with `obs` folded in.
pub fn update_map(map: &SemanticMap, obs: &Observation) -> Result<SemanticMap> {
    let mut out = map.clone();
    out.integrate(obs)?;
    Ok(out)
}

/// Crops `window x window` around the agent and rotates it so the heading
/// points up. Cells outside the source map are empty.
pub fn egocentric_view(map: &SemanticMap, pose: Pose, window: usize) -> Result<SemanticMap> {
    if window % 2 == 0 {
        return Err(Error::Config(format!("egocentric window must be odd, got {window}")));
    }
    if map.frame != Frame::Allocentric {
        return Err(Error::Precondition("egocentric_view needs an allocentric map".into()));
    }
    let half = (window / 2) as i32;
    let mut out = SemanticMap::new(map.num_categories, window, pose.cell, Frame::Egocentric);
    let plane = window * window;
    for row in 0..window {
        for col in 0..window {
            let forward = half - row as i32;
            let right = col as i32 - half;
            let (dx, dy) = pose.heading.local_to_world(forward, right);
            let Some((r, c)) = map.locate((pose.cell.0 + dx, pose.cell.1 + dy)) else {
                continue;
            };
            for ch in 0..map.channels() {
                if map.get(ch, r, c) {
                    out.set_flat(ch * plane + row * window + col);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridsim::{observe, Heading, SensorConfig};

    fn open(w: usize, h: usize) -> World {
        World::from_parts(w, h, 2, vec![false; w * h], vec![0; w * h], 0)
    }

    #[test]
    fn fresh_map_one_observation_matches_hand_trace() {
        // Corridor: agent at (2,2) facing east, walls on rows 1 and 3, wall at x=6.
        let mut w = open(10, 5);
        for x in 0..10 {
            for y in [1usize, 3] {
                w.occupancy[y * 10 + x] = true;
            }
        }
        w.occupancy[2 * 10 + 6] = true;
        w.semantic[2 * 10 + 4] = 1;
        let sensor = SensorConfig { rays: 1, fov_deg: 0.0, max_range: 10 };
        let obs = observe(&w, Pose::new(2, 2, Heading::E), &sensor);
        assert_eq!(obs.depth, vec![4.0]);
        let map = update_map(&SemanticMap::for_world(&w), &obs).unwrap();
        // free: (2,2) (3,2) (4,2) (5,2); obstacle (6,2); category 1 at (4,2)
        assert_eq!(map.count_channel(FREE), 4);
        assert_eq!(map.count_channel(OBSTACLE), 1);
        assert_eq!(map.count_channel(category_channel(1)), 1);
        assert!(map.get_world(OBSTACLE, (6, 2)));
        assert!(map.get_world(category_channel(1), (4, 2)));
        assert_eq!(map.count_set(), 6);
    }

    #[test]
    fn integrate_is_idempotent() {
        let w = crate::gridsim::generate_world(5, &Default::default()).unwrap();
        let pose = Pose { cell: w.free_cells().nth(40).unwrap(), heading: Heading::S };
        let obs = observe(&w, pose, &SensorConfig::default());
        let once = update_map(&SemanticMap::for_world(&w), &obs).unwrap();
        let twice = update_map(&once, &obs).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn full_sweep_of_empty_room() {
        // 5x5 interior surrounded by walls, inside a larger world.
        let mut w = open(15, 15);
        for y in 4..=10 {
            for x in 4..=10 {
                if x == 4 || x == 10 || y == 4 || y == 10 {
                    w.occupancy[y * 15 + x] = true;
                }
            }
        }
        let mut map = SemanticMap::for_world(&w);
        for h in Heading::ALL {
            map.integrate(&observe(&w, Pose::new(7, 7, h), &SensorConfig::default())).unwrap();
        }
        for y in 0..15i32 {
            for x in 0..15i32 {
                let interior = (5..=9).contains(&x) && (5..=9).contains(&y);
                let wall = (4..=10).contains(&x)
                    && (4..=10).contains(&y)
                    && (x == 4 || x == 10 || y == 4 || y == 10);
                assert_eq!(map.get_world(FREE, (x, y)), interior, "free ({x},{y})");
                assert_eq!(map.get_world(OBSTACLE, (x, y)), wall, "wall ({x},{y})");
            }
        }
    }

    #[test]
    fn egocentric_north_is_pure_crop() {
        let w = crate::gridsim::generate_world(9, &Default::default()).unwrap();
        let mut map = SemanticMap::for_world(&w);
        for c in w.free_cells().step_by(7).take(20) {
            map.integrate(&observe(&w, Pose { cell: c, heading: Heading::E }, &SensorConfig::default()))
                .unwrap();
        }
        let pose = Pose::new(12, 14, Heading::N);
        let ego = egocentric_view(&map, pose, 9).unwrap();
        for row in 0..9 {
            for col in 0..9 {
                let cell = (12 + col as i32 - 4, 14 + row as i32 - 4);
                for ch in 0..map.channels() {
                    assert_eq!(ego.get(ch, row, col), map.get_world(ch, cell));
                }
            }
        }
    }

    #[test]
    fn object_east_appears_above_when_facing_east() {
        let w = open(20, 20);
        let mut map = SemanticMap::for_world(&w);
        let (r, c) = map.locate((13, 10)).unwrap();
        map.set(category_channel(2), r, c);
        let ego = egocentric_view(&map, Pose::new(10, 10, Heading::E), 33).unwrap();
        assert!(ego.get(category_channel(2), 16 - 3, 16));
        assert_eq!(ego.count_set(), 1);
    }

    #[test]
    fn even_window_rejected() {
        let w = open(10, 10);
        let map = SemanticMap::for_world(&w);
        assert!(egocentric_view(&map, Pose::new(1, 1, Heading::N), 8).is_err());
    }
}
