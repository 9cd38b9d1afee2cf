use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Cell, DistanceField, Heading, Pose, UNREACHABLE};
use crate::rng;
use crate::{Error, Result};

pub const WORLD_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub num_categories: usize,
    /// Probability of each of the two room-dividing walls being present.
    pub partition_prob: f64,
    pub obstacle_blocks: usize,
    pub max_block_size: usize,
    pub instances_per_category: usize,
    pub max_instance_size: usize,
    /// Minimum share of interior cells that must stay free and connected.
    pub min_free_fraction: f64,
    pub max_attempts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 32,
            height: 32,
            num_categories: 6,
            partition_prob: 0.6,
            obstacle_blocks: 10,
            max_block_size: 4,
            instances_per_category: 2,
            max_instance_size: 2,
            min_free_fraction: 0.45,
            max_attempts: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub category: u8,
    pub cells: Vec<Cell>,
}

/// Immutable gridworld. Semantic category ids run `1..=num_categories`; 0 is
/// background. Semantic cells are floor markings and never obstacles.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub width: usize,
    pub height: usize,
    pub num_categories: usize,
    pub occupancy: Vec<bool>,
    pub semantic: Vec<u8>,
    pub goals: Vec<Goal>,
    pub seed: u64,
}

impl World {
    /// Builds a world from raw rasters; goals are derived from the semantic
    /// raster as 4-connected components per category.
    pub fn from_parts(
        width: usize,
        height: usize,
        num_categories: usize,
        occupancy: Vec<bool>,
        semantic: Vec<u8>,
        seed: u64,
    ) -> World {
        assert_eq!(occupancy.len(), width * height);
        assert_eq!(semantic.len(), width * height);
        let mut world =
            World { width, height, num_categories, occupancy, semantic, goals: Vec::new(), seed };
        world.goals = world.semantic_components();
        world
    }

    pub fn in_bounds(&self, (x, y): Cell) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn index(&self, (x, y): Cell) -> usize {
        y as usize * self.width + x as usize
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.occupancy[self.index(c)]
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.occupancy[self.index(c)]
    }

    pub fn semantic_at(&self, c: Cell) -> u8 {
        if self.in_bounds(c) {
            self.semantic[self.index(c)]
        } else {
            0
        }
    }

    /// All cells of the given category.
    pub fn goal_cells(&self, category: u8) -> Vec<Cell> {
        self.goals
            .iter()
            .filter(|g| g.category == category)
            .flat_map(|g| g.cells.iter().copied())
            .collect()
    }

    /// Categories that have at least one instance, ascending.
    pub fn present_categories(&self) -> Vec<u8> {
        let mut cats: Vec<u8> = self.goals.iter().map(|g| g.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height as i32)
            .flat_map(move |y| (0..self.width as i32).map(move |x| (x, y)))
            .filter(|&c| self.is_free(c))
    }

    fn semantic_components(&self) -> Vec<Goal> {
        let mut seen = vec![false; self.width * self.height];
        let mut goals = Vec::new();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let i = self.index((x, y));
                let cat = self.semantic[i];
                if cat == 0 || seen[i] {
                    continue;
                }
                let mut cells = Vec::new();
                let mut queue = VecDeque::from([(x, y)]);
                seen[i] = true;
                while let Some(c) = queue.pop_front() {
                    cells.push(c);
                    for n in neighbours(c) {
                        if self.in_bounds(n) {
                            let j = self.index(n);
                            if !seen[j] && self.semantic[j] == cat {
                                seen[j] = true;
                                queue.push_back(n);
                            }
                        }
                    }
                }
                cells.sort_unstable_by_key(|&(x, y)| (y, x));
                goals.push(Goal { category: cat, cells });
            }
        }
        goals.sort_by_key(|g| (g.category, g.cells[0].1, g.cells[0].0));
        goals
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&WorldFile::from(self)).expect("world serialises")
    }

    pub fn from_json(text: &str) -> Result<World> {
        let file: WorldFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

pub(crate) fn neighbours((x, y): Cell) -> [Cell; 4] {
    [(x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)]
}

/// On-disk world layout.
#[derive(Serialize, Deserialize)]
struct WorldFile {
    version: u32,
    seed: u64,
    width: usize,
    height: usize,
    num_categories: usize,
    occupancy: Vec<String>,
    semantic: Vec<Vec<u8>>,
    goals: Vec<Goal>,
}

impl From<&World> for WorldFile {
    fn from(w: &World) -> Self {
        let occupancy = w
            .occupancy
            .chunks(w.width)
            .map(|row| row.iter().map(|&o| if o { '1' } else { '0' }).collect())
            .collect();
        let semantic = w.semantic.chunks(w.width).map(<[u8]>::to_vec).collect();
        WorldFile {
            version: WORLD_FILE_VERSION,
            seed: w.seed,
            width: w.width,
            height: w.height,
            num_categories: w.num_categories,
            occupancy,
            semantic,
            goals: w.goals.clone(),
        }
    }
}

impl TryFrom<WorldFile> for World {
    type Error = Error;

    fn try_from(f: WorldFile) -> Result<World> {
        if f.version != WORLD_FILE_VERSION {
            return Err(Error::Format(format!("unsupported world version {}", f.version)));
        }
        if f.occupancy.len() != f.height || f.semantic.len() != f.height {
            return Err(Error::Format("world raster height mismatch".into()));
        }
        let mut occupancy = Vec::with_capacity(f.width * f.height);
        for row in &f.occupancy {
            if row.len() != f.width {
                return Err(Error::Format("occupancy row width mismatch".into()));
            }
            for ch in row.chars() {
                occupancy.push(match ch {
                    '0' => false,
                    '1' => true,
                    other => return Err(Error::Format(format!("bad occupancy symbol {other:?}"))),
                });
            }
        }
        let mut semantic = Vec::with_capacity(f.width * f.height);
        for row in &f.semantic {
            if row.len() != f.width {
                return Err(Error::Format("semantic row width mismatch".into()));
            }
            semantic.extend_from_slice(row);
        }
        let world = World::from_parts(f.width, f.height, f.num_categories, occupancy, semantic, f.seed);
        if world.goals != f.goals {
            return Err(Error::Format("goal list disagrees with semantic raster".into()));
        }
        Ok(world)
    }
}

/// Generates a world deterministically from `seed`.
pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<World> {
    if cfg.width < 8 || cfg.height < 8 {
        return Err(Error::Config(format!("world must be at least 8x8, got {}x{}", cfg.width, cfg.height)));
    }
    if cfg.num_categories == 0 || cfg.num_categories > 250 {
        return Err(Error::Config("num_categories must be in 1..=250".into()));
    }
    let mut last = String::new();
    for attempt in 0..cfg.max_attempts.max(1) {
        match try_generate(seed, rng::derive(seed, attempt as u64), cfg) {
            Ok(w) => return Ok(w),
            Err(reason) => last = reason,
        }
    }
    Err(Error::WorldGeneration { attempts: cfg.max_attempts.max(1), reason: last })
}

fn try_generate(seed: u64, stream: u64, cfg: &WorldConfig) -> std::result::Result<World, String> {
    let (w, h) = (cfg.width as i32, cfg.height as i32);
    let mut rng = rng::rng(stream);
    let idx = |(x, y): Cell| (y * w + x) as usize;
    let mut occ = vec![false; cfg.width * cfg.height];

    for x in 0..w {
        occ[idx((x, 0))] = true;
        occ[idx((x, h - 1))] = true;
    }
    for y in 0..h {
        occ[idx((0, y))] = true;
        occ[idx((w - 1, y))] = true;
    }

    // Room partitions with two doorways each.
    if rng.gen_bool(cfg.partition_prob) && w >= 12 {
        let x = rng.gen_range(w / 3..=2 * w / 3);
        for y in 1..h - 1 {
            occ[idx((x, y))] = true;
        }
        for _ in 0..2 {
            let y = rng.gen_range(1..h - 2);
            occ[idx((x, y))] = false;
            occ[idx((x, y + 1))] = false;
        }
    }
    if rng.gen_bool(cfg.partition_prob) && h >= 12 {
        let y = rng.gen_range(h / 3..=2 * h / 3);
        for x in 1..w - 1 {
            occ[idx((x, y))] = true;
        }
        for _ in 0..2 {
            let x = rng.gen_range(1..w - 2);
            occ[idx((x, y))] = false;
            occ[idx((x + 1, y))] = false;
        }
    }

    let max_block = cfg.max_block_size.max(1) as i32;
    for _ in 0..cfg.obstacle_blocks {
        let bw = rng.gen_range(1..=max_block);
        let bh = rng.gen_range(1..=max_block);
        let x0 = rng.gen_range(1..(w - 1 - bw).max(2));
        let y0 = rng.gen_range(1..(h - 1 - bh).max(2));
        for y in y0..(y0 + bh).min(h - 1) {
            for x in x0..(x0 + bw).min(w - 1) {
                occ[idx((x, y))] = true;
            }
        }
    }

    // Keep only the largest 4-connected free component.
    let mut label = vec![usize::MAX; occ.len()];
    let mut best = (0usize, 0usize);
    let mut n_labels = 0;
    for start in 0..occ.len() {
        if occ[start] || label[start] != usize::MAX {
            continue;
        }
        let mut size = 0;
        let mut queue = VecDeque::from([start]);
        label[start] = n_labels;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let c = ((i % cfg.width) as i32, (i / cfg.width) as i32);
            for n in neighbours(c) {
                if n.0 >= 0 && n.1 >= 0 && n.0 < w && n.1 < h {
                    let j = idx(n);
                    if !occ[j] && label[j] == usize::MAX {
                        label[j] = n_labels;
                        queue.push_back(j);
                    }
                }
            }
        }
        if size > best.1 {
            best = (n_labels, size);
        }
        n_labels += 1;
    }
    for i in 0..occ.len() {
        if !occ[i] && label[i] != best.0 {
            occ[i] = true;
        }
    }
    let interior = ((w - 2) * (h - 2)) as f64;
    if (best.1 as f64) < cfg.min_free_fraction * interior {
        return Err(format!("largest free component too small ({} cells)", best.1));
    }

    let mut sem = vec![0u8; occ.len()];
    let max_inst = cfg.max_instance_size.max(1) as i32;
    for cat in 1..=cfg.num_categories as u8 {
        let instances = rng.gen_range(1..=cfg.instances_per_category.max(1));
        let mut placed = 0;
        for _ in 0..instances {
            for _try in 0..64 {
                let iw = rng.gen_range(1..=max_inst);
                let ih = rng.gen_range(1..=max_inst);
                let x0 = rng.gen_range(1..w - iw);
                let y0 = rng.gen_range(1..h - ih);
                let rect: Vec<Cell> =
                    (y0..y0 + ih).flat_map(|y| (x0..x0 + iw).map(move |x| (x, y))).collect();
                // Keep a one-cell margin to other markings so instances stay separate.
                let clear = rect.iter().all(|&c| !occ[idx(c)])
                    && (y0 - 1..=y0 + ih).all(|y| {
                        (x0 - 1..=x0 + iw).all(|x| x < 0 || y < 0 || x >= w || y >= h || sem[idx((x, y))] == 0)
                    });
                if clear {
                    for &c in &rect {
                        sem[idx(c)] = cat;
                    }
                    placed += 1;
                    break;
                }
            }
        }
        if placed == 0 {
            return Err(format!("could not place category {cat}"));
        }
    }

    let world = World::from_parts(cfg.width, cfg.height, cfg.num_categories, occ, sem, seed);
    if world.present_categories().len() != cfg.num_categories {
        return Err("category instances merged or missing".into());
    }
    Ok(world)
}

/// Picks a free start cell whose distance in `field` is at least `min_distance`
/// and finite, with a random heading. `None` if no cell qualifies.
pub fn sample_spawn<R: Rng>(world: &World, field: &DistanceField, rng: &mut R, min_distance: u32) -> Option<Pose> {
    let candidates: Vec<Cell> = world
        .free_cells()
        .filter(|&c| {
            let d = field.get(c);
            d != UNREACHABLE && d >= min_distance
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let cell = candidates[rng.gen_range(0..candidates.len())];
    let heading = Heading::from_quarter_turns(rng.gen_range(0..4));
    Some(Pose { cell, heading })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridsim::distance_field;

    #[test]
    fn deterministic_in_seed() {
        let cfg = WorldConfig::default();
        let a = generate_world(7, &cfg).unwrap();
        let b = generate_world(7, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_world(8, &cfg).unwrap();
        assert_ne!(a.occupancy, c.occupancy);
    }

    #[test]
    fn rejects_tiny_or_empty_configs() {
        let cfg = WorldConfig { width: 6, ..WorldConfig::default() };
        assert!(matches!(generate_world(1, &cfg), Err(Error::Config(_))));
        let cfg = WorldConfig { num_categories: 0, ..WorldConfig::default() };
        assert!(matches!(generate_world(1, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn unsatisfiable_config_fails_after_retries() {
        let cfg = WorldConfig {
            width: 8,
            height: 8,
            obstacle_blocks: 0,
            num_categories: 40,
            max_attempts: 3,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(1, &cfg), Err(Error::WorldGeneration { attempts: 3, .. })));
    }

    #[test]
    fn goals_are_free_and_reachable() {
        let cfg = WorldConfig::default();
        for seed in 0..40 {
            let w = generate_world(seed, &cfg).unwrap();
            assert_eq!(w.present_categories().len(), cfg.num_categories);
            for g in &w.goals {
                for &c in &g.cells {
                    assert!(w.is_free(c));
                }
                let field = distance_field(&w, &g.cells);
                let reachable = w.free_cells().filter(|&c| field.get(c) != UNREACHABLE).count();
                assert_eq!(reachable, w.free_cells().count(), "seed {seed}: free space is one component");
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let w = generate_world(3, &WorldConfig::default()).unwrap();
        let back = World::from_json(&w.to_json()).unwrap();
        assert_eq!(w, back);
        let broken = w.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(World::from_json(&broken).is_err());
    }
}
