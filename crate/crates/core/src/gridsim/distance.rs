use std::collections::VecDeque;

use super::world::neighbours;
use super::{Cell, World};

pub const UNREACHABLE: u32 = u32::MAX;

/// Multi-source BFS distances over free cells.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub fn get(&self, (x, y): Cell) -> u32 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return UNREACHABLE;
        }
        self.dist[y as usize * self.width + x as usize]
    }

    /// Distance as `f32`, `+inf` when unreachable.
    pub fn get_f32(&self, c: Cell) -> f32 {
        match self.get(c) {
            UNREACHABLE => f32::INFINITY,
            d => d as f32,
        }
    }
}

/// Distances from every cell to the nearest of `sources`, moving 4-connected
/// through free cells. Obstacle sources are ignored.
pub fn distance_field(world: &World, sources: &[Cell]) -> DistanceField {
    bfs_field(world.width, world.height, sources, |c| world.is_free(c))
}

pub(crate) fn bfs_field(
    width: usize,
    height: usize,
    sources: &[Cell],
    passable: impl Fn(Cell) -> bool,
) -> DistanceField {
    let mut dist = vec![UNREACHABLE; width * height];
    let mut queue = VecDeque::new();
    let index = |(x, y): Cell| y as usize * width + x as usize;
    let inside = |(x, y): Cell| x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height;
    for &s in sources {
        if inside(s) && passable(s) && dist[index(s)] == UNREACHABLE {
            dist[index(s)] = 0;
            queue.push_back(s);
        }
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[index(c)];
        for n in neighbours(c) {
            if inside(n) && dist[index(n)] == UNREACHABLE && passable(n) {
                dist[index(n)] = d + 1;
                queue.push_back(n);
            }
        }
    }
    DistanceField { width, height, dist }
}

/// 4-connected shortest path length from `from` to the nearest goal cell;
/// `+inf` when no goal cell is reachable.
pub fn geodesic_distance(world: &World, from: Cell, goal_cells: &[Cell]) -> f32 {
    if !world.is_free(from) {
        return f32::INFINITY;
    }
    let mut is_goal = vec![false; world.width * world.height];
    for &g in goal_cells {
        if world.in_bounds(g) {
            is_goal[world.index(g)] = true;
        }
    }
    let mut seen = vec![false; world.width * world.height];
    let mut queue = VecDeque::from([(from, 0u32)]);
    seen[world.index(from)] = true;
    while let Some((c, d)) = queue.pop_front() {
        if is_goal[world.index(c)] {
            return d as f32;
        }
        for n in neighbours(c) {
            if world.is_free(n) && !seen[world.index(n)] {
                seen[world.index(n)] = true;
                queue.push_back((n, d + 1));
            }
        }
    }
    f32::INFINITY
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(w: usize, h: usize) -> World {
        World::from_parts(w, h, 1, vec![false; w * h], vec![0; w * h], 0)
    }

    #[test]
    fn manhattan_on_empty_grid() {
        let w = open(5, 5);
        assert_eq!(geodesic_distance(&w, (0, 0), &[(0, 4)]), 4.0);
        assert_eq!(geodesic_distance(&w, (0, 0), &[(4, 4), (2, 1)]), 3.0);
    }

    #[test]
    fn zero_at_goal() {
        let w = open(5, 5);
        assert_eq!(geodesic_distance(&w, (2, 2), &[(2, 2)]), 0.0);
    }

    #[test]
    fn walled_off_goal_is_infinite() {
        let mut occ = vec![false; 25];
        for y in 0..5 {
            occ[y * 5 + 2] = true;
        }
        let w = World::from_parts(5, 5, 1, occ, vec![0; 25], 0);
        assert!(geodesic_distance(&w, (0, 0), &[(4, 4)]).is_infinite());
        assert_eq!(distance_field(&w, &[(4, 4)]).get((0, 0)), UNREACHABLE);
    }

    #[test]
    fn field_agrees_with_single_source() {
        let mut occ = vec![false; 49];
        for &i in &[8, 9, 10, 17, 24, 31, 38, 40, 41] {
            occ[i] = true;
        }
        let w = World::from_parts(7, 7, 1, occ, vec![0; 49], 0);
        let goals = [(6, 6), (0, 5)];
        let field = distance_field(&w, &goals);
        for c in w.free_cells() {
            assert_eq!(field.get_f32(c), geodesic_distance(&w, c, &goals));
        }
    }
}
