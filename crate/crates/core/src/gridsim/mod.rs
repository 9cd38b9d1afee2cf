//! Static gridworlds, agent kinematics, ray sensing and the geodesic-distance
//! oracle.
//!
//! Coordinates are `(x, y)` with `x` growing east and `y` growing south, so
//! row 0 of any raster is the northern edge.

mod distance;
mod sensor;
mod world;

use serde::{Deserialize, Serialize};

pub(crate) use distance::bfs_field;
pub(crate) use world::neighbours;
pub use distance::{distance_field, geodesic_distance, DistanceField, UNREACHABLE};
pub use sensor::{observe, ray_cell, Hit, Observation, SensorConfig};
pub use world::{generate_world, sample_spawn, Goal, World, WorldConfig, WORLD_FILE_VERSION};

pub type Cell = (i32, i32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    /// Unit step in world coordinates.
    pub fn vector(self) -> Cell {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    /// Number of clockwise quarter turns from north.
    pub fn quarter_turns(self) -> u8 {
        self as u8
    }

    pub fn from_quarter_turns(q: u8) -> Heading {
        Heading::ALL[(q % 4) as usize]
    }

    pub fn right(self) -> Heading {
        Heading::from_quarter_turns(self.quarter_turns() + 1)
    }

    pub fn left(self) -> Heading {
        Heading::from_quarter_turns(self.quarter_turns() + 3)
    }

    /// World offset of a point `forward` cells ahead and `right` cells to the
    /// right of an agent with this heading.
    pub fn local_to_world(self, forward: i32, right: i32) -> Cell {
        let (hx, hy) = self.vector();
        let (rx, ry) = self.right().vector();
        (forward * hx + right * rx, forward * hy + right * ry)
    }

    /// Inverse of [`Heading::local_to_world`].
    pub fn world_to_local(self, dx: i32, dy: i32) -> (i32, i32) {
        let (hx, hy) = self.vector();
        let (rx, ry) = self.right().vector();
        (dx * hx + dy * hy, dx * rx + dy * ry)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Forward = 0,
    TurnLeft = 1,
    TurnRight = 2,
    Stop = 3,
}

/// Size of the action vocabulary; logits are ordered by discriminant.
pub const NUM_ACTIONS: usize = 4;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] =
        [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::TurnLeft => "left",
            Action::TurnRight => "right",
            Action::Stop => "stop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub cell: Cell,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: i32, y: i32, heading: Heading) -> Pose {
        Pose { cell: (x, y), heading }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub pose: Pose,
    pub collided: bool,
    pub stopped: bool,
}

/// Applies one action. Total and side-effect free.
pub fn step(world: &World, pose: Pose, action: Action) -> StepOutcome {
    match action {
        Action::Forward => {
            let (dx, dy) = pose.heading.vector();
            let next = (pose.cell.0 + dx, pose.cell.1 + dy);
            if world.is_free(next) {
                StepOutcome { pose: Pose { cell: next, ..pose }, collided: false, stopped: false }
            } else {
                StepOutcome { pose, collided: true, stopped: false }
            }
        }
        Action::TurnLeft => StepOutcome {
            pose: Pose { heading: pose.heading.left(), ..pose },
            collided: false,
            stopped: false,
        },
        Action::TurnRight => StepOutcome {
            pose: Pose { heading: pose.heading.right(), ..pose },
            collided: false,
            stopped: false,
        },
        Action::Stop => StepOutcome { pose, collided: false, stopped: true },
    }
}
