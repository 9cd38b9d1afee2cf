use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{category_channel, Frame, SemanticMap, FREE};
use crate::gridsim::{Action, Pose};
use crate::{Error, Result};

pub const NUM_SECTORS: usize = 8;
pub const NUM_BUCKETS: usize = 4;
/// Euclidean search radius, in cells, for the nearest object per sector.
pub const DESCRIPTION_RANGE: i32 = 16;
pub const RECENT_ACTIONS: usize = 8;

pub const SECTOR_NAMES: [&str; NUM_SECTORS] = [
    "ahead",
    "ahead-right",
    "right",
    "behind-right",
    "behind",
    "behind-left",
    "left",
    "ahead-left",
];

const BUCKET_NAMES: [&str; NUM_BUCKETS] = ["blocked", "near", "mid", "open"];

const CATEGORY_NAMES: [&str; 6] = ["chair", "bed", "plant", "toilet", "tv_monitor", "sofa"];

pub fn category_name(cat: u8) -> String {
    match cat {
        0 => "nothing".to_string(),
        c if (c as usize) <= CATEGORY_NAMES.len() => CATEGORY_NAMES[c as usize - 1].to_string(),
        c => format!("category_{c}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sector {
    pub nearest: Option<u8>,
    pub free_bucket: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapDescription {
    pub sectors: [Sector; NUM_SECTORS],
    pub recent_actions: Vec<Action>,
    pub text: String,
}

impl MapDescription {
    pub fn from_parts(sectors: [Sector; NUM_SECTORS], recent: &[Action]) -> MapDescription {
        let start = recent.len().saturating_sub(RECENT_ACTIONS);
        let recent_actions = recent[start..].to_vec();
        let text = render_text(&sectors, &recent_actions);
        MapDescription { sectors, recent_actions, text }
    }
}

fn render_text(sectors: &[Sector; NUM_SECTORS], recent: &[Action]) -> String {
    let mut parts: Vec<String> = sectors
        .iter()
        .zip(SECTOR_NAMES)
        .map(|(s, name)| {
            format!(
                "{name}: {} ({})",
                category_name(s.nearest.unwrap_or(0)),
                BUCKET_NAMES[s.free_bucket as usize]
            )
        })
        .collect();
    let actions: Vec<&str> = recent.iter().map(|a| a.name()).collect();
    parts.push(format!(
        "recent: {}",
        if actions.is_empty() { "none".to_string() } else { actions.join(" ") }
    ));
    parts.join("; ")
}

/// Sector of an agent-frame offset (`forward`, `right`), clockwise from
/// ahead. Exact integer test against the 22.5-degree boundaries:
/// `|minor| < |major| * tan(22.5)` iff `(|major| + |minor|)^2 < 2 |major|^2`.
pub fn sector_of(forward: i32, right: i32) -> usize {
    let a = i64::from(forward.abs());
    let b = i64::from(right.abs());
    if (a + b) * (a + b) < 2 * a * a {
        if forward > 0 {
            0
        } else {
            4
        }
    } else if (a + b) * (a + b) < 2 * b * b {
        if right > 0 {
            2
        } else {
            6
        }
    } else {
        match (forward > 0, right > 0) {
            (true, true) => 1,
            (false, true) => 3,
            (false, false) => 5,
            (true, false) => 7,
        }
    }
}

/// Bucket for a contiguous free run: 0, 1-2, 3-5, 6+.
pub fn bucket_for_run(run: u32) -> u8 {
    match run {
        0 => 0,
        1..=2 => 1,
        3..=5 => 2,
        _ => 3,
    }
}

const BISECTORS: [(i32, i32); NUM_SECTORS] =
    [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

struct Offset {
    forward: i32,
    right: i32,
    dist2: i32,
    sector: usize,
}

fn offsets() -> &'static [Offset] {
    static TABLE: OnceLock<Vec<Offset>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let r = DESCRIPTION_RANGE;
        let mut v = Vec::new();
        for forward in -r..=r {
            for right in -r..=r {
                let dist2 = forward * forward + right * right;
                if dist2 == 0 || dist2 > r * r {
                    continue;
                }
                v.push(Offset { forward, right, dist2, sector: sector_of(forward, right) });
            }
        }
        v.sort_by_key(|o| o.dist2);
        v
    })
}

/// Summarises an allocentric map around `pose`: nearest category and free
/// extent per 45-degree sector, plus the last few actions.
pub fn describe_map(map: &SemanticMap, pose: Pose, recent: &[Action]) -> Result<MapDescription> {
    if map.frame() != Frame::Allocentric {
        return Err(Error::Precondition("describe_map needs an allocentric map".into()));
    }
    let mut best: [Option<(i32, u8)>; NUM_SECTORS] = [None; NUM_SECTORS];
    for o in offsets() {
        if let Some((d2, _)) = best[o.sector] {
            if o.dist2 > d2 {
                continue;
            }
        }
        let (dx, dy) = pose.heading.local_to_world(o.forward, o.right);
        let cell = (pose.cell.0 + dx, pose.cell.1 + dy);
        let Some((row, col)) = map.locate(cell) else { continue };
        let found = (1..=map.num_categories() as u8).find(|&c| map.get(category_channel(c), row, col));
        if let Some(cat) = found {
            let better = match best[o.sector] {
                None => true,
                Some((d2, c)) => o.dist2 < d2 || (o.dist2 == d2 && cat < c),
            };
            if better {
                best[o.sector] = Some((o.dist2, cat));
            }
        }
    }

    let mut sectors = [Sector { nearest: None, free_bucket: 0 }; NUM_SECTORS];
    for (k, sector) in sectors.iter_mut().enumerate() {
        sector.nearest = best[k].map(|(_, c)| c);
        let (bf, br) = BISECTORS[k];
        let mut run = 0;
        for s in 1..=DESCRIPTION_RANGE {
            let (dx, dy) = pose.heading.local_to_world(s * bf, s * br);
            if map.get_world(FREE, (pose.cell.0 + dx, pose.cell.1 + dy)) {
                run += 1;
            } else {
                break;
            }
        }
        sector.free_bucket = bucket_for_run(run);
    }
    Ok(MapDescription::from_parts(sectors, recent))
}
