//! Online semantic map: per-observation projection and max-pool fusion into
//! the global map.
//!
//! Each cell stores a bit set. Bit 0 is "explored", bit 1 "obstacle", and bit
//! `2 + c` marks category `c`. With boolean channels the max-pool fusion is a
//! bitwise OR.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, CellWalk, Grid};
use crate::world::{Category, Observation, Pose, RayHit};

pub const EXPLORED: usize = 0;
pub const OBSTACLE: usize = 1;
pub const CHANNELS: usize = 2 + Category::COUNT;

/// Past the reported range, used to land inside the hit cell.
const HIT_NUDGE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("map shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub fn category_channel(c: Category) -> usize {
    2 + c.index()
}

fn bit(channel: usize) -> u16 {
    1 << channel
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
}

impl MapConfig {
    pub fn cell_of(&self, x: f64, y: f64) -> Cell {
        Cell::containing(x, y, self.resolution)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    config: MapConfig,
    origin: (f64, f64),
    cells: Grid<u16>,
}

impl SemanticMap {
    pub fn empty(config: MapConfig) -> Self {
        Self { config, origin: (0.0, 0.0), cells: Grid::filled(config.width, config.height, 0) }
    }

    /// Map from per-cell channel bits, e.g. a loaded snapshot.
    pub fn from_raw(config: MapConfig, cells: Grid<u16>) -> Result<Self, MapError> {
        if cells.width() != config.width || cells.height() != config.height {
            return Err(MapError::ShapeMismatch(format!(
                "config {}x{} vs cells {}x{}",
                config.width,
                config.height,
                cells.width(),
                cells.height()
            )));
        }
        Ok(Self { config, origin: (0.0, 0.0), cells })
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn resolution(&self) -> f64 {
        self.config.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn get(&self, cell: Cell, channel: usize) -> bool {
        self.cells.get(cell).is_some_and(|v| v & bit(channel) != 0)
    }

    pub fn raw(&self, cell: Cell) -> u16 {
        self.cells.get(cell).copied().unwrap_or(0)
    }

    pub fn is_explored(&self, cell: Cell) -> bool {
        self.get(cell, EXPLORED)
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.get(cell, OBSTACLE)
    }

    pub fn is_free_explored(&self, cell: Cell) -> bool {
        self.is_explored(cell) && !self.is_obstacle(cell)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells.cells()
    }

    /// Boolean view of one channel.
    pub fn channel(&self, channel: usize) -> Grid<bool> {
        self.cells.map(|v| v & bit(channel) != 0)
    }

    pub fn explored_count(&self) -> usize {
        self.cells.values().iter().filter(|v| *v & bit(EXPLORED) != 0).count()
    }

    /// Category cells imply obstacle, obstacle implies explored.
    pub fn hierarchy_holds(&self) -> bool {
        self.cells.values().iter().all(|&v| {
            let category_bits = v >> 2;
            (category_bits == 0 || v & bit(OBSTACLE) != 0) && (v & bit(OBSTACLE) == 0 || v & bit(EXPLORED) != 0)
        })
    }

    /// Cells of one category channel, row-major.
    pub fn category_cells(&self, category: Category) -> Vec<Cell> {
        let b = bit(category_channel(category));
        self.cells.iter().filter(|(_, v)| **v & b != 0).map(|(c, _)| c).collect()
    }

    /// In-place max-pool of a local projection.
    pub fn fuse_in_place(&mut self, local: &LocalProjection) -> Result<(), MapError> {
        if local.config != self.config {
            return Err(MapError::ShapeMismatch(format!(
                "global {}x{}@{} vs local {}x{}@{}",
                self.config.width,
                self.config.height,
                self.config.resolution,
                local.config.width,
                local.config.height,
                local.config.resolution
            )));
        }
        for (&cell, &marks) in &local.marks {
            if let Some(v) = self.cells.get_mut(cell) {
                *v |= marks;
            }
        }
        Ok(())
    }

    /// Snapshot dump: a JSON metadata line, then one ASCII block per channel
    /// (`#` set, `.` clear), rows from `y = 0` upwards.
    pub fn snapshot(&self) -> String {
        let names: Vec<String> = (0..CHANNELS).map(channel_name).collect();
        let meta = serde_json::json!({
            "format": "evenav-map",
            "version": 1,
            "width": self.width(),
            "height": self.height(),
            "resolution": self.resolution(),
            "origin": [self.origin.0, self.origin.1],
            "channels": names,
        });
        let mut out = format!("{meta}\n");
        for ch in 0..CHANNELS {
            let _ = writeln!(out, "channel {}", channel_name(ch));
            for y in 0..self.height() as i32 {
                for x in 0..self.width() as i32 {
                    out.push(if self.get(Cell::new(x, y), ch) { '#' } else { '.' });
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn channel_name(channel: usize) -> String {
    match channel {
        EXPLORED => "explored".into(),
        OBSTACLE => "obstacle".into(),
        c => Category::from_index(c - 2).map(|c| c.name().to_string()).unwrap_or_else(|| format!("channel{c}")),
    }
}

/// Cells touched by one observation, already in the global frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalProjection {
    config: MapConfig,
    marks: BTreeMap<Cell, u16>,
}

impl LocalProjection {
    pub fn marks(&self) -> &BTreeMap<Cell, u16> {
        &self.marks
    }

    pub fn get(&self, cell: Cell, channel: usize) -> bool {
        self.marks.get(&cell).is_some_and(|v| v & bit(channel) != 0)
    }

    /// The projection as a full-size map.
    pub fn to_map(&self) -> SemanticMap {
        let mut m = SemanticMap::empty(self.config);
        m.fuse_in_place(self).expect("same config");
        m
    }

    fn mark(&mut self, cell: Cell, bits: u16) {
        if cell.x >= 0 && cell.y >= 0 && (cell.x as usize) < self.config.width && (cell.y as usize) < self.config.height {
            *self.marks.entry(cell).or_insert(0) |= bits;
        }
    }
}

/// Cell holding the hit point of a ray (floor of the point just past the
/// reported range).
pub fn hit_cell(pose: &Pose, bearing: f64, distance: f64, resolution: f64) -> Cell {
    let r = distance + HIT_NUDGE;
    Cell::containing(pose.x + r * bearing.cos(), pose.y + r * bearing.sin(), resolution)
}

/// Scatters an observation into map cells: cells strictly between the agent
/// and the hit are explored free space; the hit cell is explored, an
/// obstacle and, for labelled hits, its category.
pub fn project_observation(obs: &Observation, config: &MapConfig) -> LocalProjection {
    let mut local = LocalProjection { config: *config, marks: BTreeMap::new() };
    let res = config.resolution;
    let pose = &obs.pose;
    for ray in &obs.rays {
        let hit = ray.is_hit().then(|| hit_cell(pose, ray.bearing, ray.distance, res));
        for (cell, t) in CellWalk::new(pose.x, pose.y, ray.bearing, res) {
            if t >= ray.distance || Some(cell) == hit {
                break;
            }
            local.mark(cell, bit(EXPLORED));
        }
        if let Some(cell) = hit {
            let mut bits = bit(EXPLORED) | bit(OBSTACLE);
            if let RayHit::Object { category, .. } = ray.hit {
                bits |= bit(category_channel(category));
            }
            local.mark(cell, bits);
        }
    }
    local
}

/// Max-pool fusion returning a new map.
pub fn fuse(global: &SemanticMap, local: &LocalProjection) -> Result<SemanticMap, MapError> {
    let mut out = global.clone();
    out.fuse_in_place(local)?;
    Ok(out)
}
