//! Text formats for worlds and episode lists.
//!
//! World file:
//!
//! ```text
//! EVENAV-WORLD 1
//! resolution 0.25
//! width 3
//! height 3
//! occupancy
//! ...
//! .#.
//! ...
//! instances 1
//! 1 bed 1,1
//! ```
//!
//! Occupancy rows are listed from `y = 0` upwards, `#` marks an obstacle and
//! `.` free space. Each instance record is `id category x,y [x,y ...]`.
//!
//! Episode file: a `EVENAV-EPISODES 1` magic line followed by one record per
//! line, `x y theta goal_id capture_distance max_steps`. Blank lines and
//! lines starting with `#` outside the occupancy block are skipped.

use std::fmt::Write as _;

use super::{Category, Episode, Instance, Pose, World, WorldError};
use crate::grid::{Cell, Grid};

pub const WORLD_MAGIC: &str = "EVENAV-WORLD 1";
pub const EPISODES_MAGIC: &str = "EVENAV-EPISODES 1";

fn parse_err(line: usize, message: impl Into<String>) -> WorldError {
    WorldError::Parse { line, message: message.into() }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate(), last: 0 }
    }

    /// Next significant line with its 1-based number. Comment lines are
    /// only recognised when `comments` is set, since occupancy rows may
    /// start with `#`.
    fn advance(&mut self, comments: bool) -> Option<(usize, &'a str)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.trim();
            self.last = i + 1;
            if line.is_empty() || comments && line.starts_with('#') {
                continue;
            }
            return Some((i + 1, line));
        }
        None
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        self.advance(true)
    }

    fn expect_with(&mut self, what: &str, comments: bool) -> Result<(usize, &'a str), WorldError> {
        self.advance(comments)
            .ok_or_else(|| parse_err(self.last + 1, format!("unexpected end of file, expected {what}")))
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), WorldError> {
        self.expect_with(what, true)
    }

    fn field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, WorldError> {
        let (n, line) = self.expect(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(parse_err(n, format!("expected '{key} <value>'")));
        }
        let value = parts.next().ok_or_else(|| parse_err(n, format!("missing value for '{key}'")))?;
        if parts.next().is_some() {
            return Err(parse_err(n, format!("trailing data after '{key}'")));
        }
        value.parse().map_err(|_| parse_err(n, format!("invalid value '{value}' for '{key}'")))
    }
}

pub fn load_world(text: &str) -> Result<World, WorldError> {
    let mut lines = Lines::new(text);
    let (n, magic) = lines.expect("magic line")?;
    if magic != WORLD_MAGIC {
        return Err(parse_err(n, format!("expected '{WORLD_MAGIC}'")));
    }
    let resolution: f64 = lines.field("resolution")?;
    let width: usize = lines.field("width")?;
    let height: usize = lines.field("height")?;
    let (n, tag) = lines.expect("occupancy")?;
    if tag != "occupancy" {
        return Err(parse_err(n, "expected 'occupancy'"));
    }
    let mut occ = Grid::filled(width, height, false);
    for y in 0..height {
        let (n, row) = lines.expect_with("occupancy row", false)?;
        if row.chars().count() != width {
            return Err(parse_err(n, format!("row has {} cells, expected {width}", row.chars().count())));
        }
        for (x, ch) in row.chars().enumerate() {
            let blocked = match ch {
                '#' => true,
                '.' => false,
                other => return Err(parse_err(n, format!("invalid occupancy character '{other}'"))),
            };
            occ.set(Cell::new(x as i32, y as i32), blocked);
        }
    }
    let count: usize = lines.field("instances")?;
    let mut instances = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, rec) = lines.expect("instance record")?;
        let mut parts = rec.split_whitespace();
        let id = parts
            .next()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| parse_err(n, "instance id must be a non-negative integer"))?;
        let category: Category = parts
            .next()
            .ok_or_else(|| parse_err(n, "missing instance category"))?
            .parse()
            .map_err(|e: String| parse_err(n, e))?;
        let cells = parts
            .map(|tok| {
                let (x, y) = tok.split_once(',').ok_or_else(|| parse_err(n, format!("bad cell '{tok}'")))?;
                match (x.parse(), y.parse()) {
                    (Ok(x), Ok(y)) => Ok(Cell::new(x, y)),
                    _ => Err(parse_err(n, format!("bad cell '{tok}'"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        if cells.is_empty() {
            return Err(parse_err(n, format!("instance {id} lists no cells")));
        }
        instances.push(Instance { id, category, cells });
    }
    if let Some((n, _)) = lines.next_line() {
        return Err(parse_err(n, "unexpected trailing content"));
    }
    World::new(resolution, occ, instances)
}

pub fn save_world(world: &World) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{WORLD_MAGIC}");
    let _ = writeln!(out, "resolution {}", world.resolution());
    let _ = writeln!(out, "width {}", world.width());
    let _ = writeln!(out, "height {}", world.height());
    out.push_str("occupancy\n");
    for y in 0..world.height() as i32 {
        for x in 0..world.width() as i32 {
            out.push(if world.blocked(Cell::new(x, y)) { '#' } else { '.' });
        }
        out.push('\n');
    }
    let _ = writeln!(out, "instances {}", world.instances().len());
    for inst in world.instances() {
        let _ = write!(out, "{} {}", inst.id, inst.category);
        for c in &inst.cells {
            let _ = write!(out, " {},{}", c.x, c.y);
        }
        out.push('\n');
    }
    out
}

/// Parses an episode list and validates every record against `world`.
/// Visibility for the reachability check uses `max_range`.
pub fn load_episodes(text: &str, world: &World, max_range: f64) -> Result<Vec<Episode>, WorldError> {
    let mut lines = Lines::new(text);
    let (n, magic) = lines.expect("magic line")?;
    if magic != EPISODES_MAGIC {
        return Err(parse_err(n, format!("expected '{EPISODES_MAGIC}'")));
    }
    let mut out = Vec::new();
    while let Some((n, rec)) = lines.next_line() {
        let parts: Vec<&str> = rec.split_whitespace().collect();
        if parts.len() != 6 {
            return Err(parse_err(n, format!("expected 6 fields, found {}", parts.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64, WorldError> {
            parts[i].parse::<f64>().map_err(|_| parse_err(n, format!("invalid {name} '{}'", parts[i])))
        };
        let (x, y, theta) = (num(0, "x")?, num(1, "y")?, num(2, "theta")?);
        let goal: u32 = parts[3].parse().map_err(|_| parse_err(n, format!("invalid goal id '{}'", parts[3])))?;
        let capture = num(4, "capture_distance")?;
        let max_steps: usize =
            parts[5].parse().map_err(|_| parse_err(n, format!("invalid max_steps '{}'", parts[5])))?;
        let ep = world
            .episode(Pose::new(x, y, theta), goal, capture, max_steps, max_range)
            .map_err(|e| parse_err(n, e.to_string()))?;
        out.push(ep);
    }
    Ok(out)
}

pub fn save_episodes(episodes: &[Episode]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{EPISODES_MAGIC}");
    out.push_str("# x y theta goal_id capture_distance max_steps\n");
    for e in episodes {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            e.start.x, e.start.y, e.start.theta, e.goal_instance, e.goal.capture_distance, e.max_steps
        );
    }
    out
}
