//! Dense row-major grids, cell coordinates, ray walking and 8-connected
//! shortest-distance propagation shared by the world, the map and the planner.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// Integer cell coordinate. `x` is the column, `y` the row. Signed so that
/// rays and neighbourhood scans can step outside the grid without wrapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// Cell containing the metric point `(px, py)`.
    pub fn containing(px: f64, py: f64, resolution: f64) -> Self {
        Self::new((px / resolution).floor() as i32, (py / resolution).floor() as i32)
    }

    /// Metric centre of the cell.
    pub fn center(self, resolution: f64) -> (f64, f64) {
        ((self.x as f64 + 0.5) * resolution, (self.y as f64 + 0.5) * resolution)
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn neighbors4(self) -> [Cell; 4] {
        [self.offset(1, 0), self.offset(-1, 0), self.offset(0, 1), self.offset(0, -1)]
    }

    pub fn neighbors8(self) -> [Cell; 8] {
        [
            self.offset(1, 0),
            self.offset(-1, 0),
            self.offset(0, 1),
            self.offset(0, -1),
            self.offset(1, 1),
            self.offset(1, -1),
            self.offset(-1, 1),
            self.offset(-1, -1),
        ]
    }

    /// Euclidean distance between a metric point and this cell's centre.
    pub fn distance_from(self, px: f64, py: f64, resolution: f64) -> f64 {
        let (cx, cy) = self.center(resolution);
        (cx - px).hypot(cy - py)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && (cell.x as usize) < self.width && (cell.y as usize) < self.height
    }

    fn index(&self, cell: Cell) -> Option<usize> {
        self.contains(cell).then(|| cell.y as usize * self.width + cell.x as usize)
    }

    pub fn get(&self, cell: Cell) -> Option<&T> {
        self.index(cell).map(|i| &self.data[i])
    }

    pub fn get_mut(&mut self, cell: Cell) -> Option<&mut T> {
        self.index(cell).map(move |i| &mut self.data[i])
    }

    /// Writes `value` if the cell is in bounds; returns whether it was.
    pub fn set(&mut self, cell: Cell, value: T) -> bool {
        match self.get_mut(cell) {
            Some(slot) => {
                *slot = value;
                true
            }
            None => false,
        }
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let w = self.width;
        (0..self.data.len()).map(move |i| Cell::new((i % w) as i32, (i / w) as i32))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, &T)> + '_ {
        self.cells().zip(self.data.iter())
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

impl Grid<bool> {
    /// `true` for cells in bounds and set; everything outside reads as `outside`.
    pub fn at_or(&self, cell: Cell, outside: bool) -> bool {
        self.get(cell).copied().unwrap_or(outside)
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn true_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.iter().filter(|(_, v)| **v).map(|(c, _)| c)
    }
}

/// Amanatides–Woo traversal of the cells crossed by a ray. Yields each cell
/// together with the ray parameter (metres) at which the ray enters it; the
/// origin cell is yielded first with entry 0.
///
/// On an exact corner crossing the x-side cell is visited before the
/// diagonal one, so a ray grazing a corner touches the side cell.
#[derive(Clone, Debug)]
pub struct CellWalk {
    cell: Cell,
    step_x: i32,
    step_y: i32,
    t_max_x: f64,
    t_max_y: f64,
    t_delta_x: f64,
    t_delta_y: f64,
    t_enter: f64,
}

impl CellWalk {
    pub fn new(px: f64, py: f64, angle: f64, resolution: f64) -> Self {
        let (dy, dx) = angle.sin_cos();
        let cell = Cell::containing(px, py, resolution);
        let axis = |p: f64, d: f64, c: i32| -> (i32, f64, f64) {
            if d > 0.0 {
                (1, ((c + 1) as f64 * resolution - p) / d, resolution / d)
            } else if d < 0.0 {
                (-1, (c as f64 * resolution - p) / d, -resolution / d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_x, t_max_x, t_delta_x) = axis(px, dx, cell.x);
        let (step_y, t_max_y, t_delta_y) = axis(py, dy, cell.y);
        Self { cell, step_x, step_y, t_max_x, t_max_y, t_delta_x, t_delta_y, t_enter: 0.0 }
    }
}

impl Iterator for CellWalk {
    type Item = (Cell, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let out = (self.cell, self.t_enter);
        if self.t_max_x <= self.t_max_y {
            self.t_enter = self.t_max_x;
            self.cell.x += self.step_x;
            self.t_max_x += self.t_delta_x;
        } else {
            self.t_enter = self.t_max_y;
            self.cell.y += self.step_y;
            self.t_max_y += self.t_delta_y;
        }
        Some(out)
    }
}

/// First cell along the ray for which `blocked` holds, with its entry
/// distance, provided it is entered at or before `max_dist`.
pub fn first_blocked(
    px: f64,
    py: f64,
    angle: f64,
    max_dist: f64,
    resolution: f64,
    mut blocked: impl FnMut(Cell) -> bool,
) -> Option<(Cell, f64)> {
    CellWalk::new(px, py, angle, resolution)
        .take_while(|&(_, t)| t <= max_dist)
        .find(|&(c, _)| blocked(c))
}

/// True when the straight segment between two points only crosses cells for
/// which `blocked` is false. The end cell is included.
pub fn segment_clear(
    from: (f64, f64),
    to: (f64, f64),
    resolution: f64,
    blocked: impl FnMut(Cell) -> bool,
) -> bool {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let len = dx.hypot(dy);
    if len == 0.0 {
        let mut blocked = blocked;
        return !blocked(Cell::containing(from.0, from.1, resolution));
    }
    let end = Cell::containing(to.0, to.1, resolution);
    let mut blocked = blocked;
    for (cell, t) in CellWalk::new(from.0, from.1, dy.atan2(dx), resolution) {
        if t > len {
            break;
        }
        if blocked(cell) {
            return false;
        }
        if cell == end {
            break;
        }
    }
    true
}

/// Whether a move from `from` to its 8-neighbour `to` is allowed. Diagonal
/// moves may not squeeze between two cells sharing only a corner: both
/// orthogonal side cells must be free.
pub fn step_allowed(blocked: &Grid<bool>, from: Cell, to: Cell) -> bool {
    if blocked.at_or(to, true) {
        return false;
    }
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    if dx != 0 && dy != 0 {
        !blocked.at_or(from.offset(dx, 0), true) && !blocked.at_or(from.offset(0, dy), true)
    } else {
        true
    }
}

/// Multi-source shortest distances over free cells of `blocked`, 8-connected,
/// with orthogonal steps costing `resolution` and diagonal steps
/// `√2·resolution`. Seeds that are blocked are ignored. Unreached and
/// blocked cells are `+∞`.
pub fn distance_transform(blocked: &Grid<bool>, seeds: impl IntoIterator<Item = Cell>, resolution: f64) -> Grid<f64> {
    let (w, h) = (blocked.width(), blocked.height());
    let mut dist = Grid::filled(w, h, f64::INFINITY);
    // Costs are non-negative, so their bit patterns order like the values and
    // the heap compares plain integers.
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    for seed in seeds {
        if blocked.at_or(seed, true) {
            continue;
        }
        let i = seed.y as usize * w + seed.x as usize;
        if dist.data[i] > 0.0 {
            dist.data[i] = 0.0;
            heap.push(Reverse((0.0f64.to_bits(), i)));
        }
    }
    let diag = std::f64::consts::SQRT_2 * resolution;
    let free = |x: usize, y: usize| !blocked.data[y * w + x];
    while let Some(Reverse((bits, index))) = heap.pop() {
        let cost = f64::from_bits(bits);
        if cost > dist.data[index] {
            continue;
        }
        let (x, y) = (index % w, index / w);
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !free(nx, ny) {
                continue;
            }
            let edge = if dx != 0 && dy != 0 {
                // no corner cutting: both orthogonal neighbours must be free
                if !free(nx, y) || !free(x, ny) {
                    continue;
                }
                diag
            } else {
                resolution
            };
            let j = ny * w + nx;
            let candidate = cost + edge;
            if candidate < dist.data[j] {
                dist.data[j] = candidate;
                heap.push(Reverse((candidate.to_bits(), j)));
            }
        }
    }
    dist
}

const NEIGHBORS8: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Cells reachable from `start` through 4-connected free cells.
pub fn flood_fill(blocked: &Grid<bool>, start: Cell) -> Grid<bool> {
    let mut seen = Grid::filled(blocked.width(), blocked.height(), false);
    if blocked.at_or(start, true) {
        return seen;
    }
    let mut stack = vec![start];
    seen.set(start, true);
    while let Some(c) = stack.pop() {
        for n in c.neighbors4() {
            if !blocked.at_or(n, true) && !seen.at_or(n, true) {
                seen.set(n, true);
                stack.push(n);
            }
        }
    }
    seen
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}
