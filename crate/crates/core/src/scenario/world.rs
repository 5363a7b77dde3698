use std::collections::BTreeMap;

use serde::Serialize;

use super::metrics::Infraction;
use crate::vocab::{self, Action};

pub const MAX_SPEED: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Road,
    Obstacle,
}

/// Rectangular map; row 0 is the northern edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl Grid {
    pub fn new(width: usize, height: usize, cells: Vec<Cell>) -> Self {
        assert_eq!(cells.len(), width * height, "grid cell count");
        Self {
            width,
            height,
            cells,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, col: usize, row: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    /// Line of sight between cell centres. Samples `8 * max(|dc|, |dr|)`
    /// points along the segment; any obstacle cell other than the two
    /// endpoints blocks the view.
    pub fn visible(&self, from: (usize, usize), to: (usize, usize)) -> bool {
        let dc = to.0 as f64 - from.0 as f64;
        let dr = to.1 as f64 - from.1 as f64;
        let steps = 8 * (dc.abs().max(dr.abs()) as usize);
        for i in 1..steps {
            let f = i as f64 / steps as f64;
            let c = (from.0 as f64 + 0.5 + dc * f).floor() as usize;
            let r = (from.1 as f64 + 0.5 + dr * f).floor() as usize;
            if (c, r) == from || (c, r) == to {
                continue;
            }
            if self.cell(c, r) == Cell::Obstacle {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Heading {
    North,
    South,
}

impl Heading {
    /// Row delta of one forward cell.
    pub fn dr(self) -> i64 {
        match self {
            Heading::North => -1,
            Heading::South => 1,
        }
    }

    /// Column delta of a left turn.
    pub fn left(self) -> i64 {
        match self {
            Heading::North => -1,
            Heading::South => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Active,
    Finished,
    Collided(Infraction),
    Blocked,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub col: usize,
    pub row: usize,
    pub heading: Heading,
    pub speed: u32,
    pub goal_row: usize,
    pub start_row: usize,
    pub status: Status,
    /// Consecutive `KEEP` ticks spent at zero speed.
    pub idle_ticks: u32,
}

impl Vehicle {
    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    /// Blocked vehicles stay on the road; finished and crashed ones leave.
    pub fn occupies_road(&self) -> bool {
        matches!(self.status, Status::Active | Status::Blocked)
    }

    /// Share of the route covered, in percent.
    pub fn route_completion(&self) -> f64 {
        if self.status == Status::Finished {
            return 100.0;
        }
        let total = self.start_row.abs_diff(self.goal_row);
        if total == 0 {
            return 100.0;
        }
        let done = self.start_row.abs_diff(self.row).min(total);
        100.0 * done as f64 / total as f64
    }

    fn reached_goal(&self, row: usize) -> bool {
        match self.heading {
            Heading::North => row <= self.goal_row,
            Heading::South => row >= self.goal_row,
        }
    }
}

/// A pedestrian walks its path one cell per tick from `start_tick`, waits
/// on the first cell before that, and leaves the map after the last cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pedestrian {
    pub start_tick: u32,
    pub path: Vec<(usize, usize)>,
}

impl Pedestrian {
    pub fn position(&self, tick: u32) -> Option<(usize, usize)> {
        let idx = tick.saturating_sub(self.start_tick) as usize;
        self.path.get(idx).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldEvent {
    pub tick: u32,
    pub agent: u32,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Infraction(Infraction),
    Finished,
    Blocked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub grid: Grid,
    pub vehicles: Vec<Vehicle>,
    pub pedestrians: Vec<Pedestrian>,
    pub tick: u32,
    pub blocked_after: u32,
}

impl World {
    pub fn vehicle(&self, id: u32) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn active_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .vehicles
            .iter()
            .filter(|v| v.is_active())
            .map(|v| v.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn pedestrian_cells(&self, tick: u32) -> Vec<(usize, usize)> {
        self.pedestrians
            .iter()
            .filter_map(|p| p.position(tick))
            .collect()
    }

    /// Map-anchored raster, row-major from the north-west corner, followed
    /// by the observer's ego marker. Length `W * H + 1`.
    pub fn observe(&self, agent: u32) -> Option<Vec<u32>> {
        let me = self.vehicle(agent)?;
        let here = (me.col, me.row);
        let peds = self.pedestrian_cells(self.tick);
        let mut out = Vec::with_capacity(self.grid.width * self.grid.height + 1);
        for row in 0..self.grid.height {
            for col in 0..self.grid.width {
                let cell = (col, row);
                let tok = if cell == here {
                    vocab::CLEAR
                } else if !self.grid.visible(here, cell) {
                    vocab::OCCLUDED
                } else if self.grid.cell(col, row) == Cell::Obstacle {
                    vocab::OBSTACLE
                } else if peds.contains(&cell) {
                    vocab::hazard(col)
                } else if self
                    .vehicles
                    .iter()
                    .any(|v| v.id != agent && v.occupies_road() && (v.col, v.row) == cell)
                {
                    vocab::VEHICLE
                } else if col == me.col && row == me.goal_row {
                    vocab::GOAL
                } else {
                    vocab::CLEAR
                };
                out.push(tok);
            }
        }
        out.push(vocab::ego_marker(me.col, me.speed == 0));
        Some(out)
    }

    /// Advances one tick. Pedestrians move first, then every active
    /// vehicle applies its action and sweeps the cells it crosses.
    pub fn step(&mut self, actions: &BTreeMap<u32, Action>) -> Vec<WorldEvent> {
        self.tick += 1;
        let tick = self.tick;
        let peds = self.pedestrian_cells(tick);
        let mut events = Vec::new();
        let blocked_after = self.blocked_after;
        let grid = &self.grid;

        for v in self.vehicles.iter_mut().filter(|v| v.is_active()) {
            let action = actions.get(&v.id).copied().unwrap_or(Action::Keep);
            let mut lateral = 0i64;
            match action {
                Action::Accel => v.speed = (v.speed + 1).min(MAX_SPEED),
                Action::Keep => {}
                Action::Brake => v.speed = 0,
                Action::Left => lateral = v.heading.left(),
                Action::Right => lateral = -v.heading.left(),
            }
            if action == Action::Keep && v.speed == 0 {
                v.idle_ticks += 1;
            } else {
                v.idle_ticks = 0;
            }

            let mut path = Vec::new();
            if lateral != 0 {
                let c = v.col as i64 + lateral;
                if grid.in_bounds(c, v.row as i64) {
                    path.push((c as usize, v.row));
                }
            } else {
                for k in 1..=v.speed as i64 {
                    let r = v.row as i64 + v.heading.dr() * k;
                    if !grid.in_bounds(v.col as i64, r) {
                        break;
                    }
                    path.push((v.col, r as usize));
                    if v.reached_goal(r as usize) {
                        break;
                    }
                }
            }
            if path.is_empty() {
                path.push((v.col, v.row));
            }

            let mut outcome = None;
            for &(c, r) in &path {
                (v.col, v.row) = (c, r);
                if grid.cell(c, r) == Cell::Obstacle {
                    outcome = Some(Infraction::CollisionStatic);
                } else if peds.contains(&(c, r)) {
                    outcome = Some(Infraction::CollisionPedestrian);
                }
                if outcome.is_some() {
                    break;
                }
            }
            if let Some(inf) = outcome {
                v.status = Status::Collided(inf);
                v.speed = 0;
                events.push(WorldEvent {
                    tick,
                    agent: v.id,
                    kind: EventKind::Infraction(inf),
                });
            } else if v.reached_goal(v.row) {
                v.status = Status::Finished;
                events.push(WorldEvent {
                    tick,
                    agent: v.id,
                    kind: EventKind::Finished,
                });
            } else if v.idle_ticks >= blocked_after {
                v.status = Status::Blocked;
                events.push(WorldEvent {
                    tick,
                    agent: v.id,
                    kind: EventKind::Blocked,
                });
            }
        }

        let mut occupied: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.occupies_road() {
                occupied.entry((v.col, v.row)).or_default().push(i);
            }
        }
        for idx in occupied.into_values().filter(|ix| ix.len() > 1) {
            for i in idx {
                let v = &mut self.vehicles[i];
                v.status = Status::Collided(Infraction::CollisionVehicle);
                events.push(WorldEvent {
                    tick,
                    agent: v.id,
                    kind: EventKind::Infraction(Infraction::CollisionVehicle),
                });
            }
        }
        events
    }

    /// Marks every still-active vehicle as timed out.
    pub fn expire(&mut self) -> Vec<WorldEvent> {
        let tick = self.tick;
        self.vehicles
            .iter_mut()
            .filter(|v| v.is_active())
            .map(|v| {
                v.status = Status::TimedOut;
                WorldEvent {
                    tick,
                    agent: v.id,
                    kind: EventKind::Infraction(Infraction::Timeout),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> Grid {
        let w = rows[0].len();
        let cells = rows
            .iter()
            .flat_map(|r| {
                r.chars()
                    .map(|c| if c == '#' { Cell::Obstacle } else { Cell::Road })
            })
            .collect();
        Grid::new(w, rows.len(), cells)
    }

    fn car(
        id: u32,
        col: usize,
        row: usize,
        heading: Heading,
        speed: u32,
        goal_row: usize,
    ) -> Vehicle {
        Vehicle {
            id,
            col,
            row,
            heading,
            speed,
            goal_row,
            start_row: row,
            status: Status::Active,
            idle_ticks: 0,
        }
    }

    #[test]
    fn obstacle_blocks_view() {
        let g = grid(&["...", ".#.", "..."]);
        assert!(!g.visible((1, 0), (1, 2)));
        assert!(g.visible((0, 0), (0, 2)));
        assert!(g.visible((1, 0), (1, 1)));
    }

    #[test]
    fn hidden_pedestrian_is_not_observed() {
        let world = World {
            grid: grid(&["...", ".#.", "..."]),
            vehicles: vec![car(0, 1, 2, Heading::North, 1, 0)],
            pedestrians: vec![Pedestrian {
                start_tick: 0,
                path: vec![(1, 0)],
            }],
            tick: 0,
            blocked_after: 10,
        };
        let obs = world.observe(0).unwrap();
        assert_eq!(obs.len(), 10);
        assert_eq!(obs[1], vocab::OCCLUDED);
        assert!(!obs.iter().any(|&t| vocab::is_hazard(t)));
        assert_eq!(obs, world.observe(0).unwrap());
    }

    #[test]
    fn sweeping_into_pedestrian_collides() {
        let mut world = World {
            grid: grid(&["...", "...", "...", "..."]),
            vehicles: vec![car(0, 1, 3, Heading::North, 2, 0)],
            pedestrians: vec![Pedestrian {
                start_tick: 0,
                path: vec![(0, 2), (1, 2)],
            }],
            tick: 0,
            blocked_after: 10,
        };
        let ev = world.step(&BTreeMap::from([(0, Action::Keep)]));
        assert_eq!(
            ev[0].kind,
            EventKind::Infraction(Infraction::CollisionPedestrian)
        );
        assert_eq!((world.vehicles[0].col, world.vehicles[0].row), (1, 2));
    }

    #[test]
    fn goal_and_blocked() {
        let mut world = World {
            grid: grid(&["..", ".."]),
            vehicles: vec![
                car(0, 0, 1, Heading::North, 2, 0),
                car(1, 1, 1, Heading::North, 0, 0),
            ],
            pedestrians: vec![],
            tick: 0,
            blocked_after: 2,
        };
        world.step(&BTreeMap::from([(0, Action::Keep), (1, Action::Keep)]));
        assert_eq!(world.vehicles[0].status, Status::Finished);
        assert_eq!(world.vehicles[0].route_completion(), 100.0);
        world.step(&BTreeMap::from([(1, Action::Keep)]));
        assert_eq!(world.vehicles[1].status, Status::Blocked);
        assert_eq!(world.vehicles[1].route_completion(), 0.0);
    }

    #[test]
    fn head_on_vehicles_collide() {
        let mut world = World {
            grid: grid(&[".", ".", "."]),
            vehicles: vec![
                car(0, 0, 2, Heading::North, 1, 0),
                car(1, 0, 0, Heading::South, 1, 2),
            ],
            pedestrians: vec![],
            tick: 0,
            blocked_after: 10,
        };
        world.step(&BTreeMap::new());
        assert!(world
            .vehicles
            .iter()
            .all(|v| v.status == Status::Collided(Infraction::CollisionVehicle)));
    }
}
