//! Plain-text scenario files.
//!
//! One `key = value` per line, `#` starts a comment. Grid rows are listed
//! north to south with `.` for road and `#` for obstacles.
//!
//! ```text
//! name = occluded_a
//! ticks = 40
//! m = 10
//! rho = 0.3
//! l_comm_fraction = 0.1
//! range_m = 200
//! cell_m = 10
//! row = .#...
//! agent = id=0 col=2 row=12 heading=N speed=2 goal=0
//! ped = start=1 path=0,6 1,6 2,6
//! ```
//!
//! Optional keys and defaults: `paradigm` (laco), `seed` (0), `ticks`
//! (200), `m` (10), `rho` (0.3), `l_comm_fraction` (0.1), `range_m` (200),
//! `cell_m` (10), `bandwidth` (1e6 bytes/s), `base_latency` (0.01 s),
//! `dtype` (f32), `blocked_after` (10).

use std::collections::BTreeSet;
use std::path::Path;

use super::world::{Cell, Grid, Heading, Pedestrian, Status, Vehicle, World, MAX_SPEED};
use super::{Paradigm, RunConfig, ScenarioError};
use crate::channel::ChannelConfig;
use crate::sskd::Dtype;
use crate::vocab::MAX_COLUMNS;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: u32,
    pub col: usize,
    pub row: usize,
    pub heading: Heading,
    pub speed: u32,
    pub goal_row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub paradigm: Paradigm,
    pub seed: u64,
    pub ticks: u32,
    pub m: usize,
    pub rho: f64,
    pub l_comm_fraction: f64,
    pub channel: ChannelConfig,
    pub cell_m: f64,
    pub dtype: Dtype,
    pub blocked_after: u32,
    pub grid: Grid,
    pub agents: Vec<AgentSpec>,
    pub pedestrians: Vec<Pedestrian>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ScenarioError> {
    v.parse()
        .map_err(|_| parse_err(line, format!("bad value for {key}: {v:?}")))
}

fn cell(line: usize, s: &str) -> Result<(usize, usize), ScenarioError> {
    let (c, r) = s
        .split_once(',')
        .ok_or_else(|| parse_err(line, format!("expected col,row, got {s:?}")))?;
    Ok((num(line, "col", c)?, num(line, "row", r)?))
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let defaults = ChannelConfig::default();
        let mut name = None;
        let mut paradigm = Paradigm::Laco;
        let mut seed = 0;
        let mut ticks = 200;
        let mut m = 10;
        let mut rho = 0.3;
        let mut l_comm_fraction = 0.1;
        let mut channel = defaults;
        let mut cell_m = 10.0;
        let mut dtype = Dtype::F32;
        let mut blocked_after = 10;
        let mut rows: Vec<Vec<Cell>> = Vec::new();
        let mut agents = Vec::new();
        let mut pedestrians = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            // Grid rows use '#' for obstacles, so take them from the raw line.
            let content = if content.trim_start().starts_with("row") {
                raw
            } else {
                content
            };
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| parse_err(line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "name" => name = Some(value.to_string()),
                "paradigm" => paradigm = value.parse().map_err(|e: String| parse_err(line, e))?,
                "seed" => seed = num(line, key, value)?,
                "ticks" => ticks = num(line, key, value)?,
                "m" => m = num(line, key, value)?,
                "rho" => rho = num(line, key, value)?,
                "l_comm_fraction" => l_comm_fraction = num(line, key, value)?,
                "range_m" => channel.range_m = num(line, key, value)?,
                "bandwidth" => channel.bandwidth_bytes_per_s = num(line, key, value)?,
                "base_latency" => channel.base_latency_s = num(line, key, value)?,
                "cell_m" => cell_m = num(line, key, value)?,
                "dtype" => dtype = value.parse().map_err(|e: String| parse_err(line, e))?,
                "blocked_after" => blocked_after = num(line, key, value)?,
                "row" => {
                    let row = value
                        .chars()
                        .map(|c| match c {
                            '.' => Ok(Cell::Road),
                            '#' => Ok(Cell::Obstacle),
                            other => Err(parse_err(line, format!("bad grid char {other:?}"))),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    rows.push(row);
                }
                "agent" => agents.push(parse_agent(line, value)?),
                "ped" => pedestrians.push(parse_ped(line, value)?),
                other => return Err(parse_err(line, format!("unknown key {other:?}"))),
            }
        }

        let name = name.ok_or_else(|| parse_err(0, "missing name"))?;
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if height == 0 || width == 0 {
            return Err(ScenarioError::InvalidSpec("empty grid".into()));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(ScenarioError::InvalidSpec(
                "grid rows differ in length".into(),
            ));
        }
        let grid = Grid::new(width, height, rows.into_iter().flatten().collect());
        let spec = Self {
            name,
            paradigm,
            seed,
            ticks,
            m,
            rho,
            l_comm_fraction,
            channel,
            cell_m,
            dtype,
            blocked_after,
            grid,
            agents,
            pedestrians,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidSpec(m));
        let (w, h) = (self.grid.width(), self.grid.height());
        if w > MAX_COLUMNS {
            return bad(format!(
                "grid is {w} columns wide, at most {MAX_COLUMNS} supported"
            ));
        }
        if self.agents.is_empty() {
            return bad("no agents".into());
        }
        let mut ids = BTreeSet::new();
        let mut starts = BTreeSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return bad(format!("duplicate agent id {}", a.id));
            }
            if a.col >= w || a.row >= h || a.goal_row >= h {
                return bad(format!("agent {} outside the grid", a.id));
            }
            if self.grid.cell(a.col, a.row) != Cell::Road {
                return bad(format!("agent {} starts on an obstacle", a.id));
            }
            if !starts.insert((a.col, a.row)) {
                return bad(format!("agent {} shares its start cell", a.id));
            }
            if a.speed > MAX_SPEED {
                return bad(format!("agent {} speed above {MAX_SPEED}", a.id));
            }
        }
        for p in &self.pedestrians {
            if p.path.is_empty() || p.path.iter().any(|&(c, r)| c >= w || r >= h) {
                return bad("pedestrian path empty or outside the grid".into());
            }
        }
        if !(self.cell_m > 0.0 && self.cell_m.is_finite()) {
            return bad(format!("cell_m must be positive, got {}", self.cell_m));
        }
        self.channel
            .validate()
            .map_err(ScenarioError::InvalidSpec)?;
        Ok(())
    }

    /// Observation length `W * H + 1`.
    pub fn observation_len(&self) -> usize {
        self.grid.width() * self.grid.height() + 1
    }

    pub fn world(&self) -> World {
        let mut vehicles: Vec<Vehicle> = self
            .agents
            .iter()
            .map(|a| Vehicle {
                id: a.id,
                col: a.col,
                row: a.row,
                heading: a.heading,
                speed: a.speed,
                goal_row: a.goal_row,
                start_row: a.row,
                status: Status::Active,
                idle_ticks: 0,
            })
            .collect();
        vehicles.sort_by_key(|v| v.id);
        World {
            grid: self.grid.clone(),
            vehicles,
            pedestrians: self.pedestrians.clone(),
            tick: 0,
            blocked_after: self.blocked_after,
        }
    }

    /// Run settings taken from the file, for the given paradigm.
    pub fn run_config(&self, paradigm: Paradigm) -> RunConfig {
        RunConfig {
            paradigm,
            m: self.m,
            rho: self.rho,
            l_comm_fraction: self.l_comm_fraction,
            dtype: self.dtype,
            channel: self.channel,
            cell_m: self.cell_m,
            max_ticks: self.ticks,
            record_telemetry: false,
            record_prefill: false,
        }
    }
}

fn parse_agent(line: usize, value: &str) -> Result<AgentSpec, ScenarioError> {
    let (mut id, mut col, mut row, mut heading, mut speed, mut goal) =
        (None, None, None, None, 1, None);
    for field in value.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected key=value, got {field:?}")))?;
        match k {
            "id" => id = Some(num(line, k, v)?),
            "col" => col = Some(num(line, k, v)?),
            "row" => row = Some(num(line, k, v)?),
            "speed" => speed = num(line, k, v)?,
            "goal" => goal = Some(num(line, k, v)?),
            "heading" => {
                heading = Some(match v {
                    "N" | "north" => Heading::North,
                    "S" | "south" => Heading::South,
                    _ => return Err(parse_err(line, format!("bad heading {v:?}"))),
                })
            }
            _ => return Err(parse_err(line, format!("unknown agent field {k:?}"))),
        }
    }
    let need =
        |o: Option<usize>, k: &str| o.ok_or_else(|| parse_err(line, format!("agent missing {k}")));
    Ok(AgentSpec {
        id: id.ok_or_else(|| parse_err(line, "agent missing id"))?,
        col: need(col, "col")?,
        row: need(row, "row")?,
        heading: heading.ok_or_else(|| parse_err(line, "agent missing heading"))?,
        speed,
        goal_row: need(goal, "goal")?,
    })
}

fn parse_ped(line: usize, value: &str) -> Result<Pedestrian, ScenarioError> {
    let mut start_tick = 0;
    let mut path = Vec::new();
    let mut in_path = false;
    for field in value.split_whitespace() {
        if let Some(v) = field.strip_prefix("start=") {
            start_tick = num(line, "start", v)?;
            in_path = false;
        } else if let Some(v) = field.strip_prefix("path=") {
            path.push(cell(line, v)?);
            in_path = true;
        } else if in_path {
            path.push(cell(line, field)?);
        } else {
            return Err(parse_err(line, format!("unexpected {field:?}")));
        }
    }
    Ok(Pedestrian { start_tick, path })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample
name = tiny
ticks = 12
row = .#.
row = ...
agent = id=0 col=2 row=1 heading=N speed=1 goal=0
ped = start=2 path=0,1 1,1
";

    #[test]
    fn parses_sample() {
        let s = ScenarioSpec::parse(SAMPLE).unwrap();
        assert_eq!(s.name, "tiny");
        assert_eq!(s.ticks, 12);
        assert_eq!(s.grid.cell(1, 0), Cell::Obstacle);
        assert_eq!(s.agents[0].heading, Heading::North);
        assert_eq!(s.pedestrians[0].path, vec![(0, 1), (1, 1)]);
        assert_eq!(s.observation_len(), 7);
        assert_eq!(s.m, 10);
    }

    #[test]
    fn reports_line_numbers() {
        let err = ScenarioSpec::parse("name = x\nbogus = 1\n").unwrap_err();
        assert_eq!(
            err,
            ScenarioError::Parse {
                line: 2,
                msg: "unknown key \"bogus\"".into()
            }
        );
    }

    #[test]
    fn rejects_wide_grid_and_bad_agents() {
        assert!(ScenarioSpec::parse(
            "name = x\nrow = ........\nagent = id=0 col=0 row=0 heading=N goal=0\n"
        )
        .is_err());
        assert!(ScenarioSpec::parse(
            "name = x\nrow = #.\nagent = id=0 col=0 row=0 heading=N goal=0\n"
        )
        .is_err());
        assert!(ScenarioSpec::parse("name = x\nrow = ..\n").is_err());
    }
}
