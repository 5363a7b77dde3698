use std::fmt::Write as _;
use std::str::FromStr;

use super::metrics::metrics_columns;
use super::run::run_episode;
use super::spec::ScenarioSpec;
use super::{Paradigm, ScenarioError};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    M,
    Rho,
    LCommFraction,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::M => "m",
            SweepParam::Rho => "rho",
            SweepParam::LCommFraction => "l_comm_fraction",
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "m" => Ok(SweepParam::M),
            "rho" => Ok(SweepParam::Rho),
            "l_comm_fraction" | "l-comm" | "lcomm" => Ok(SweepParam::LCommFraction),
            other => Err(format!(
                "unknown sweep parameter {other:?} (m, rho, l_comm_fraction)"
            )),
        }
    }
}

pub fn sweep_header() -> String {
    format!("param,value,scenario,paradigm,ticks,{}", metrics_columns())
}

/// Runs every `(value, scenario)` pair in order and returns the CSV table,
/// one episode row each.
pub fn sweep(
    model: &Model,
    param: SweepParam,
    values: &[f64],
    scenarios: &[ScenarioSpec],
    paradigm: Paradigm,
) -> Result<String, ScenarioError> {
    if values.is_empty() {
        return Err(ScenarioError::InvalidSpec(
            "sweep needs at least one value".into(),
        ));
    }
    let mut out = sweep_header();
    out.push('\n');
    for &value in values {
        for spec in scenarios {
            let mut cfg = spec.run_config(paradigm);
            match param {
                SweepParam::M => {
                    if value < 0.0 || value.fract() != 0.0 {
                        return Err(ScenarioError::InvalidSpec(format!(
                            "m must be a non-negative integer, got {value}"
                        )));
                    }
                    cfg.m = value as usize;
                }
                SweepParam::Rho => cfg.rho = value,
                SweepParam::LCommFraction => cfg.l_comm_fraction = value,
            }
            let r = run_episode(model, spec, &cfg)?;
            writeln!(
                out,
                "{},{value},{},{},{},{}",
                param.name(),
                spec.name,
                paradigm.name(),
                r.metrics.ticks,
                r.metrics.cells()
            )
            .expect("write to string");
        }
    }
    Ok(out)
}
