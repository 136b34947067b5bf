//! Backward/forward sweep power flow on the branch-flow equations.
//!
//! Each iteration accumulates sending-end flows leaf-to-slack using the
//! current-squared estimates, refreshes `l = (P^2 + Q^2) / v_from`, then walks
//! slack-to-leaf updating voltages with
//! `v_to = v_from - 2 (r P + x Q) + (r^2 + x^2) l`. Nothing is relaxed: the
//! converged point satisfies `l v_from = P^2 + Q^2` exactly up to the tolerance.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("injection at bus {0}: {1}")]
    Injection(usize, &'static str),
    #[error("voltage collapsed at bus {bus} in iteration {iteration}: load exceeds feeder capability")]
    Diverged { bus: usize, iteration: usize },
    #[error("power flow did not converge after {0} iterations")]
    NotConverged(usize),
}

/// Net injection into the grid at a bus, pu. Positive means generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepSettings {
    /// Stop when voltage-squared and current-squared change less than this, pu^2.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowResult {
    /// Voltage squared per bus, pu^2.
    pub v: Vec<f64>,
    /// Sending-end active flow per line, pu.
    pub p: Vec<f64>,
    /// Sending-end reactive flow per line, pu.
    pub q: Vec<f64>,
    /// Current squared per line, pu^2.
    pub l: Vec<f64>,
    /// Total active losses `sum r l`, pu.
    pub losses: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PowerFlowResult {
    pub fn voltage_magnitudes(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.sqrt()).collect()
    }

    /// Loading per line as a percentage of ampacity.
    pub fn loading_pct(&self, grid: &Grid) -> Vec<f64> {
        self.l
            .iter()
            .zip(&grid.lines)
            .map(|(l, line)| (l.max(0.0) / line.l_max).sqrt() * 100.0)
            .collect()
    }

    /// Active and reactive power drawn from the slack bus, pu.
    pub fn slack_supply(&self, grid: &Grid) -> (f64, f64) {
        let Some(slack) = grid.slack() else { return (0.0, 0.0) };
        grid.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.from == slack)
            .fold((0.0, 0.0), |(p, q), (i, _)| (p + self.p[i], q + self.q[i]))
    }
}

pub fn solve(grid: &Grid, injections: &[Injection]) -> Result<PowerFlowResult, PowerFlowError> {
    solve_with(grid, injections, SweepSettings::default())
}

/// Runs the sweep. Hitting the iteration cap returns a result with
/// `converged == false`; a non-positive voltage is an error.
pub fn solve_with(
    grid: &Grid,
    injections: &[Injection],
    settings: SweepSettings,
) -> Result<PowerFlowResult, PowerFlowError> {
    let topo = grid.topology()?;
    let n = grid.buses.len();
    let m = grid.lines.len();

    let mut p_inj = vec![0.0; n];
    let mut q_inj = vec![0.0; n];
    let mut seen = vec![false; n];
    for inj in injections {
        if inj.bus >= n {
            return Err(PowerFlowError::Injection(inj.bus, "unknown bus"));
        }
        if inj.bus == topo.slack {
            return Err(PowerFlowError::Injection(inj.bus, "slack bus cannot carry an injection"));
        }
        if std::mem::replace(&mut seen[inj.bus], true) {
            return Err(PowerFlowError::Injection(inj.bus, "duplicate injection"));
        }
        if !(inj.p.is_finite() && inj.q.is_finite()) {
            return Err(PowerFlowError::Injection(inj.bus, "non-finite injection"));
        }
        p_inj[inj.bus] = inj.p;
        q_inj[inj.bus] = inj.q;
    }

    let mut v = vec![grid.slack_v; n];
    let mut p = vec![0.0; m];
    let mut q = vec![0.0; m];
    let mut l = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iterations {
        iterations += 1;

        for &li in topo.root_first.iter().rev() {
            let line = &grid.lines[li];
            let j = line.to;
            let (mut ps, mut qs) = (-p_inj[j], -q_inj[j]);
            for &ci in &topo.child_lines[j] {
                ps += p[ci];
                qs += q[ci];
            }
            p[li] = ps + line.r * l[li];
            q[li] = qs + line.x * l[li];
        }

        let mut delta: f64 = 0.0;
        for li in 0..m {
            let vi = v[grid.lines[li].from];
            let new_l = (p[li] * p[li] + q[li] * q[li]) / vi;
            delta = delta.max((new_l - l[li]).abs());
            l[li] = new_l;
        }

        for &li in &topo.root_first {
            let line = &grid.lines[li];
            let z2 = line.r * line.r + line.x * line.x;
            let vj = v[line.from] - 2.0 * (line.r * p[li] + line.x * q[li]) + z2 * l[li];
            if !(vj > 0.0) {
                return Err(PowerFlowError::Diverged { bus: line.to, iteration: iterations });
            }
            delta = delta.max((vj - v[line.to]).abs());
            v[line.to] = vj;
        }

        if delta < settings.tolerance {
            converged = true;
            break;
        }
    }

    // Flows and currents consistent with the final voltages.
    if converged {
        for &li in topo.root_first.iter().rev() {
            let line = &grid.lines[li];
            let j = line.to;
            let (mut ps, mut qs) = (-p_inj[j], -q_inj[j]);
            for &ci in &topo.child_lines[j] {
                ps += p[ci];
                qs += q[ci];
            }
            p[li] = ps + line.r * l[li];
            q[li] = qs + line.x * l[li];
        }
    }

    let losses = grid.lines.iter().zip(&l).map(|(line, l)| line.r * l).sum();
    Ok(PowerFlowResult { v, p, q, l, losses, iterations, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LimitViolation {
    UnderVoltage { bus: usize, v_pu: f64 },
    OverVoltage { bus: usize, v_pu: f64 },
    Overload { line: usize, from: usize, to: usize, loading_pct: f64 },
}

impl LimitViolation {
    pub fn is_voltage(&self) -> bool {
        !matches!(self, LimitViolation::Overload { .. })
    }
}

impl fmt::Display for LimitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LimitViolation::UnderVoltage { bus, v_pu } => {
                write!(f, "under-voltage at bus {bus}, {v_pu:.4} pu")
            }
            LimitViolation::OverVoltage { bus, v_pu } => {
                write!(f, "over-voltage at bus {bus}, {v_pu:.4} pu")
            }
            LimitViolation::Overload { from, to, loading_pct, .. } => {
                write!(f, "overload on line ({from},{to}), {loading_pct:.1}%")
            }
        }
    }
}

/// Voltage and loading limit breaches of a converged power flow.
pub fn check_limits(
    grid: &Grid,
    result: &PowerFlowResult,
) -> Result<Vec<LimitViolation>, PowerFlowError> {
    if !result.converged {
        return Err(PowerFlowError::NotConverged(result.iterations));
    }
    let mut out = Vec::new();
    for (bus, &v) in grid.buses.iter().zip(&result.v) {
        if v < bus.vmin {
            out.push(LimitViolation::UnderVoltage { bus: bus.id, v_pu: v.sqrt() });
        } else if v > bus.vmax {
            out.push(LimitViolation::OverVoltage { bus: bus.id, v_pu: v.sqrt() });
        }
    }
    for (i, (line, &l)) in grid.lines.iter().zip(&result.l).enumerate() {
        if l > line.l_max {
            out.push(LimitViolation::Overload {
                line: i,
                from: line.from,
                to: line.to,
                loading_pct: (l / line.l_max).sqrt() * 100.0,
            });
        }
    }
    Ok(out)
}
