//! Radial low-voltage network model.
//!
//! All electrical quantities are stored in per-unit. Voltages are stored
//! squared (`v = |V|^2`) to line up with the branch-flow variables used by the
//! power flow and the coordination model; magnitudes are only computed for
//! reporting.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default lower voltage bound, 0.9 pu magnitude.
pub const DEFAULT_VMIN_PU: f64 = 0.9;
/// Default upper voltage bound, 1.1 pu magnitude.
pub const DEFAULT_VMAX_PU: f64 = 1.1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("topology error: {0}")]
    Topology(String),
    #[error("grid failed validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<TopologyViolation>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "household")]
pub enum BusKind {
    Slack,
    Junction,
    /// Connection point of exactly one household, carrying its index.
    Household(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Lower bound on voltage squared, pu^2.
    pub vmin: f64,
    /// Upper bound on voltage squared, pu^2.
    pub vmax: f64,
}

impl Bus {
    pub fn new(id: usize, kind: BusKind) -> Self {
        Self {
            id,
            kind,
            vmin: DEFAULT_VMIN_PU * DEFAULT_VMIN_PU,
            vmax: DEFAULT_VMAX_PU * DEFAULT_VMAX_PU,
        }
    }

    pub fn household(&self) -> Option<usize> {
        match self.kind {
            BusKind::Household(h) => Some(h),
            _ => None,
        }
    }
}

/// A cable section. After [`Grid::new`] lines point away from the slack bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Resistance, pu.
    pub r: f64,
    /// Reactance, pu.
    pub x: f64,
    /// Ampacity squared, pu^2.
    pub l_max: f64,
}

impl Line {
    pub fn endpoints(&self) -> (usize, usize) {
        (self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    /// Three-phase base power, VA.
    pub base_power: f64,
    /// Line-to-line base voltage, V.
    pub base_voltage: f64,
    /// Slack voltage squared, pu^2.
    pub slack_v: f64,
}

/// One reason a grid is unusable. The `Display` text names the offending element.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologyViolation {
    SlackCount(usize),
    BusIdMismatch { index: usize, id: usize },
    VoltageBounds(usize),
    HouseholdIds(String),
    UnknownBus { from: usize, to: usize },
    NonFinite { from: usize, to: usize },
    NegativeImpedance { from: usize, to: usize },
    DegenerateImpedance { from: usize, to: usize },
    Ampacity { from: usize, to: usize },
    Disconnected(usize),
    Cycle { from: usize, to: usize },
    MultipleParents(usize),
    TowardSlack { from: usize, to: usize },
    EdgeCount { lines: usize, buses: usize },
    BadBase,
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TopologyViolation::*;
        match self {
            SlackCount(n) => write!(f, "expected exactly one slack bus, found {n}"),
            BusIdMismatch { index, id } => write!(f, "bus at index {index} has id {id}"),
            VoltageBounds(b) => write!(f, "voltage bounds on bus {b} violate 0 < vmin < vmax"),
            HouseholdIds(msg) => write!(f, "household ids: {msg}"),
            UnknownBus { from, to } => write!(f, "line ({from},{to}) references unknown bus"),
            NonFinite { from, to } => write!(f, "non-finite parameter on line ({from},{to})"),
            NegativeImpedance { from, to } => write!(f, "negative impedance on line ({from},{to})"),
            DegenerateImpedance { from, to } => {
                write!(f, "degenerate impedance on line ({from},{to})")
            }
            Ampacity { from, to } => write!(f, "non-positive ampacity on line ({from},{to})"),
            Disconnected(b) => write!(f, "disconnected bus {b}"),
            Cycle { from, to } => write!(f, "cycle through line ({from},{to})"),
            MultipleParents(b) => write!(f, "bus {b} has more than one parent line"),
            TowardSlack { from, to } => write!(f, "line ({from},{to}) is directed toward the slack"),
            EdgeCount { lines, buses } => {
                write!(f, "{lines} lines for {buses} buses, a tree needs {}", buses.saturating_sub(1))
            }
            BadBase => write!(f, "base power, base voltage and slack voltage must be positive"),
        }
    }
}

/// Parent/child structure of a validated radial grid.
#[derive(Debug, Clone)]
pub struct Topology {
    /// Line feeding each bus; `None` for the slack.
    pub parent_line: Vec<Option<usize>>,
    /// Lines leaving each bus.
    pub child_lines: Vec<Vec<usize>>,
    /// Lines in slack-to-leaf (breadth-first) order.
    pub root_first: Vec<usize>,
    pub slack: usize,
}

impl Grid {
    /// Assembles a grid and orients every line away from the slack bus when the
    /// undirected structure allows it. Nothing is validated here; call
    /// [`Grid::validate`].
    pub fn new(
        buses: Vec<Bus>,
        mut lines: Vec<Line>,
        base_power: f64,
        base_voltage: f64,
        slack_v: f64,
    ) -> Self {
        orient_lines(&buses, &mut lines);
        Self { buses, lines, base_power, base_voltage, slack_v }
    }

    pub fn slack(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    pub fn household_buses(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.buses.iter().filter_map(|b| b.household().map(|h| (h, b.id)))
    }

    pub fn n_households(&self) -> usize {
        self.household_buses().count()
    }

    /// Bus index hosting household `h`.
    pub fn bus_of_household(&self, h: usize) -> Option<usize> {
        self.household_buses().find(|&(hh, _)| hh == h).map(|(_, b)| b)
    }

    pub fn z_base(&self) -> f64 {
        self.base_voltage * self.base_voltage / self.base_power
    }

    pub fn i_base(&self) -> f64 {
        self.base_power / (3f64.sqrt() * self.base_voltage)
    }

    pub fn impedance_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.z_base()
    }

    pub fn impedance_to_si(&self, pu: f64) -> f64 {
        pu * self.z_base()
    }

    pub fn current_to_pu(&self, amp: f64) -> f64 {
        amp / self.i_base()
    }

    pub fn current_to_si(&self, pu: f64) -> f64 {
        pu * self.i_base()
    }

    /// kW (or kvar) to pu.
    pub fn power_to_pu(&self, kw: f64) -> f64 {
        kw * 1e3 / self.base_power
    }

    /// pu to kW (or kvar).
    pub fn power_to_kw(&self, pu: f64) -> f64 {
        pu * self.base_power / 1e3
    }

    /// Lists every broken invariant. Empty iff the grid is a well-formed radial
    /// network rooted at a single slack bus.
    pub fn validate(&self) -> Vec<TopologyViolation> {
        use TopologyViolation as V;
        let mut out = Vec::new();
        let n = self.buses.len();

        if !(self.base_power > 0.0 && self.base_voltage > 0.0 && self.slack_v > 0.0)
            || !(self.base_power.is_finite() && self.base_voltage.is_finite())
        {
            out.push(V::BadBase);
        }

        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            out.push(V::SlackCount(slacks));
        }
        for (i, b) in self.buses.iter().enumerate() {
            if b.id != i {
                out.push(V::BusIdMismatch { index: i, id: b.id });
            }
            if !(b.vmin > 0.0 && b.vmin < b.vmax && b.vmax.is_finite()) {
                out.push(V::VoltageBounds(b.id));
            }
        }

        let mut hh: Vec<usize> = self.household_buses().map(|(h, _)| h).collect();
        hh.sort_unstable();
        for (expect, &h) in hh.iter().enumerate() {
            if h != expect {
                out.push(V::HouseholdIds(format!(
                    "expected contiguous ids 0..{}, found {h} at position {expect}",
                    hh.len()
                )));
                break;
            }
        }

        let mut structural_ok = true;
        for l in &self.lines {
            let (from, to) = l.endpoints();
            if from >= n || to >= n || from == to {
                out.push(V::UnknownBus { from, to });
                structural_ok = false;
                continue;
            }
            if ![l.r, l.x, l.l_max].iter().all(|v| v.is_finite()) {
                out.push(V::NonFinite { from, to });
            } else if l.r < 0.0 || l.x < 0.0 {
                out.push(V::NegativeImpedance { from, to });
            } else if l.r + l.x <= 0.0 {
                out.push(V::DegenerateImpedance { from, to });
            }
            if !(l.l_max > 0.0) {
                out.push(V::Ampacity { from, to });
            }
        }

        if structural_ok && slacks == 1 {
            let slack = self.slack().unwrap_or(0);
            let (reached, cycles) = undirected_search(n, &self.lines, slack);
            let mut explained = false;
            for (b, seen) in reached.iter().enumerate() {
                if !seen {
                    out.push(V::Disconnected(b));
                    explained = true;
                }
            }
            for li in cycles {
                let (from, to) = self.lines[li].endpoints();
                out.push(V::Cycle { from, to });
                explained = true;
            }
            let mut parents = vec![0usize; n];
            for l in &self.lines {
                parents[l.to] += 1;
                if l.to == slack {
                    out.push(V::TowardSlack { from: l.from, to: l.to });
                }
            }
            for (b, &c) in parents.iter().enumerate() {
                if c > 1 && !explained {
                    out.push(V::MultipleParents(b));
                }
            }
            if !explained && self.lines.len() + 1 != n {
                out.push(V::EdgeCount { lines: self.lines.len(), buses: n });
            }
        }
        out
    }

    /// Errors unless [`Grid::validate`] comes back empty.
    pub fn ensure_valid(&self) -> Result<(), GridError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(GridError::Invalid(v))
        }
    }

    /// Parent/child structure following line directions from the slack.
    pub fn topology(&self) -> Result<Topology, GridError> {
        let n = self.buses.len();
        let slack = self
            .slack()
            .ok_or_else(|| GridError::Topology("no slack bus".into()))?;
        let mut parent_line = vec![None; n];
        let mut child_lines = vec![Vec::new(); n];
        for (li, l) in self.lines.iter().enumerate() {
            if l.from >= n || l.to >= n {
                return Err(GridError::Topology(format!(
                    "line ({},{}) references unknown bus",
                    l.from, l.to
                )));
            }
            if parent_line[l.to].replace(li).is_some() || l.to == slack {
                return Err(GridError::Topology(format!(
                    "cycle detected at line ({},{})",
                    l.from, l.to
                )));
            }
            child_lines[l.from].push(li);
        }
        let mut root_first = Vec::with_capacity(self.lines.len());
        let mut queue = VecDeque::from([slack]);
        let mut visited = vec![false; n];
        visited[slack] = true;
        while let Some(b) = queue.pop_front() {
            for &li in &child_lines[b] {
                let to = self.lines[li].to;
                if std::mem::replace(&mut visited[to], true) {
                    return Err(GridError::Topology(format!(
                        "cycle detected at line ({},{})",
                        self.lines[li].from, to
                    )));
                }
                root_first.push(li);
                queue.push_back(to);
            }
        }
        if root_first.len() != self.lines.len() {
            return Err(GridError::Topology(
                "lines unreachable from the slack (cycle or disconnected section)".into(),
            ));
        }
        Ok(Topology { parent_line, child_lines, root_first, slack })
    }

    /// Line indices ordered leaves-first: every line comes after all lines of
    /// its downstream subtree. Reversing gives slack-to-leaf order.
    pub fn downstream_order(&self) -> Result<Vec<usize>, GridError> {
        let mut order = self.topology()?.root_first;
        order.reverse();
        Ok(order)
    }
}

/// Breadth-first search ignoring direction. Returns reached flags and the
/// indices of lines closing a cycle.
fn undirected_search(n: usize, lines: &[Line], root: usize) -> (Vec<bool>, Vec<usize>) {
    let mut adj = vec![Vec::new(); n];
    for (li, l) in lines.iter().enumerate() {
        adj[l.from].push((li, l.to));
        adj[l.to].push((li, l.from));
    }
    let mut seen = vec![false; n];
    let mut used = vec![false; lines.len()];
    let mut cycles = Vec::new();
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(b) = queue.pop_front() {
        for &(li, other) in &adj[b] {
            if std::mem::replace(&mut used[li], true) {
                continue;
            }
            if seen[other] {
                cycles.push(li);
            } else {
                seen[other] = true;
                queue.push_back(other);
            }
        }
    }
    (seen, cycles)
}

fn orient_lines(buses: &[Bus], lines: &mut [Line]) {
    let n = buses.len();
    let Some(slack) = buses.iter().position(|b| b.kind == BusKind::Slack) else {
        return;
    };
    if lines.iter().any(|l| l.from >= n || l.to >= n) {
        return;
    }
    let mut adj = vec![Vec::new(); n];
    for (li, l) in lines.iter().enumerate() {
        adj[l.from].push(li);
        adj[l.to].push(li);
    }
    let mut seen = vec![false; n];
    let mut done = vec![false; lines.len()];
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(b) = queue.pop_front() {
        for &li in &adj[b] {
            if std::mem::replace(&mut done[li], true) {
                continue;
            }
            let l = &mut lines[li];
            if l.to == b {
                std::mem::swap(&mut l.from, &mut l.to);
            }
            if !seen[l.to] {
                seen[l.to] = true;
                queue.push_back(l.to);
            }
        }
    }
}
