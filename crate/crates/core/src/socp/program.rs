//! Standard-form cone programs and the solver seam.
//!
//! A program is `minimize c'x` subject to `A x = b` and a list of cone
//! memberships over variable index lists. Variables may appear in several
//! cones; the backend copies them into its own slack space.

use std::collections::BTreeMap;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use super::SocpError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cone", content = "vars", rename_all = "snake_case")]
pub enum Cone {
    /// Every listed variable is nonnegative.
    NonNegative(Vec<usize>),
    /// `x[vars[0]] >= ||(x[vars[1]], ..)||`.
    SecondOrder(Vec<usize>),
}

/// `minimize objective'x  s.t.  A x = b,  cones`.
///
/// Dumped as JSON this is the debugging format: `objective` is dense,
/// `eq_triplets` are `(row, col, value)`, and `cones` lists index sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub labels: Vec<String>,
    pub objective: Vec<f64>,
    pub eq_triplets: Vec<(usize, usize, f64)>,
    pub eq_rhs: Vec<f64>,
    pub cones: Vec<Cone>,
    /// Multiplies `objective'x` into EUR.
    pub euro_per_unit: f64,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self { euro_per_unit: 1.0, ..Self::default() }
    }

    pub fn add_var(&mut self, label: impl Into<String>) -> usize {
        self.labels.push(label.into());
        self.objective.push(0.0);
        self.n_vars += 1;
        self.n_vars - 1
    }

    pub fn set_cost(&mut self, var: usize, c: f64) {
        self.objective[var] = c;
    }

    /// Adds `sum coef * x[var] = rhs`.
    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.eq_rhs.len();
        self.eq_triplets.extend(terms.iter().map(|&(c, v)| (row, c, v)));
        self.eq_rhs.push(rhs);
    }

    /// Introduces a variable pinned to `value`.
    pub fn add_const(&mut self, label: impl Into<String>, value: f64) -> usize {
        let v = self.add_var(label);
        self.add_eq(&[(v, 1.0)], value);
        v
    }

    /// Adds `sum coef * x[var] + offset >= 0` through a nonnegative slack.
    pub fn add_ge(&mut self, label: impl Into<String>, terms: &[(usize, f64)], offset: f64) -> usize {
        let s = self.add_var(label);
        let mut row: Vec<(usize, f64)> = terms.to_vec();
        row.push((s, -1.0));
        self.add_eq(&row, -offset);
        self.add_nonneg(s);
        s
    }

    pub fn add_nonneg(&mut self, var: usize) {
        match self.cones.last_mut() {
            Some(Cone::NonNegative(vars)) => vars.push(var),
            _ => self.cones.push(Cone::NonNegative(vec![var])),
        }
    }

    pub fn add_soc(&mut self, vars: Vec<usize>) {
        self.cones.push(Cone::SecondOrder(vars));
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn soc_count(&self) -> usize {
        self.cones.iter().filter(|c| matches!(c, Cone::SecondOrder(_))).count()
    }

    pub fn check(&self) -> Result<(), SocpError> {
        let n = self.n_vars;
        if self.objective.len() != n || self.labels.len() != n {
            return Err(SocpError::Malformed("objective/label length differs from n_vars".into()));
        }
        if let Some(&(r, c, _)) =
            self.eq_triplets.iter().find(|(r, c, _)| *r >= self.eq_rhs.len() || *c >= n)
        {
            return Err(SocpError::Malformed(format!("triplet ({r},{c}) out of range")));
        }
        for cone in &self.cones {
            match cone {
                Cone::NonNegative(v) if v.iter().any(|&i| i >= n) => {
                    return Err(SocpError::Malformed("cone index out of range".into()))
                }
                Cone::SecondOrder(v) if v.len() < 2 || v.iter().any(|&i| i >= n) => {
                    return Err(SocpError::Malformed("second-order cone malformed".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Max absolute residual of `A x - b`.
    pub fn eq_residual(&self, x: &[f64]) -> f64 {
        let mut r: Vec<f64> = self.eq_rhs.iter().map(|b| -b).collect();
        for &(row, col, v) in &self.eq_triplets {
            r[row] += v * x[col];
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest amount by which `x` leaves any cone.
    pub fn cone_violation(&self, x: &[f64]) -> f64 {
        self.cones.iter().fold(0.0_f64, |m, cone| match cone {
            Cone::NonNegative(v) => v.iter().fold(m, |m, &i| m.max(-x[i])),
            Cone::SecondOrder(v) => {
                let norm = v[1..].iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
                m.max(norm - x[v[0]])
            }
        })
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time_s: f64,
    pub eq_residual: f64,
    pub cone_violation: f64,
    /// Backend status text, for diagnostics.
    pub detail: String,
}

pub trait ConicSolver: Send + Sync {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution, SocpError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    /// Residual bound for declaring a solution optimal.
    pub accept_residual: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol_gap: 1e-10, tol_feas: 1e-10, max_iter: 200, accept_residual: 1e-7 }
    }
}

/// Interior-point backend built on the Clarabel solver.
#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub settings: SolverSettings,
}

impl ClarabelBackend {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings }
    }
}

impl ConicSolver for ClarabelBackend {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution, SocpError> {
        program.check()?;
        let n = program.n_vars;
        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(r, c, v) in &program.eq_triplets {
            *entries.entry((c, r)).or_default() += v;
        }
        let mut b = program.eq_rhs.clone();
        let mut cones = vec![SupportedConeT::ZeroConeT(program.n_eq())];
        let mut row = program.n_eq();
        for cone in &program.cones {
            let vars = match cone {
                Cone::NonNegative(v) => {
                    cones.push(SupportedConeT::NonnegativeConeT(v.len()));
                    v
                }
                Cone::SecondOrder(v) => {
                    cones.push(SupportedConeT::SecondOrderConeT(v.len()));
                    v
                }
            };
            for &var in vars {
                // -x + s = 0, s in cone
                *entries.entry((var, row)).or_default() -= 1.0;
                b.push(0.0);
                row += 1;
            }
        }
        if program.n_eq() == 0 {
            cones.remove(0);
        }
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        for (&(c, r), &v) in &entries {
            if v != 0.0 {
                ii.push(r);
                jj.push(c);
                vv.push(v);
            }
        }
        let a = CscMatrix::new_from_triplets(row, n, ii, jj, vv);
        let p = CscMatrix::zeros((n, n));
        let s = &self.settings;
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(s.max_iter)
            .tol_gap_abs(s.tol_gap)
            .tol_gap_rel(s.tol_gap)
            .tol_feas(s.tol_feas)
            .max_threads(1)
            .build()
            .map_err(|e| SocpError::Backend(e.to_string()))?;

        // The solver sees the objective normalized to unit max-norm, so cost
        // vectors that differ by a positive factor give the same iterates.
        let c_max = program.objective.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let q: Vec<f64> = if c_max > 0.0 {
            program.objective.iter().map(|c| c / c_max).collect()
        } else {
            program.objective.clone()
        };

        let start = Instant::now();
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| SocpError::Backend(e.to_string()))?;
        solver.solve();
        let elapsed = start.elapsed().as_secs_f64();
        let sol = &solver.solution;
        let x = sol.x.clone();
        let eq_residual = program.eq_residual(&x);
        let cone_violation = program.cone_violation(&x);
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved
                if eq_residual <= s.accept_residual && cone_violation <= s.accept_residual =>
            {
                SolveStatus::Optimal
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            _ => SolveStatus::NumericalLimit,
        };
        Ok(ConicSolution {
            objective: program.objective_value(&x),
            x,
            status,
            iterations: sol.iterations,
            solve_time_s: elapsed,
            eq_residual,
            cone_violation,
            detail: format!("{:?}", sol.status),
        })
    }
}
