//! Finite discounted Markov decision processes and their exact solution.
//!
//! An [`Mdp`] stores the transition kernel `q(y|x,a)` and the reward
//! `r(x,a,y)` as dense row-major tensors indexed `[x][a][y]`. Every state
//! shares the same action set.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for kernel row sums and other probability-simplex checks.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("mdp must have at least one state and one action (got {states} states, {actions} actions)")]
    Empty { states: usize, actions: usize },
    #[error("{tensor} tensor has inconsistent shape: {detail}")]
    Shape { tensor: &'static str, detail: String },
    #[error("invalid mdp: {0}")]
    Invalid(ValidationReport),
    #[error("table is {got_states}x{got_actions}, mdp is {states}x{actions}")]
    TableMismatch {
        states: usize,
        actions: usize,
        got_states: usize,
        got_actions: usize,
    },
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("q table contains a non-finite entry")]
    NonFiniteTable,
}

/// One violated invariant of an [`Mdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { state: usize, action: usize, sum: f64 },
    NegativeProbability { state: usize, action: usize, next: usize, value: f64 },
    NonFiniteProbability { state: usize, action: usize, next: usize },
    NonFiniteReward { state: usize, action: usize, next: usize },
    DiscountOutOfRange(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::RowSum { state, action, sum } => {
                write!(f, "row (x={state},a={action}) sums to {}", short_float(sum))
            }
            Violation::NegativeProbability { state, action, next, value } => {
                write!(f, "q(y={next}|x={state},a={action}) = {value} is negative")
            }
            Violation::NonFiniteProbability { state, action, next } => {
                write!(f, "q(y={next}|x={state},a={action}) is not finite")
            }
            Violation::NonFiniteReward { state, action, next } => {
                write!(f, "r(x={state},a={action},y={next}) is not finite")
            }
            Violation::DiscountOutOfRange(beta) => {
                write!(f, "discount out of range: {beta} not in [0,1)")
            }
        }
    }
}

/// Twelve significant digits, trailing zeros dropped.
fn short_float(v: f64) -> String {
    let text = format!("{:.*e}", 11, v);
    let (mantissa, exp) = text.split_once('e').expect("exponent form");
    let rounded: f64 = format!("{mantissa}e{exp}").parse().expect("round trip");
    rounded.to_string()
}

/// Every invariant violation found by [`Mdp::validate`]; empty iff the MDP is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// A finite MDP with discounted reward.
///
/// Construction only checks tensor shapes, so an `Mdp` may hold an invalid
/// kernel; [`Mdp::validate`] lists the problems and every solver rejects an
/// invalid instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    kernel: Vec<f64>,
    reward: Vec<f64>,
}

impl Mdp {
    /// Builds an MDP from flat `[x][a][y]` tensors of length `|X|·|A|·|X|`.
    pub fn from_flat(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        kernel: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if num_states == 0 || num_actions == 0 {
            return Err(MdpError::Empty { states: num_states, actions: num_actions });
        }
        let len = num_states * num_actions * num_states;
        for (name, t) in [("kernel", &kernel), ("reward", &reward)] {
            if t.len() != len {
                return Err(MdpError::Shape {
                    tensor: name,
                    detail: format!("expected {len} entries, got {}", t.len()),
                });
            }
        }
        Ok(Mdp { num_states, num_actions, discount, kernel, reward })
    }

    /// Builds an MDP from nested `[x][a][y]` tensors. Ragged tensors, including
    /// a state with a different number of actions, are rejected.
    pub fn from_nested(
        discount: f64,
        kernel: &[Vec<Vec<f64>>],
        reward: &[Vec<Vec<f64>>],
    ) -> Result<Self, MdpError> {
        let num_states = kernel.len();
        let num_actions = kernel.first().map_or(0, |rows| rows.len());
        if num_states == 0 || num_actions == 0 {
            return Err(MdpError::Empty { states: num_states, actions: num_actions });
        }
        let kernel = flatten("kernel", kernel, num_states, num_actions)?;
        let reward = flatten("reward", reward, num_states, num_actions)?;
        Self::from_flat(num_states, num_actions, discount, kernel, reward)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    #[inline]
    fn offset(&self, x: usize, a: usize) -> usize {
        (x * self.num_actions + a) * self.num_states
    }

    /// The distribution `q(·|x,a)`.
    #[inline]
    pub fn transitions(&self, x: usize, a: usize) -> &[f64] {
        let o = self.offset(x, a);
        &self.kernel[o..o + self.num_states]
    }

    /// The rewards `r(x,a,·)`.
    #[inline]
    pub fn rewards(&self, x: usize, a: usize) -> &[f64] {
        let o = self.offset(x, a);
        &self.reward[o..o + self.num_states]
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize, y: usize) -> f64 {
        self.kernel[self.offset(x, a) + y]
    }

    #[inline]
    pub fn reward(&self, x: usize, a: usize, y: usize) -> f64 {
        self.reward[self.offset(x, a) + y]
    }

    /// Expected one-step reward `Σ_y q(y|x,a) r(x,a,y)`.
    pub fn expected_reward(&self, x: usize, a: usize) -> f64 {
        self.transitions(x, a)
            .iter()
            .zip(self.rewards(x, a))
            .map(|(p, r)| p * r)
            .sum()
    }

    /// `max |r(x,a,y)|` over all triples.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Nested `[x][a][y]` copies of the kernel and reward tensors.
    pub fn to_nested(&self) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
        let nest = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            flat.chunks(self.num_actions * self.num_states)
                .map(|s| s.chunks(self.num_states).map(<[f64]>::to_vec).collect())
                .collect()
        };
        (nest(&self.kernel), nest(&self.reward))
    }

    /// Lists every violated invariant.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if !(0.0..1.0).contains(&self.discount) {
            violations.push(Violation::DiscountOutOfRange(self.discount));
        }
        for x in 0..self.num_states {
            for a in 0..self.num_actions {
                let row = self.transitions(x, a);
                let mut finite = true;
                for (y, &p) in row.iter().enumerate() {
                    if !p.is_finite() {
                        finite = false;
                        violations.push(Violation::NonFiniteProbability { state: x, action: a, next: y });
                    } else if p < 0.0 {
                        violations.push(Violation::NegativeProbability { state: x, action: a, next: y, value: p });
                    }
                }
                if finite {
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > PROB_TOL {
                        violations.push(Violation::RowSum { state: x, action: a, sum });
                    }
                }
                for (y, r) in self.rewards(x, a).iter().enumerate() {
                    if !r.is_finite() {
                        violations.push(Violation::NonFiniteReward { state: x, action: a, next: y });
                    }
                }
            }
        }
        ValidationReport { violations }
    }

    /// Returns `Ok(())` for a valid MDP and the full report otherwise.
    pub fn ensure_valid(&self) -> Result<(), MdpError> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(MdpError::Invalid(report))
        }
    }
}

fn flatten(
    tensor: &'static str,
    nested: &[Vec<Vec<f64>>],
    num_states: usize,
    num_actions: usize,
) -> Result<Vec<f64>, MdpError> {
    if nested.len() != num_states {
        return Err(MdpError::Shape {
            tensor,
            detail: format!("expected {num_states} states, got {}", nested.len()),
        });
    }
    let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
    for (x, rows) in nested.iter().enumerate() {
        if rows.len() != num_actions {
            return Err(MdpError::Shape {
                tensor,
                detail: format!(
                    "state {x} has {} actions, expected {num_actions} (action sets must not depend on the state)",
                    rows.len()
                ),
            });
        }
        for (a, row) in rows.iter().enumerate() {
            if row.len() != num_states {
                return Err(MdpError::Shape {
                    tensor,
                    detail: format!("row (x={x},a={a}) has {} entries, expected {num_states}", row.len()),
                });
            }
            flat.extend_from_slice(row);
        }
    }
    Ok(flat)
}

/// Validates an MDP; free-function form of [`Mdp::validate`].
pub fn validate_mdp(mdp: &Mdp) -> ValidationReport {
    mdp.validate()
}

/// A real value per state-action pair, stored row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::constant(num_states, num_actions, 0.0)
    }

    pub fn constant(num_states: usize, num_actions: usize, value: f64) -> Self {
        QTable { num_states, num_actions, values: vec![value; num_states * num_actions] }
    }

    pub fn for_mdp(mdp: &Mdp) -> Self {
        Self::zeros(mdp.num_states(), mdp.num_actions())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MdpError> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 {
            return Err(MdpError::Empty { states: num_states, actions: num_actions });
        }
        if let Some((x, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != num_actions) {
            return Err(MdpError::Shape {
                tensor: "q table",
                detail: format!("state {x} has {} actions, expected {num_actions}", r.len()),
            });
        }
        Ok(QTable { num_states, num_actions, values: rows.concat() })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, x: usize, a: usize, value: f64) {
        self.values[x * self.num_actions + a] = value;
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        let o = x * self.num_actions;
        &self.values[o..o + self.num_actions]
    }

    /// `max_a Q(x,a)`.
    #[inline]
    pub fn max_row(&self, x: usize) -> f64 {
        self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action at `x`, ties broken by the lowest index.
    pub fn greedy_action(&self, x: usize) -> usize {
        let row = self.row(x);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.num_actions).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max Q − min Q`.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    /// `‖self − other‖∞`. Panics if the shapes differ.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "q table shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn check_shape(&self, mdp: &Mdp) -> Result<(), MdpError> {
        if self.num_states != mdp.num_states() || self.num_actions != mdp.num_actions() {
            return Err(MdpError::TableMismatch {
                states: mdp.num_states(),
                actions: mdp.num_actions(),
                got_states: self.num_states,
                got_actions: self.num_actions,
            });
        }
        Ok(())
    }
}

/// A real value per state.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    pub values: Vec<f64>,
}

impl VTable {
    pub fn get(&self, x: usize) -> f64 {
        self.values[x]
    }
}

/// One application of the Q Bellman map
/// `(x,a) ↦ Σ_y q(y|x,a)(r(x,a,y) + β max_a' Q(y,a'))`.
pub fn q_backup(mdp: &Mdp, q_in: &QTable) -> Result<QTable, MdpError> {
    mdp.ensure_valid()?;
    q_in.check_shape(mdp)?;
    if !q_in.is_finite() {
        return Err(MdpError::NonFiniteTable);
    }
    Ok(backup_unchecked(mdp, q_in))
}

fn backup_unchecked(mdp: &Mdp, q_in: &QTable) -> QTable {
    let beta = mdp.discount();
    let v: Vec<f64> = (0..mdp.num_states()).map(|y| q_in.max_row(y)).collect();
    let mut out = QTable::for_mdp(mdp);
    for x in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let value = mdp
                .transitions(x, a)
                .iter()
                .zip(mdp.rewards(x, a))
                .zip(&v)
                .map(|((p, r), vy)| p * (r + beta * vy))
                .sum();
            out.set(x, a, value);
        }
    }
    out
}

/// Value iteration on the Q map from the zero table.
///
/// Stops once successive iterates differ by at most `tol·(1−β)/(2β)` in sup
/// norm, which bounds the distance to the fixed point by `tol/2`.
pub fn solve_q(mdp: &Mdp, tol: f64) -> Result<QTable, MdpError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(MdpError::BadTolerance(tol));
    }
    mdp.ensure_valid()?;
    let beta = mdp.discount();
    let threshold = if beta == 0.0 { f64::INFINITY } else { tol * (1.0 - beta) / (2.0 * beta) };
    let mut q = QTable::for_mdp(mdp);
    loop {
        let next = backup_unchecked(mdp, &q);
        let change = next.sup_distance(&q);
        q = next;
        if change <= threshold {
            return Ok(q);
        }
    }
}

/// `V(x) = max_a Q(x,a)`.
pub fn value_from_q(q: &QTable) -> VTable {
    VTable { values: (0..q.num_states()).map(|x| q.max_row(x)).collect() }
}

/// Canonical JSON layout of an MDP file, tensors indexed `[x][a][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub states: usize,
    pub actions: usize,
    pub discount: f64,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
}

impl MdpFile {
    pub fn into_mdp(self) -> Result<Mdp, MdpError> {
        let mdp = Mdp::from_nested(self.discount, &self.kernel, &self.reward)?;
        if mdp.num_states() != self.states || mdp.num_actions() != self.actions {
            return Err(MdpError::Shape {
                tensor: "kernel",
                detail: format!(
                    "header declares {}x{}, tensors are {}x{}",
                    self.states,
                    self.actions,
                    mdp.num_states(),
                    mdp.num_actions()
                ),
            });
        }
        Ok(mdp)
    }
}

impl From<&Mdp> for MdpFile {
    fn from(mdp: &Mdp) -> Self {
        let (kernel, reward) = mdp.to_nested();
        MdpFile {
            states: mdp.num_states(),
            actions: mdp.num_actions(),
            discount: mdp.discount(),
            kernel,
            reward,
        }
    }
}

impl Mdp {
    /// Serializes to the canonical pretty-printed JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MdpFile::from(self)).expect("mdp serializes")
    }
}
