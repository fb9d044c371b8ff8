//! Markov chains induced by stationary strategies, the communicating
//! property of an MDP, and the `(n, δ)` communication certificate.

use thiserror::Error;

use crate::mdp::{Mdp, MdpError, PROB_TOL};

/// Entries at or below this value are treated as zero in support graphs.
pub const SUPPORT_TOL: f64 = 1e-12;

/// Largest number of deterministic strategies the brute-force oracle enumerates.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("strategy is {got_states}x{got_actions}, mdp is {states}x{actions}")]
    DimensionMismatch {
        states: usize,
        actions: usize,
        got_states: usize,
        got_actions: usize,
    },
    #[error("strategy row {state} is not a probability distribution")]
    InvalidStrategy { state: usize },
    #[error("matrix row {row} is not a probability distribution")]
    NotStochastic { row: usize },
    #[error("mdp is not communicating")]
    NotCommunicating,
    #[error("no certificate horizon n <= {bound} found (internal error)")]
    CertificateSearchExhausted { bound: usize },
    #[error("brute force would enumerate {count} strategies (limit {BRUTE_FORCE_LIMIT})")]
    InstanceTooLarge { count: u128 },
    #[error("exploration floor c = {c} outside (0, 1/{num_actions}]")]
    FloorOutOfRange { c: f64, num_actions: usize },
    #[error("strategy probability {prob} at (x={state},a={action}) is below the floor {c}")]
    StrategyBelowFloor { state: usize, action: usize, prob: f64, c: f64 },
    #[error("test function must be finite and nonnegative, entry {0} is not")]
    NegativeFunction(usize),
}

/// A stationary randomized strategy `g(a|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryStrategy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl StationaryStrategy {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ChainError> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        for (x, row) in rows.iter().enumerate() {
            let ok = row.len() == num_actions
                && num_actions > 0
                && row.iter().all(|p| p.is_finite() && *p >= 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL;
            if !ok {
                return Err(ChainError::InvalidStrategy { state: x });
            }
        }
        if num_states == 0 {
            return Err(ChainError::InvalidStrategy { state: 0 });
        }
        Ok(StationaryStrategy { num_states, num_actions, probs: rows.concat() })
    }

    /// The deterministic strategy `x ↦ choice[x]`.
    pub fn deterministic(choice: &[usize], num_actions: usize) -> Result<Self, ChainError> {
        let mut probs = vec![0.0; choice.len() * num_actions];
        for (x, &a) in choice.iter().enumerate() {
            if a >= num_actions {
                return Err(ChainError::InvalidStrategy { state: x });
            }
            probs[x * num_actions + a] = 1.0;
        }
        if choice.is_empty() {
            return Err(ChainError::InvalidStrategy { state: 0 });
        }
        Ok(StationaryStrategy { num_states: choice.len(), num_actions, probs })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.num_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.num_actions..(x + 1) * self.num_actions]
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_completely_mixed(&self) -> bool {
        self.min_prob() > 0.0
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.num_states).all(|x| self.row(x).iter().filter(|&&p| p == 1.0).count() == 1)
    }
}

/// A row-stochastic matrix over states.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ChainError> {
        let size = rows.len();
        for (i, row) in rows.iter().enumerate() {
            let ok = row.len() == size
                && row.iter().all(|p| p.is_finite() && *p >= 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL;
            if !ok {
                return Err(ChainError::NotStochastic { row: i });
            }
        }
        if size == 0 {
            return Err(ChainError::NotStochastic { row: 0 });
        }
        Ok(TransitionMatrix { size, entries: rows.concat() })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[x * self.size + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.entries[x * self.size..(x + 1) * self.size]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.size).map(<[f64]>::to_vec).collect()
    }

    /// `(P f)(x) = Σ_y P(x,y) f(y)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|x| self.row(x).iter().zip(f).map(|(p, v)| p * v).sum())
            .collect()
    }

    fn matmul(&self, other: &TransitionMatrix) -> Vec<f64> {
        let n = self.size;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        out
    }
}

fn check_dims(mdp: &Mdp, g: &StationaryStrategy) -> Result<(), ChainError> {
    if g.num_states != mdp.num_states() || g.num_actions != mdp.num_actions() {
        return Err(ChainError::DimensionMismatch {
            states: mdp.num_states(),
            actions: mdp.num_actions(),
            got_states: g.num_states,
            got_actions: g.num_actions,
        });
    }
    Ok(())
}

/// `P(g)(x,y) = Σ_a q(y|x,a) g(a|x)`.
pub fn induced_chain(mdp: &Mdp, g: &StationaryStrategy) -> Result<TransitionMatrix, ChainError> {
    mdp.ensure_valid()?;
    check_dims(mdp, g)?;
    let n = mdp.num_states();
    let mut entries = vec![0.0; n * n];
    for x in 0..n {
        for a in 0..mdp.num_actions() {
            let w = g.prob(x, a);
            if w == 0.0 {
                continue;
            }
            for (y, p) in mdp.transitions(x, a).iter().enumerate() {
                entries[x * n + y] += w * p;
            }
        }
    }
    Ok(TransitionMatrix { size: n, entries })
}

/// The completely mixed strategy `g(a|x) = 1/|A|`.
pub fn uniform_strategy(mdp: &Mdp) -> StationaryStrategy {
    let (s, a) = (mdp.num_states(), mdp.num_actions());
    StationaryStrategy { num_states: s, num_actions: a, probs: vec![1.0 / a as f64; s * a] }
}

/// Strong connectivity of the positive-support digraph of `p`.
pub fn is_irreducible(p: &TransitionMatrix) -> bool {
    let n = p.size;
    let edge = |x: usize, y: usize| p.get(x, y) > SUPPORT_TOL;
    let reaches_all = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let linked = if forward { edge(u, v) } else { edge(v, u) };
                if linked && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reaches_all(true) && reaches_all(false)
}

/// Irreducibility of the chain induced by the uniform strategy.
pub fn is_communicating(mdp: &Mdp) -> Result<bool, ChainError> {
    Ok(is_irreducible(&induced_chain(mdp, &uniform_strategy(mdp))?))
}

/// Exhaustive check of the communicating definition: for every ordered pair
/// `(x,y)` some deterministic stationary strategy `b` has
/// `P^m(b)(x,y) > 0` for some `1 ≤ m ≤ |X|`.
pub fn brute_force_communicating(mdp: &Mdp) -> Result<bool, ChainError> {
    mdp.ensure_valid()?;
    let n = mdp.num_states();
    let k = mdp.num_actions();
    let count = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > BRUTE_FORCE_LIMIT {
        return Err(ChainError::InstanceTooLarge { count });
    }
    let mut covered = vec![false; n * n];
    let mut choice = vec![0usize; n];
    loop {
        // P(b) with dust removed, then its powers up to |X|.
        let mut base = vec![0.0; n * n];
        for x in 0..n {
            for (y, &p) in mdp.transitions(x, choice[x]).iter().enumerate() {
                if p > SUPPORT_TOL {
                    base[x * n + y] = p;
                }
            }
        }
        let mut power = base.clone();
        for _ in 0..n {
            for (c, &v) in covered.iter_mut().zip(&power) {
                if v > 0.0 {
                    *c = true;
                }
            }
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for m in 0..n {
                    let a = power[i * n + m];
                    if a == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        next[i * n + j] += a * base[m * n + j];
                    }
                }
            }
            power = next;
        }
        if covered.iter().all(|&c| c) {
            return Ok(true);
        }
        // Odometer increment over A^X.
        let mut i = 0;
        loop {
            if i == n {
                return Ok(false);
            }
            choice[i] += 1;
            if choice[i] < k {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// The pair `(n, δ)`: smallest `n` with `Σ_{j=1..n} P^j(ḡ)` entrywise positive,
/// and `δ` its minimal entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommunicationCertificate {
    pub n: usize,
    pub delta: f64,
}

pub fn communication_certificate(mdp: &Mdp) -> Result<CommunicationCertificate, ChainError> {
    let p = induced_chain(mdp, &uniform_strategy(mdp))?;
    if !is_irreducible(&p) {
        return Err(ChainError::NotCommunicating);
    }
    let size = p.size;
    let bound = size * size;
    let mut power = p.clone();
    let mut sum = p.entries.clone();
    for n in 1..=bound {
        let min = sum.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            return Ok(CommunicationCertificate { n, delta: min });
        }
        power = TransitionMatrix { size, entries: power.matmul(&p) };
        sum.iter_mut().zip(&power.entries).for_each(|(s, v)| *s += v);
    }
    Err(ChainError::CertificateSearchExhausted { bound })
}

/// `cⁿ·|A|ⁿ·δ/n`, the almost-sure lower bound on the long-run visit rate
/// of every state under a strategy with floor `c`.
pub fn visit_rate_lower_bound(
    cert: &CommunicationCertificate,
    c: f64,
    num_actions: usize,
) -> Result<f64, ChainError> {
    let k = num_actions as f64;
    if !(c > 0.0 && c * k <= 1.0 + PROB_TOL) || num_actions == 0 {
        return Err(ChainError::FloorOutOfRange { c, num_actions });
    }
    Ok((c * k).powi(cert.n as i32) * cert.delta / cert.n as f64)
}

/// Outcome of [`lemma1_exact_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    /// `Σ_{j=1..n} E[f(x_{t+j+1}) | x_t = x, a_t = a]`, row-major by `(x,a)`.
    pub lhs: Vec<f64>,
    /// `cⁿ|A|ⁿδ Σ_y f(y)`.
    pub rhs: f64,
    pub min_slack: f64,
    pub passed: bool,
}

pub const LEMMA1_TOL: f64 = -1e-10;

/// Checks the conditional-expectation lower bound exactly for a stationary
/// strategy, where the expectations reduce to powers of `P(g)`.
pub fn lemma1_exact_check(
    mdp: &Mdp,
    g: &StationaryStrategy,
    c: f64,
    f: &[f64],
    cert: &CommunicationCertificate,
) -> Result<Lemma1Report, ChainError> {
    let p = induced_chain(mdp, g)?;
    let k = mdp.num_actions();
    if !(c > 0.0 && c * k as f64 <= 1.0 + PROB_TOL) {
        return Err(ChainError::FloorOutOfRange { c, num_actions: k });
    }
    for x in 0..mdp.num_states() {
        for a in 0..k {
            let prob = g.prob(x, a);
            if prob < c - PROB_TOL {
                return Err(ChainError::StrategyBelowFloor { state: x, action: a, prob, c });
            }
        }
    }
    if f.len() != mdp.num_states() {
        return Err(ChainError::DimensionMismatch {
            states: mdp.num_states(),
            actions: k,
            got_states: f.len(),
            got_actions: k,
        });
    }
    if let Some(i) = f.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(ChainError::NegativeFunction(i));
    }

    // h = Σ_{j=1..n} P^j f
    let mut h = vec![0.0; f.len()];
    let mut pj_f = f.to_vec();
    for _ in 0..cert.n {
        pj_f = p.apply(&pj_f);
        h.iter_mut().zip(&pj_f).for_each(|(s, v)| *s += v);
    }
    let lhs: Vec<f64> = (0..mdp.num_states())
        .flat_map(|x| (0..k).map(move |a| (x, a)))
        .map(|(x, a)| mdp.transitions(x, a).iter().zip(&h).map(|(q, v)| q * v).sum())
        .collect();
    let rhs = (c * k as f64).powi(cert.n as i32) * cert.delta * f.iter().sum::<f64>();
    let min_slack = lhs.iter().map(|l| l - rhs).fold(f64::INFINITY, f64::min);
    Ok(Lemma1Report { lhs, rhs, min_slack, passed: min_slack >= LEMMA1_TOL })
}
