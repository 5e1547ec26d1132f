//! Tabular MDP, stationary and non-stationary policies, and the JSON model format.
//!
//! A model file looks like
//! `{"S": 2, "A": 2, "p": [[[..S..] ..A..] ..S..], "r": [[..A..] ..S..], "rho": [..S..]}`.
//! Loading checks every invariant and reports the offending line.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Upper end of the reward range. Rewards must lie in `[0, R_MAX]`.
pub const R_MAX: f64 = 1.0;

/// Tolerance on row sums of stochastic vectors.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    /// One S×S row-stochastic matrix per action: `kernels[a][(s, s')] = p(s'|s,a)`.
    kernels: Vec<DMatrix<f64>>,
    reward: DMatrix<f64>,
    rho: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "A")]
    a: usize,
    p: Vec<Vec<Vec<f64>>>,
    r: Vec<Vec<f64>>,
    rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Seg {
    Key(String),
    Index(usize),
}

fn key(k: &str) -> Seg {
    Seg::Key(k.to_string())
}

struct Violation {
    path: Vec<Seg>,
    msg: String,
}

fn violation(path: Vec<Seg>, msg: String) -> Violation {
    Violation { path, msg }
}

fn path_string(path: &[Seg]) -> String {
    let mut out = String::new();
    for seg in path {
        match seg {
            Seg::Key(k) if out.is_empty() => out.push_str(k),
            Seg::Key(k) => {
                out.push('.');
                out.push_str(k);
            }
            Seg::Index(i) => out.push_str(&format!("[{i}]")),
        }
    }
    out
}

fn check_distribution(v: &[f64], path: Vec<Seg>, strictly_positive: bool) -> std::result::Result<(), Violation> {
    for (i, &x) in v.iter().enumerate() {
        let mut at = path.clone();
        at.push(Seg::Index(i));
        if !x.is_finite() {
            return Err(violation(at, format!("non-finite entry {x}")));
        }
        if x < 0.0 {
            return Err(violation(at, format!("negative probability {x}")));
        }
        if strictly_positive && x <= 0.0 {
            return Err(violation(at, "initial distribution must be strictly positive".into()));
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(violation(path, format!("entries sum to {sum:.15}, expected 1")));
    }
    Ok(())
}

fn validate(f: &MdpFile, strict_rho: bool) -> std::result::Result<(), Violation> {
    if f.s == 0 || f.a == 0 {
        return Err(violation(vec![key("S")], "S and A must be positive".into()));
    }
    if f.p.len() != f.s {
        return Err(violation(vec![key("p")], format!("expected {} state blocks, found {}", f.s, f.p.len())));
    }
    for (s, block) in f.p.iter().enumerate() {
        let here = vec![key("p"), Seg::Index(s)];
        if block.len() != f.a {
            return Err(violation(here, format!("expected {} action rows, found {}", f.a, block.len())));
        }
        for (a, row) in block.iter().enumerate() {
            let mut at = here.clone();
            at.push(Seg::Index(a));
            if row.len() != f.s {
                return Err(violation(at, format!("expected {} next-state entries, found {}", f.s, row.len())));
            }
            check_distribution(row, at, false)?;
        }
    }
    if f.r.len() != f.s {
        return Err(violation(vec![key("r")], format!("expected {} reward rows, found {}", f.s, f.r.len())));
    }
    for (s, row) in f.r.iter().enumerate() {
        let here = vec![key("r"), Seg::Index(s)];
        if row.len() != f.a {
            return Err(violation(here, format!("expected {} rewards, found {}", f.a, row.len())));
        }
        for (a, &x) in row.iter().enumerate() {
            if !(0.0..=R_MAX).contains(&x) {
                let mut at = here.clone();
                at.push(Seg::Index(a));
                return Err(violation(at, format!("reward {x} outside [0, {R_MAX}]")));
            }
        }
    }
    if f.rho.len() != f.s {
        return Err(violation(vec![key("rho")], format!("expected {} entries, found {}", f.s, f.rho.len())));
    }
    check_distribution(&f.rho, vec![key("rho")], strict_rho)
}

impl Mdp {
    /// Builds a model from nested `p[s][a][s']`, `r[s][a]`, `rho[s]`.
    ///
    /// The initial distribution only has to be a probability vector here; strict
    /// positivity is checked by [`Mdp::has_positive_initial`] and on file load.
    pub fn new(p: Vec<Vec<Vec<f64>>>, r: Vec<Vec<f64>>, rho: Vec<f64>) -> Result<Self> {
        let file = MdpFile { s: p.len(), a: p.first().map_or(0, Vec::len), p, r, rho };
        Self::from_file(file, false).map_err(|v| Error::InvalidModel(format!("{}: {}", path_string(&v.path), v.msg)))
    }

    fn from_file(f: MdpFile, strict_rho: bool) -> std::result::Result<Self, Violation> {
        validate(&f, strict_rho)?;
        let (ns, na) = (f.s, f.a);
        let kernels = (0..na).map(|a| DMatrix::from_fn(ns, ns, |s, t| f.p[s][a][t])).collect();
        let reward = DMatrix::from_fn(ns, na, |s, a| f.r[s][a]);
        let rho = DVector::from_vec(f.rho);
        Ok(Mdp { num_states: ns, num_actions: na, kernels, reward, rho })
    }

    /// Parses and validates a model file. Errors carry the line of the offending entry.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidModel(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        Self::from_file(file, true).map_err(|v| {
            let line = locate(text, &v.path).map_or_else(String::new, |l| format!("line {l}: "));
            Error::InvalidModel(format!("{line}{}: {}", path_string(&v.path), v.msg))
        })
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| Error::InvalidModel(format!("{}: {e}", path.display())))
    }

    pub fn to_json_string(&self) -> String {
        let (ns, na) = (self.num_states, self.num_actions);
        let file = MdpFile {
            s: ns,
            a: na,
            p: (0..ns).map(|s| (0..na).map(|a| (0..ns).map(|t| self.prob(s, a, t)).collect()).collect()).collect(),
            r: (0..ns).map(|s| (0..na).map(|a| self.reward(s, a)).collect()).collect(),
            rho: self.rho.iter().copied().collect(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("model serialization cannot fail");
        out.push('\n');
        out
    }

    /// Short stable digest of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Same model with a different initial distribution.
    pub fn with_initial(&self, rho: &[f64]) -> Result<Self> {
        if rho.len() != self.num_states {
            return Err(Error::Dimension(format!(
                "rho has {} entries, model has {} states",
                rho.len(),
                self.num_states
            )));
        }
        check_distribution(rho, vec![key("rho")], false)
            .map_err(|v| Error::InvalidModel(format!("{}: {}", path_string(&v.path), v.msg)))?;
        Ok(Mdp { rho: DVector::from_column_slice(rho), ..self.clone() })
    }

    pub fn has_positive_initial(&self) -> bool {
        self.rho.iter().all(|&x| x > 0.0)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.kernels[a][(s, next)]
    }

    /// Row-stochastic matrix of action `a`, rows indexed by the current state.
    pub fn kernel(&self, a: usize) -> &DMatrix<f64> {
        &self.kernels[a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[(s, a)]
    }

    /// S×A reward table.
    pub fn rewards(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    /// `p(·|s,a)` as a row vector.
    pub fn next_state_dist(&self, s: usize, a: usize) -> DVector<f64> {
        self.kernels[a].row(s).transpose()
    }

    /// Per-state best immediate reward.
    pub fn max_reward_vector(&self) -> DVector<f64> {
        DVector::from_fn(self.num_states, |s, _| {
            (0..self.num_actions).map(|a| self.reward(s, a)).fold(f64::NEG_INFINITY, f64::max)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    probs: DMatrix<f64>,
}

impl StationaryPolicy {
    /// Wraps an S×A matrix whose rows are action distributions.
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row: Vec<f64> = probs.row(s).iter().copied().collect();
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum:.15}")));
            }
        }
        Ok(StationaryPolicy { probs })
    }

    pub(crate) fn from_matrix_unchecked(probs: DMatrix<f64>) -> Self {
        StationaryPolicy { probs }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let na = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != na) {
            return Err(Error::Dimension("policy rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), na, |s, a| rows[s][a]))
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        StationaryPolicy { probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64) }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        if let Some(&a) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::InvalidPolicy(format!("action {a} out of range 0..{num_actions}")));
        }
        Ok(StationaryPolicy {
            probs: DMatrix::from_fn(actions.len(), num_actions, |s, a| if actions[s] == a { 1.0 } else { 0.0 }),
        })
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Chosen actions if every row is a point mass.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        (0..self.num_states()).map(|s| (0..self.num_actions()).find(|&a| self.prob(s, a) == 1.0)).collect()
    }

    pub(crate) fn check_shape(&self, mdp: &Mdp) -> Result<()> {
        if self.num_states() != mdp.num_states() || self.num_actions() != mdp.num_actions() {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, model is {}x{}",
                self.num_states(),
                self.num_actions(),
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

/// Time-indexed policies `π_0, …, π_{H-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySequence {
    steps: Vec<StationaryPolicy>,
}

impl PolicySequence {
    pub fn new(steps: Vec<StationaryPolicy>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidPolicy("empty policy sequence".into()));
        }
        Ok(PolicySequence { steps })
    }

    pub fn stationary(pi: &StationaryPolicy, horizon: usize) -> Self {
        PolicySequence { steps: vec![pi.clone(); horizon] }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, h: usize) -> &StationaryPolicy {
        &self.steps[h]
    }

    pub fn iter(&self) -> impl Iterator<Item = &StationaryPolicy> {
        self.steps.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    FiniteHorizon,
    Discounted,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueReport {
    pub value: f64,
    pub setting: Setting,
    pub horizon: Option<usize>,
    pub gamma: Option<f64>,
}

// --- locating a JSON path in the source text ---

#[derive(Debug, PartialEq)]
enum Tok {
    Open(char),
    Close(char),
    Colon,
    Comma,
    Str(String),
    Scalar,
}

fn tokenize(text: &str) -> Vec<(Tok, usize)> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\n' => line += 1,
            '{' | '[' => out.push((Tok::Open(c), line)),
            '}' | ']' => out.push((Tok::Close(c), line)),
            ':' => out.push((Tok::Colon, line)),
            ',' => out.push((Tok::Comma, line)),
            '"' => {
                let mut s = String::new();
                while let Some(d) = chars.next() {
                    match d {
                        '"' => break,
                        '\\' => {
                            if let Some(e) = chars.next() {
                                s.push(e);
                            }
                        }
                        _ => s.push(d),
                    }
                }
                out.push((Tok::Str(s), line));
            }
            c if c.is_whitespace() => {}
            _ => {
                while chars.peek().is_some_and(|d| !"{}[]:,\n".contains(*d) && !d.is_whitespace()) {
                    chars.next();
                }
                out.push((Tok::Scalar, line));
            }
        }
    }
    out
}

fn walk(
    toks: &[(Tok, usize)],
    pos: &mut usize,
    path: &mut Vec<Seg>,
    target: &[Seg],
    found: &mut Option<usize>,
) -> Option<()> {
    let (tok, line) = toks.get(*pos)?;
    if found.is_none() && path.as_slice() == target {
        *found = Some(*line);
    }
    match tok {
        Tok::Open('{') => {
            *pos += 1;
            loop {
                match &toks.get(*pos)?.0 {
                    Tok::Close(_) => {
                        *pos += 1;
                        return Some(());
                    }
                    Tok::Comma => *pos += 1,
                    Tok::Str(k) => {
                        path.push(Seg::Key(k.clone()));
                        *pos += 2; // key and colon
                        walk(toks, pos, path, target, found)?;
                        path.pop();
                    }
                    _ => return None,
                }
            }
        }
        Tok::Open(_) => {
            *pos += 1;
            let mut index = 0;
            loop {
                match &toks.get(*pos)?.0 {
                    Tok::Close(_) => {
                        *pos += 1;
                        return Some(());
                    }
                    Tok::Comma => *pos += 1,
                    _ => {
                        path.push(Seg::Index(index));
                        walk(toks, pos, path, target, found)?;
                        path.pop();
                        index += 1;
                    }
                }
            }
        }
        _ => {
            *pos += 1;
            Some(())
        }
    }
}

fn locate(text: &str, target: &[Seg]) -> Option<usize> {
    let toks = tokenize(text);
    let mut found = None;
    walk(&toks, &mut 0, &mut Vec::new(), target, &mut found);
    found
}
