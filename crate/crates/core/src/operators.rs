//! Fuzzy-logic scoring over atomic, fused and monolithic similarities.
//!
//! Every operator anchors on a zero-order similarity and adds a first-order
//! correction built from NS-deltas (differences between a fused score and an
//! atomic one). Boundary-stability rules fall back to the raw fused score
//! when the encoder already rewards co-occurrence (AND) or rejects the query
//! outright (NOT, OR). All trigger inequalities are strict.

use serde::{Deserialize, Serialize};

use crate::error::{NsflError, Result};
use crate::formula::{Component, FormulaKind};

/// Similarities of one candidate item against every query component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub s_a: f64,
    pub s_b: f64,
    pub s_c: Option<f64>,
    pub s_ab: Option<f64>,
    pub s_abc: Option<f64>,
    pub s_m: Option<f64>,
}

impl ScoreBundle {
    pub fn binary(s_a: f64, s_b: f64, s_ab: f64, s_m: f64) -> Self {
        Self {
            s_a,
            s_b,
            s_ab: Some(s_ab),
            s_m: Some(s_m),
            ..Self::default()
        }
    }

    pub fn ternary(s_a: f64, s_b: f64, s_c: f64, s_abc: f64, s_m: f64) -> Self {
        Self {
            s_a,
            s_b,
            s_c: Some(s_c),
            s_abc: Some(s_abc),
            s_m: Some(s_m),
            ..Self::default()
        }
    }

    pub fn with_ab(mut self, s_ab: f64) -> Self {
        self.s_ab = Some(s_ab);
        self
    }

    fn need(v: Option<f64>, c: Component) -> Result<f64> {
        v.ok_or_else(|| NsflError::MissingComponent(c.key().to_string()))
    }

    pub fn c(&self) -> Result<f64> {
        Self::need(self.s_c, Component::C)
    }

    pub fn ab(&self) -> Result<f64> {
        Self::need(self.s_ab, Component::AB)
    }

    pub fn abc(&self) -> Result<f64> {
        Self::need(self.s_abc, Component::ABC)
    }

    pub fn m(&self) -> Result<f64> {
        Self::need(self.s_m, Component::M)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaDirection {
    Reinforcement,
    Departure,
}

/// Signed marginal change of a fused score over a context score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsDelta {
    pub value: f64,
    pub direction: DeltaDirection,
}

pub fn delta(s_fused: f64, s_context: f64) -> NsDelta {
    let value = s_fused - s_context;
    let direction = if value >= 0.0 {
        DeltaDirection::Reinforcement
    } else {
        DeltaDirection::Departure
    };
    NsDelta { value, direction }
}

/// Returns the atom with the `rank`-th smallest score (1-based). Ties go to
/// the lexicographically smaller label.
pub fn minchoice<S: AsRef<str>>(scores: &[(S, f64)], rank: usize) -> Result<&S> {
    if rank == 0 || rank > scores.len() {
        return Err(NsflError::RankOutOfRange {
            rank,
            len: scores.len(),
        });
    }
    let mut order: Vec<&(S, f64)> = scores.iter().collect();
    order.sort_by(|x, y| {
        x.1.total_cmp(&y.1)
            .then_with(|| x.0.as_ref().cmp(y.0.as_ref()))
    });
    Ok(&order[rank - 1].0)
}

/// Where the normalizing maximum for the NOT gate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMaxMode {
    /// Maximum over the current candidate pool.
    #[default]
    PoolMax,
    /// Precomputed corpus-level bound.
    CorpusMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    /// Weight on the first-order correction, in `[0, 2]`.
    pub coefficient_c: f64,
    pub epsilon: f64,
    pub use_smoothed_not: bool,
    pub use_stability: bool,
    pub gate_max_mode: GateMaxMode,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            coefficient_c: 1.0,
            epsilon: 1e-8,
            use_smoothed_not: true,
            use_stability: true,
            gate_max_mode: GateMaxMode::PoolMax,
        }
    }
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.coefficient_c) {
            return Err(NsflError::Config(format!(
                "coefficient c must lie in [0, 2], got {}",
                self.coefficient_c
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(NsflError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Which rule produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// AND-family fallback to the fused score under co-occurrence reward.
    Reinforcement,
    /// NOT/OR noise floor under manifold departure.
    Departure,
    /// The delta-corrected (or max) formula.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub value: f64,
    pub branch: Branch,
    /// The confidence gate fell outside `[0, 1]` and was clamped.
    pub gate_clamped: bool,
}

impl Scored {
    fn new(value: f64, branch: Branch) -> Self {
        Self {
            value,
            branch,
            gate_clamped: false,
        }
    }
}

/// Normalizing maxima for the smoothed NOT gates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateMaxima {
    pub s_b_max: Option<f64>,
    pub s_c_max: Option<f64>,
}

/// Max-normalized confidence `s / (max + eps)`, clamped to `[0, 1]`.
pub fn confidence_gate(s: f64, max: f64, epsilon: f64) -> Result<(f64, bool)> {
    let denom = max + epsilon;
    if denom.is_nan() || denom <= 0.0 {
        return Err(NsflError::NonPositiveMax(max));
    }
    let raw = s / denom;
    let gate = raw.clamp(0.0, 1.0);
    Ok((gate, gate != raw))
}

fn max3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).max(c)
}

/// Sum of three values in ascending order, so the result does not depend on
/// argument order.
fn sum3(a: f64, b: f64, c: f64) -> f64 {
    let mut v = [a, b, c];
    v.sort_by(f64::total_cmp);
    v[0] + v[1] + v[2]
}

/// `A ∧ B`: fused score if it exceeds the atomic sum, else
/// `S_AB + c * (S_AB - max(S_A, S_B))`.
pub fn score_and2(b: &ScoreBundle, cfg: &OperatorConfig) -> Result<Scored> {
    let s_ab = b.ab()?;
    if cfg.use_stability && s_ab > b.s_a + b.s_b {
        return Ok(Scored::new(s_ab, Branch::Reinforcement));
    }
    let d = delta(s_ab, b.s_a.max(b.s_b));
    Ok(Scored::new(
        s_ab + cfg.coefficient_c * d.value,
        Branch::Standard,
    ))
}

/// `A ∧ ¬B`: subtracts B's delta from `S_A`, optionally gated by the
/// max-normalized `S_B`.
pub fn score_not2(b: &ScoreBundle, cfg: &OperatorConfig, s_b_max: f64) -> Result<Scored> {
    let s_ab = b.ab()?;
    if cfg.use_stability && s_ab < b.s_a && s_ab < b.s_b {
        return Ok(Scored::new(s_ab, Branch::Departure));
    }
    let d = delta(s_ab, b.s_a);
    if cfg.use_smoothed_not {
        let (gate, clamped) = confidence_gate(b.s_b, s_b_max, cfg.epsilon)?;
        Ok(Scored {
            value: b.s_a - cfg.coefficient_c * gate * d.value,
            branch: Branch::Standard,
            gate_clamped: clamped,
        })
    } else {
        Ok(Scored::new(
            b.s_a - cfg.coefficient_c * d.value,
            Branch::Standard,
        ))
    }
}

/// `A ∨ B`: max over atomic, fused and monolithic scores, with a
/// `min(S_AB, S_M)` floor when the fused score falls below both atoms.
pub fn score_or2(b: &ScoreBundle, cfg: &OperatorConfig) -> Result<Scored> {
    let s_ab = b.ab()?;
    let s_m = b.m()?;
    if cfg.use_stability && s_ab < b.s_a && s_ab < b.s_b {
        return Ok(Scored::new(s_ab.min(s_m), Branch::Departure));
    }
    Ok(Scored::new(
        b.s_a.max(b.s_b).max(s_ab).max(s_m),
        Branch::Standard,
    ))
}

/// `A ∧ B ∧ C`.
pub fn score_and3(b: &ScoreBundle, cfg: &OperatorConfig) -> Result<Scored> {
    let s_c = b.c()?;
    let s_abc = b.abc()?;
    if cfg.use_stability && s_abc > sum3(b.s_a, b.s_b, s_c) {
        return Ok(Scored::new(s_abc, Branch::Reinforcement));
    }
    let d = delta(s_abc, max3(b.s_a, b.s_b, s_c));
    Ok(Scored::new(
        s_abc + cfg.coefficient_c * d.value,
        Branch::Standard,
    ))
}

/// `A ∧ B ∧ ¬C`: the stable binary AND on `(A, B, AB)` minus the gated
/// contribution of C to the triple fusion.
pub fn score_and_not3(b: &ScoreBundle, cfg: &OperatorConfig, s_c_max: f64) -> Result<Scored> {
    let s_c = b.c()?;
    let s_abc = b.abc()?;
    let s_ab = b.ab()?;
    let inner = score_and2(b, cfg)?;
    let d = delta(s_abc, s_ab);
    let (gate, clamped) = if cfg.use_smoothed_not {
        confidence_gate(s_c, s_c_max, cfg.epsilon)?
    } else {
        (1.0, false)
    };
    Ok(Scored {
        value: inner.value - cfg.coefficient_c * gate * d.value,
        branch: inner.branch,
        gate_clamped: clamped,
    })
}

/// `A ∨ B ∨ C`, extending the binary rule: max over the three atoms, the
/// triple fusion and the monolithic score; floor `min(S_ABC, S_M)` when the
/// triple fusion falls below all three atoms.
pub fn score_or3(b: &ScoreBundle, cfg: &OperatorConfig) -> Result<Scored> {
    let s_c = b.c()?;
    let s_abc = b.abc()?;
    let s_m = b.m()?;
    if cfg.use_stability && s_abc < b.s_a && s_abc < b.s_b && s_abc < s_c {
        return Ok(Scored::new(s_abc.min(s_m), Branch::Departure));
    }
    Ok(Scored::new(
        max3(b.s_a, b.s_b, s_c).max(s_abc).max(s_m),
        Branch::Standard,
    ))
}

fn required_max(v: Option<f64>, what: &str) -> Result<f64> {
    v.ok_or_else(|| NsflError::Config(format!("no normalizing maximum supplied for {what}")))
}

/// Dispatches to the operator for `kind`.
pub fn score_formula(
    kind: FormulaKind,
    b: &ScoreBundle,
    cfg: &OperatorConfig,
    maxima: &GateMaxima,
) -> Result<Scored> {
    match kind {
        FormulaKind::And2 => score_and2(b, cfg),
        FormulaKind::And3 => score_and3(b, cfg),
        FormulaKind::Or2 => score_or2(b, cfg),
        FormulaKind::Or3 => score_or3(b, cfg),
        FormulaKind::Not2 => {
            let max = if cfg.use_smoothed_not {
                required_max(maxima.s_b_max, "S_B")?
            } else {
                1.0
            };
            score_not2(b, cfg, max)
        }
        FormulaKind::AndNot3 => {
            let max = if cfg.use_smoothed_not {
                required_max(maxima.s_c_max, "S_C")?
            } else {
                1.0
            };
            score_and_not3(b, cfg, max)
        }
    }
}
