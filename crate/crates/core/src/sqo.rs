//! Spherical query optimization: compile a logical formula into one unit
//! query vector by Riemannian gradient ascent of its fuzzy score on the
//! unit hypersphere.
//!
//! The objective treats the query vector `x` as a candidate item, so every
//! component score is `x . v_component` and the operators from
//! [`crate::operators`] apply unchanged. No candidate pool exists before
//! retrieval, so the NOT gates normalize by a constant maximum of 1.
//! Non-smooth points use the subgradient of the attaining operand (first
//! operand on ties) and the gradient of whichever stability branch is active.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding_store::{dot, l2_norm, onto_sphere};
use crate::error::{NsflError, Result};
use crate::formula::{Component, FormulaKind, QueryPack};
use crate::operators::{
    confidence_gate, score_formula, Branch, GateMaxima, OperatorConfig, ScoreBundle, Scored,
};

pub const DEFAULT_SEED: u64 = 42;
/// Gate maximum used while optimizing.
pub const SQO_GATE_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqoInit {
    /// N(0, 1) per coordinate, projected to the sphere.
    #[default]
    Gaussian,
    WarmStart(Vec<f64>),
    /// Warm start at the pack's monolithic vector.
    Monolithic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqoConfig {
    pub learning_rate: f64,
    /// Zero performs no updates and returns the initial point.
    pub max_steps: usize,
    pub patience: usize,
    pub tolerance: f64,
    pub init: SqoInit,
    pub seed: Option<u64>,
    /// Return the last iterate instead of the best one observed.
    pub return_final: bool,
    pub restarts: usize,
}

impl Default for SqoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            max_steps: 100,
            patience: 10,
            tolerance: 1e-6,
            init: SqoInit::Gaussian,
            seed: Some(DEFAULT_SEED),
            return_final: false,
            restarts: 1,
        }
    }
}

impl SqoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NsflError::Config(msg));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Patience ran out on a plateau: every recent objective within tolerance
    /// of the best.
    Converged,
    /// Patience ran out while the objective kept moving without improving.
    Patience,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqoResult {
    pub x_star: Vec<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub steps_taken: usize,
    pub stop_reason: StopReason,
    /// Objective after each update; `x0`'s value is `initial_objective`.
    pub objective_trace: Vec<f64>,
    /// A retraction hit a zero vector and the run was cut short.
    pub degenerate: bool,
}

/// The fuzzy score of a formula as a function of the query vector.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: FormulaKind,
    cfg: OperatorConfig,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Option<Vec<f64>>,
    ab: Option<Vec<f64>>,
    abc: Option<Vec<f64>>,
    m: Vec<f64>,
}

/// Value, active branch and Euclidean gradient at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub scored: Scored,
    pub gradient: Vec<f64>,
}

fn axpy(acc: &mut [f64], alpha: f64, v: &[f64]) {
    for (s, x) in acc.iter_mut().zip(v) {
        *s += alpha * x;
    }
}

/// Index of the first maximal value.
fn argmax(vals: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in vals.iter().enumerate().skip(1) {
        if *v > vals[best] {
            best = i;
        }
    }
    best
}

fn argmin(vals: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in vals.iter().enumerate().skip(1) {
        if *v < vals[best] {
            best = i;
        }
    }
    best
}

impl Objective {
    pub fn new(pack: &QueryPack, cfg: &OperatorConfig) -> Result<Self> {
        use Component::*;
        let kind = pack.kind();
        let need = |c| pack.vector(c).map(<[f64]>::to_vec);
        let opt = |c| pack.try_vector(c).map(<[f64]>::to_vec);
        let obj = Self {
            kind,
            cfg: *cfg,
            a: need(A)?,
            b: need(B)?,
            c: if kind.arity() == 3 { Some(need(C)?) } else { None },
            ab: match kind {
                FormulaKind::And2 | FormulaKind::Not2 | FormulaKind::Or2 | FormulaKind::AndNot3 => {
                    Some(need(AB)?)
                }
                _ => opt(AB),
            },
            abc: if kind.arity() == 3 { Some(need(ABC)?) } else { None },
            m: need(M)?,
        };
        let dim = obj.a.len();
        for v in [&obj.b, &obj.m]
            .into_iter()
            .chain(obj.c.iter())
            .chain(obj.ab.iter())
            .chain(obj.abc.iter())
        {
            if v.len() != dim {
                return Err(NsflError::Dimension {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        Ok(obj)
    }

    pub fn kind(&self) -> FormulaKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn monolithic(&self) -> &[f64] {
        &self.m
    }

    pub fn bundle(&self, x: &[f64]) -> ScoreBundle {
        ScoreBundle {
            s_a: dot(x, &self.a),
            s_b: dot(x, &self.b),
            s_c: self.c.as_deref().map(|v| dot(x, v)),
            s_ab: self.ab.as_deref().map(|v| dot(x, v)),
            s_abc: self.abc.as_deref().map(|v| dot(x, v)),
            s_m: Some(dot(x, &self.m)),
        }
    }

    fn maxima() -> GateMaxima {
        GateMaxima {
            s_b_max: Some(SQO_GATE_MAX),
            s_c_max: Some(SQO_GATE_MAX),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.score(x)?.value)
    }

    pub fn score(&self, x: &[f64]) -> Result<Scored> {
        score_formula(self.kind, &self.bundle(x), &self.cfg, &Self::maxima())
    }

    /// Gradient of the gated NOT penalty `c * g(s) * (s_fused - s_base)`.
    #[allow(clippy::too_many_arguments)]
    fn gated_penalty_grad(
        &self,
        grad: &mut [f64],
        s_gate: f64,
        v_gate: &[f64],
        s_fused: f64,
        v_fused: &[f64],
        s_base: f64,
        v_base: &[f64],
    ) -> Result<()> {
        let c = self.cfg.coefficient_c;
        let (gate, clamped, dgate) = if self.cfg.use_smoothed_not {
            let (g, clamped) = confidence_gate(s_gate, SQO_GATE_MAX, self.cfg.epsilon)?;
            (g, clamped, 1.0 / (SQO_GATE_MAX + self.cfg.epsilon))
        } else {
            (1.0, true, 0.0)
        };
        if !clamped {
            axpy(grad, -c * (s_fused - s_base) * dgate, v_gate);
        }
        axpy(grad, -c * gate, v_fused);
        axpy(grad, c * gate, v_base);
        Ok(())
    }

    fn and2_grad(&self, b: &ScoreBundle, branch: Branch, grad: &mut [f64]) {
        let ab = self.ab.as_deref().expect("AB present for binary AND");
        if branch == Branch::Reinforcement {
            axpy(grad, 1.0, ab);
        } else {
            let c = self.cfg.coefficient_c;
            let top = if argmax(&[b.s_a, b.s_b]) == 0 { &self.a } else { &self.b };
            axpy(grad, 1.0 + c, ab);
            axpy(grad, -c, top);
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let b = self.bundle(x);
        let scored = score_formula(self.kind, &b, &self.cfg, &Self::maxima())?;
        let mut g = vec![0.0; x.len()];
        let c = self.cfg.coefficient_c;
        match self.kind {
            FormulaKind::And2 => self.and2_grad(&b, scored.branch, &mut g),
            FormulaKind::And3 => {
                let abc = self.abc.as_deref().unwrap();
                if scored.branch == Branch::Reinforcement {
                    axpy(&mut g, 1.0, abc);
                } else {
                    let cv = self.c.as_deref().unwrap();
                    let atoms = [self.a.as_slice(), self.b.as_slice(), cv];
                    let top = argmax(&[b.s_a, b.s_b, b.s_c.unwrap()]);
                    axpy(&mut g, 1.0 + c, abc);
                    axpy(&mut g, -c, atoms[top]);
                }
            }
            FormulaKind::Not2 => {
                let ab = self.ab.as_deref().unwrap();
                if scored.branch == Branch::Departure {
                    axpy(&mut g, 1.0, ab);
                } else {
                    axpy(&mut g, 1.0, &self.a);
                    self.gated_penalty_grad(&mut g, b.s_b, &self.b, b.s_ab.unwrap(), ab, b.s_a, &self.a)?;
                }
            }
            FormulaKind::AndNot3 => {
                self.and2_grad(&b, scored.branch, &mut g);
                let (ab, abc) = (self.ab.as_deref().unwrap(), self.abc.as_deref().unwrap());
                self.gated_penalty_grad(
                    &mut g,
                    b.s_c.unwrap(),
                    self.c.as_deref().unwrap(),
                    b.s_abc.unwrap(),
                    abc,
                    b.s_ab.unwrap(),
                    ab,
                )?;
            }
            FormulaKind::Or2 => {
                let ab = self.ab.as_deref().unwrap();
                let s_ab = b.s_ab.unwrap();
                let s_m = b.s_m.unwrap();
                if scored.branch == Branch::Departure {
                    let v = [ab, self.m.as_slice()][argmin(&[s_ab, s_m])];
                    axpy(&mut g, 1.0, v);
                } else {
                    let cands = [self.a.as_slice(), self.b.as_slice(), ab, self.m.as_slice()];
                    axpy(&mut g, 1.0, cands[argmax(&[b.s_a, b.s_b, s_ab, s_m])]);
                }
            }
            FormulaKind::Or3 => {
                let abc = self.abc.as_deref().unwrap();
                let s_abc = b.s_abc.unwrap();
                let s_m = b.s_m.unwrap();
                if scored.branch == Branch::Departure {
                    let v = [abc, self.m.as_slice()][argmin(&[s_abc, s_m])];
                    axpy(&mut g, 1.0, v);
                } else {
                    let cands = [
                        self.a.as_slice(),
                        self.b.as_slice(),
                        self.c.as_deref().unwrap(),
                        abc,
                        self.m.as_slice(),
                    ];
                    let vals = [b.s_a, b.s_b, b.s_c.unwrap(), s_abc, s_m];
                    axpy(&mut g, 1.0, cands[argmax(&vals)]);
                }
            }
        }
        Ok(Evaluation {
            scored,
            gradient: g,
        })
    }
}

/// Tangent-space projection `g - (x . g) x`.
pub fn riemannian_grad(x: &[f64], g: &[f64]) -> Vec<f64> {
    let radial = dot(x, g);
    g.iter().zip(x).map(|(gi, xi)| gi - radial * xi).collect()
}

/// `(x + eta) / ||x + eta||`.
pub fn retract(x: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    let sum: Vec<f64> = x.iter().zip(eta).map(|(a, b)| a + b).collect();
    let n = l2_norm(&sum);
    if n.is_nan() || n <= 1e-12 {
        return Err(NsflError::DegenerateRetraction);
    }
    Ok(sum.into_iter().map(|v| v / n).collect())
}

/// Snapshot handed to an observer after every update.
#[derive(Debug)]
pub struct Iteration<'a> {
    pub step: usize,
    /// Point at which the gradient was taken.
    pub from: &'a [f64],
    pub riemannian_grad: &'a [f64],
    /// Point after retraction.
    pub x: &'a [f64],
    pub objective: f64,
}

fn initial_point(cfg: &SqoConfig, objective: &Objective, seed: u64) -> Result<Vec<f64>> {
    let v = match &cfg.init {
        SqoInit::Gaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..objective.dim())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        }
        SqoInit::WarmStart(v) => {
            if v.len() != objective.dim() {
                return Err(NsflError::Dimension {
                    expected: objective.dim(),
                    found: v.len(),
                });
            }
            v.clone()
        }
        SqoInit::Monolithic => objective.monolithic().to_vec(),
    };
    onto_sphere(&v).ok_or(NsflError::DegenerateRetraction)
}

pub fn optimize(pack: &QueryPack, sqo: &SqoConfig, op: &OperatorConfig) -> Result<SqoResult> {
    optimize_observed(pack, sqo, op, |_| {})
}

/// [`optimize`] with a callback after every update.
pub fn optimize_observed(
    pack: &QueryPack,
    sqo: &SqoConfig,
    op: &OperatorConfig,
    mut observer: impl FnMut(&Iteration<'_>),
) -> Result<SqoResult> {
    sqo.validate()?;
    op.validate()?;
    let objective = Objective::new(pack, op)?;
    if objective.dim() < 2 {
        return Err(NsflError::Config("optimization needs dimension >= 2".into()));
    }
    let base_seed = sqo.seed.unwrap_or(DEFAULT_SEED);
    let restarts = if sqo.init == SqoInit::Gaussian { sqo.restarts } else { 1 };
    let mut best: Option<SqoResult> = None;
    for r in 0..restarts {
        let x0 = initial_point(sqo, &objective, base_seed.wrapping_add(r as u64))?;
        let run = run_single(&objective, sqo, x0, &mut observer)?;
        if best
            .as_ref()
            .is_none_or(|b| run.final_objective > b.final_objective)
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_single(
    objective: &Objective,
    cfg: &SqoConfig,
    x0: Vec<f64>,
    observer: &mut impl FnMut(&Iteration<'_>),
) -> Result<SqoResult> {
    let initial_objective = objective.value(&x0)?;
    let mut x = x0;
    let mut best_x = x.clone();
    let mut best_loss = -initial_objective;
    let mut counter = 0usize;
    let mut trace = Vec::with_capacity(cfg.max_steps);
    let mut stop = StopReason::MaxSteps;
    let mut degenerate = false;

    for step in 0..cfg.max_steps {
        let eval = objective.evaluate(&x)?;
        let g_r = riemannian_grad(&x, &eval.gradient);
        let eta: Vec<f64> = g_r.iter().map(|g| cfg.learning_rate * g).collect();
        let next = match retract(&x, &eta) {
            Ok(v) => v,
            Err(NsflError::DegenerateRetraction) => {
                degenerate = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let f = objective.value(&next)?;
        observer(&Iteration {
            step,
            from: &x,
            riemannian_grad: &g_r,
            x: &next,
            objective: f,
        });
        x = next;
        trace.push(f);
        let loss = -f;
        if loss + cfg.tolerance < best_loss {
            best_loss = loss;
            best_x.clone_from(&x);
            counter = 0;
        } else {
            counter += 1;
        }
        if counter >= cfg.patience {
            let best_f = -best_loss;
            let window = &trace[trace.len() - cfg.patience..];
            stop = if window.iter().all(|f| (f - best_f).abs() <= cfg.tolerance) {
                StopReason::Converged
            } else {
                StopReason::Patience
            };
            break;
        }
    }

    let (x_star, final_objective) = if cfg.return_final {
        let f = objective.value(&x)?;
        (x, f)
    } else {
        (best_x, -best_loss)
    };
    Ok(SqoResult {
        x_star,
        initial_objective,
        final_objective,
        steps_taken: trace.len(),
        stop_reason: stop,
        objective_trace: trace,
        degenerate,
    })
}
