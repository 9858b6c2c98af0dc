//! Experiment configuration and orchestration: the single entry point used
//! by the command line, the language bindings, and the acceptance tests.
//!
//! Configs round-trip losslessly through TOML (rationals stay `"num/den"`
//! strings), runs are deterministic given (config, seed), and all file
//! output is byte-reproducible.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{des_adversary, sync_adversary, RNG_NAME};
use crate::agreement::{run_apa, ApaNodeRecord, SyncError};
use crate::analysis::{
    check_lemma_suite, check_pulse_sync, solve_parameters, ConformanceReport, ParameterSolution,
    SolverError,
};
use crate::attack::{
    attack_horizon, attack_round, run_attack, AttackError, FreeRunner, LowerBoundReport,
};
use crate::clock::{ClockSchedule, ClockSegment, TimePoint};
use crate::cps::CpsNodeBehavior;
use crate::params::{fault_budget, RejectionReport, SystemParams};
use crate::rational::{spread, Rat};
use crate::sim::{run_simulation, DelayPolicy, ExecutionTrace, NodeBehavior, SimError};
use crate::NodeId;

fn default_one() -> Rat {
    Rat::one()
}

fn default_ell() -> Rat {
    Rat::one()
}

fn default_eps() -> Rat {
    Rat::new(1, 8)
}

fn default_pulses() -> u64 {
    20
}

fn default_runs() -> u64 {
    10
}

fn default_delay_steps() -> u64 {
    64
}

fn default_adversary() -> String {
    "none".to_string()
}

fn default_drift() -> String {
    "worst".to_string()
}

fn default_delay_policy() -> String {
    "seeded".to_string()
}

fn default_behavior() -> String {
    "cps".to_string()
}

fn default_free_run_period() -> Rat {
    Rat::from_int(2)
}

/// Everything an experiment needs. Unused fields for a given mode are
/// ignored; all rationals serialize as `"num/den"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `params`, `simulate`, `apa`, or `attack`.
    pub mode: String,
    pub n: usize,
    /// Actually corrupted node ids (at most the fault budget).
    #[serde(default)]
    pub corrupted: Vec<u32>,
    pub theta: Rat,
    pub d: Rat,
    pub u: Rat,
    /// Defaults to `u`.
    #[serde(default)]
    pub u_tilde: Option<Rat>,
    /// Round-length inflation; 1 = minimal.
    #[serde(default = "default_one")]
    pub t_scale: Rat,
    /// `none`, `silent`, `consistent_liar`, `equivocator`, `echo_rusher`.
    #[serde(default = "default_adversary")]
    pub adversary: String,
    /// `none` (all rate-1 clocks) or `worst` (alternating rate extremes and
    /// staggered offsets).
    #[serde(default = "default_drift")]
    pub drift: String,
    /// `max`, `min`, or `seeded`.
    #[serde(default = "default_delay_policy")]
    pub delay_policy: String,
    #[serde(default = "default_delay_steps")]
    pub delay_steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Pulse-count horizon for `simulate`.
    #[serde(default = "default_pulses")]
    pub pulses: u64,
    /// Initial spread bound for `apa`.
    #[serde(default = "default_ell")]
    pub ell: Rat,
    /// Target spread for `apa`.
    #[serde(default = "default_eps")]
    pub eps: Rat,
    /// Number of randomized runs for `apa`.
    #[serde(default = "default_runs")]
    pub runs: u64,
    /// `cps` or `free_run`, for `attack`.
    #[serde(default = "default_behavior")]
    pub behavior: String,
    #[serde(default = "default_free_run_period")]
    pub free_run_period: Rat,
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("parameters rejected: {0}")]
    Rejected(#[from] RejectionReport),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

fn corrupted_set(config: &ExperimentConfig) -> Result<BTreeSet<NodeId>, ExperimentError> {
    let budget = fault_budget(config.n.max(1));
    if config.corrupted.len() > budget {
        return Err(ExperimentError::Config(format!(
            "{} corrupted nodes exceeds the fault budget ceil(n/2)-1 = {budget}",
            config.corrupted.len()
        )));
    }
    let set: BTreeSet<NodeId> = config.corrupted.iter().copied().map(NodeId).collect();
    if set.len() != config.corrupted.len() {
        return Err(ExperimentError::Config("duplicate corrupted ids".into()));
    }
    if let Some(v) = set.iter().find(|v| v.0 as usize >= config.n) {
        return Err(ExperimentError::Config(format!(
            "corrupted node {v} out of range for n = {}",
            config.n
        )));
    }
    Ok(set)
}

/// Clock schedules per the drift preset: `worst` alternates rates 1 and
/// theta and staggers initial offsets across `[0, s]`.
pub fn drift_schedules(
    config: &ExperimentConfig,
    params: &SystemParams,
) -> Result<Vec<ClockSchedule>, ExperimentError> {
    let n = params.n;
    match config.drift.as_str() {
        "none" => Ok(vec![ClockSchedule::identity(); n]),
        "worst" => Ok((0..n)
            .map(|k| {
                let rate = if k % 2 == 0 {
                    Rat::one()
                } else {
                    params.theta.clone()
                };
                let offset = if n > 1 {
                    &params.s * &Rat::new(k as i64, (n - 1) as i64)
                } else {
                    Rat::zero()
                };
                ClockSchedule::new(
                    offset,
                    vec![ClockSegment {
                        start: TimePoint::zero(),
                        rate,
                    }],
                    &params.theta,
                )
                .expect("preset schedules are valid")
            })
            .collect()),
        other => Err(ExperimentError::Config(format!(
            "unknown drift preset '{other}' (use none|worst)"
        ))),
    }
}

fn delay_policy(config: &ExperimentConfig) -> Result<DelayPolicy, ExperimentError> {
    match config.delay_policy.as_str() {
        "max" => Ok(DelayPolicy::Max),
        "min" => Ok(DelayPolicy::MinBand),
        "seeded" => Ok(DelayPolicy::SeededGrid {
            seed: config.seed,
            steps: config.delay_steps.max(1),
        }),
        other => Err(ExperimentError::Config(format!(
            "unknown delay policy '{other}' (use max|min|seeded)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// params mode
// ---------------------------------------------------------------------------

pub fn run_params(config: &ExperimentConfig) -> Result<ParameterSolution, ExperimentError> {
    Ok(solve_parameters(
        &config.d,
        &config.u,
        &config.theta,
        &config.t_scale,
    )?)
}

// ---------------------------------------------------------------------------
// simulate mode
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateReport {
    pub params: SystemParams,
    pub solution: ParameterSolution,
    pub adversary: String,
    pub drift: String,
    pub rng: String,
    pub seed: u64,
    pub pulses: u64,
    pub pulse_sync: ConformanceReport,
    pub protocol_checks: ConformanceReport,
}

impl SimulateReport {
    pub fn all_pass(&self) -> bool {
        self.pulse_sync.all_pass() && self.protocol_checks.all_pass()
    }
}

#[derive(Debug)]
pub struct SimulateOutcome {
    pub trace: ExecutionTrace,
    pub report: SimulateReport,
}

/// Solves parameters, runs the protocol under the configured adversary and
/// drift, and checks the trace.
pub fn run_simulate(config: &ExperimentConfig) -> Result<SimulateOutcome, ExperimentError> {
    let corrupted = corrupted_set(config)?;
    let solution = run_params(config)?;
    if !solution.feasible {
        return Err(ExperimentError::Config(format!(
            "infeasible drift bound theta = {}",
            config.theta
        )));
    }
    let params = solution
        .to_system_params(config.n, config.u_tilde.clone())
        .ok_or_else(|| ExperimentError::Config("solver produced no values".into()))?
        .validated()?;
    let solved = solution.solved.as_ref().expect("feasible solution");

    let schedules = drift_schedules(config, &params)?;
    let policy = delay_policy(config)?;
    let behaviors: Vec<(NodeId, Box<dyn NodeBehavior>)> = (0..config.n as u32)
        .map(NodeId)
        .filter(|v| !corrupted.contains(v))
        .map(|v| {
            (
                v,
                Box::new(CpsNodeBehavior::new(v, params.clone())) as Box<dyn NodeBehavior>,
            )
        })
        .collect();
    let adversary = match config.adversary.as_str() {
        "none" => {
            if !corrupted.is_empty() {
                return Err(ExperimentError::Config(
                    "corrupted nodes configured but adversary is 'none'".into(),
                ));
            }
            None
        }
        name => {
            let ids: Vec<NodeId> = corrupted.iter().copied().collect();
            Some(des_adversary(name, &params, &ids).ok_or_else(|| {
                ExperimentError::Config(format!("unknown adversary '{name}'"))
            })?)
        }
    };

    let horizon = TimePoint::new(
        &params.s + &(&solved.p_max * &Rat::from(config.pulses + 1)),
    );
    let trace = run_simulation(
        params.clone(),
        schedules,
        behaviors,
        corrupted,
        policy,
        adversary,
        &horizon,
    )?;

    let pulse_sync = check_pulse_sync(
        &trace,
        &params.s,
        &solved.p_min,
        &solved.p_max,
        config.pulses,
    );
    let protocol_checks = check_lemma_suite(&trace, &params);
    let report = SimulateReport {
        params,
        solution,
        adversary: config.adversary.clone(),
        drift: config.drift.clone(),
        rng: "splitmix64-grid".to_string(),
        seed: config.seed,
        pulses: config.pulses,
        pulse_sync,
        protocol_checks,
    };
    Ok(SimulateOutcome { trace, report })
}

// ---------------------------------------------------------------------------
// apa mode
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApaRunSummary {
    pub run: u64,
    pub inputs: BTreeMap<NodeId, Rat>,
    pub outputs: BTreeMap<NodeId, Rat>,
    pub iterations: u64,
    pub final_spread: Rat,
    pub contraction_ok: bool,
    pub containment_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApaExperimentReport {
    pub n: usize,
    pub corrupted: Vec<u32>,
    pub adversary: String,
    pub rng: String,
    pub seed: u64,
    pub ell: Rat,
    pub eps: Rat,
    pub runs: Vec<ApaRunSummary>,
    pub all_pass: bool,
}

#[derive(Debug)]
pub struct ApaOutcome {
    pub report: ApaExperimentReport,
    /// Per-iteration, per-node records across all runs (JSONL payload).
    pub records: Vec<ApaNodeRecord>,
}

/// Randomized agreement runs with per-iteration contraction and containment
/// checks.
pub fn run_apa_experiment(config: &ExperimentConfig) -> Result<ApaOutcome, ExperimentError> {
    let corrupted = corrupted_set(config)?;
    if config.n < 3 {
        return Err(ExperimentError::Config("n must be >= 3".into()));
    }
    if !config.eps.is_positive() {
        return Err(ExperimentError::Config("eps must be positive".into()));
    }
    let honest: Vec<NodeId> = (0..config.n as u32)
        .map(NodeId)
        .filter(|v| !corrupted.contains(v))
        .collect();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut runs = Vec::new();
    let mut records = Vec::new();
    let mut all_pass = true;

    for run in 0..config.runs {
        // Honest inputs on a 1/256 grid inside [0, ell].
        let inputs: BTreeMap<NodeId, Rat> = honest
            .iter()
            .map(|v| {
                let k = rng.random_range(0..=256i64);
                (*v, &config.ell * &Rat::new(k, 256))
            })
            .collect();
        let mut adversary = match config.adversary.as_str() {
            "none" => Box::new(crate::agreement::NullAdversary) as Box<dyn crate::agreement::SyncAdversary>,
            name => sync_adversary(name, config.seed.wrapping_add(run)).ok_or_else(|| {
                ExperimentError::Config(format!("unknown agreement adversary '{name}'"))
            })?,
        };
        let result = run_apa(
            config.n,
            &inputs,
            &config.ell,
            &config.eps,
            &corrupted,
            adversary.as_mut(),
        )?;

        // Per-iteration contraction + containment, exact.
        let mut contraction_ok = true;
        let mut containment_ok = true;
        let mut current: BTreeMap<NodeId, Rat> = inputs.clone();
        for iter in 0..result.iterations {
            let ins: Vec<Rat> = current.values().cloned().collect();
            let outs: BTreeMap<NodeId, Rat> = result
                .records
                .iter()
                .filter(|rec| rec.iteration == iter)
                .map(|rec| (rec.node, rec.output.clone()))
                .collect();
            let out_vals: Vec<Rat> = outs.values().cloned().collect();
            let half_in = &spread(&ins) / &Rat::from_int(2);
            if spread(&out_vals) > half_in {
                contraction_ok = false;
            }
            let lo = ins.iter().min().unwrap().clone();
            let hi = ins.iter().max().unwrap().clone();
            if out_vals.iter().any(|o| o < &lo || o > &hi) {
                containment_ok = false;
            }
            current = outs;
        }

        let out_vals: Vec<Rat> = result.outputs.values().cloned().collect();
        let final_spread = spread(&out_vals);
        let pass = contraction_ok && containment_ok && final_spread <= config.eps;
        all_pass &= pass;
        runs.push(ApaRunSummary {
            run,
            inputs,
            outputs: result.outputs,
            iterations: result.iterations,
            final_spread,
            contraction_ok,
            containment_ok,
        });
        records.extend(result.records);
    }

    Ok(ApaOutcome {
        report: ApaExperimentReport {
            n: config.n,
            corrupted: config.corrupted.clone(),
            adversary: config.adversary.clone(),
            rng: RNG_NAME.to_string(),
            seed: config.seed,
            ell: config.ell.clone(),
            eps: config.eps.clone(),
            runs,
            all_pass,
        },
        records,
    })
}

// ---------------------------------------------------------------------------
// attack mode
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackReport {
    pub params: SystemParams,
    pub behavior: String,
    pub r_star: u64,
    pub lower_bound: LowerBoundReport,
}

#[derive(Debug)]
pub struct AttackOutcome {
    pub traces: [ExecutionTrace; 3],
    pub report: AttackReport,
}

/// Runs the three-execution construction against the configured behavior at
/// n = 3 and verifies the skew accounting.
pub fn run_attack_experiment(config: &ExperimentConfig) -> Result<AttackOutcome, ExperimentError> {
    if config.n != 3 {
        return Err(ExperimentError::Config(format!(
            "attack runs at n = 3, got {}",
            config.n
        )));
    }
    let solution = run_params(config)?;
    if !solution.feasible {
        return Err(ExperimentError::Config(format!(
            "infeasible drift bound theta = {}",
            config.theta
        )));
    }
    let u_tilde = config.u_tilde.clone().unwrap_or_else(|| config.u.clone());
    let params = solution
        .to_system_params(3, Some(u_tilde.clone()))
        .ok_or_else(|| ExperimentError::Config("solver produced no values".into()))?;
    let solved = solution.solved.as_ref().expect("feasible solution");

    let (p_min, p_max): (Rat, Rat) = match config.behavior.as_str() {
        "cps" => {
            params.validate()?;
            (solved.p_min.clone(), solved.p_max.clone())
        }
        "free_run" => (
            config.free_run_period.clone(),
            config.free_run_period.clone(),
        ),
        other => {
            return Err(ExperimentError::Config(format!(
                "unknown attack behavior '{other}' (use cps|free_run)"
            )))
        }
    };
    if !p_min.is_positive() {
        return Err(ExperimentError::Config(
            "behavior has no positive minimum period".into(),
        ));
    }

    let r_star = attack_round(&u_tilde, &p_min, &config.theta);
    let horizon = attack_horizon(&params, &p_max, r_star);
    let behavior = config.behavior.clone();
    let period = config.free_run_period.clone();
    let params_for_behavior = params.clone();
    let factory = move |v: NodeId| -> Box<dyn NodeBehavior> {
        if behavior == "cps" {
            Box::new(CpsNodeBehavior::new(v, params_for_behavior.clone()))
        } else {
            Box::new(FreeRunner::new(period.clone()))
        }
    };
    let (triple, lower_bound) = run_attack(&params, &factory, r_star, &horizon, 8)?;

    Ok(AttackOutcome {
        traces: triple.traces,
        report: AttackReport {
            params,
            behavior: config.behavior.clone(),
            r_star,
            lower_bound,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::r;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            mode: "simulate".into(),
            n: 4,
            corrupted: vec![3],
            theta: r(101, 100),
            d: r(1, 1),
            u: r(1, 1000),
            u_tilde: None,
            t_scale: Rat::one(),
            adversary: "silent".into(),
            drift: "worst".into(),
            delay_policy: "seeded".into(),
            delay_steps: 64,
            seed: 7,
            pulses: 5,
            ell: Rat::one(),
            eps: r(1, 8),
            runs: 3,
            behavior: "cps".into(),
            free_run_period: r(2, 1),
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = base_config();
        let text = config.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn excess_corruption_is_rejected() {
        let mut config = base_config();
        config.n = 3;
        config.corrupted = vec![1, 2];
        let err = run_simulate(&config).unwrap_err();
        assert!(matches!(err, ExperimentError::Config(_)), "{err}");
    }

    #[test]
    fn unknown_adversary_is_rejected() {
        let mut config = base_config();
        config.adversary = "gremlin".into();
        let err = run_simulate(&config).unwrap_err();
        assert!(matches!(err, ExperimentError::Config(_)), "{err}");
    }

    #[test]
    fn short_silent_run_passes_all_checks() {
        let outcome = run_simulate(&base_config()).unwrap();
        assert!(
            outcome.report.all_pass(),
            "{:?}",
            outcome
                .report
                .pulse_sync
                .checks
                .iter()
                .chain(&outcome.report.protocol_checks.checks)
                .filter(|c| !c.pass)
                .collect::<Vec<_>>()
        );
        assert_eq!(outcome.report.pulse_sync.rounds_checked, 5);
    }

    #[test]
    fn apa_experiment_contracts() {
        let mut config = base_config();
        config.mode = "apa".into();
        config.n = 5;
        config.corrupted = vec![0, 4];
        config.adversary = "equivocator".into();
        config.runs = 5;
        let outcome = run_apa_experiment(&config).unwrap();
        assert!(outcome.report.all_pass);
        assert!(!outcome.records.is_empty());
    }

    #[test]
    fn free_run_attack_reports_exact_bound() {
        let mut config = base_config();
        config.mode = "attack".into();
        config.n = 3;
        config.corrupted = vec![];
        config.u = Rat::zero();
        config.u_tilde = Some(r(3, 10));
        config.behavior = "free_run".into();
        let outcome = run_attack_experiment(&config).unwrap();
        let lb = &outcome.report.lower_bound;
        assert!(lb.sum_identity_ok);
        assert!(lb.bound_met);
        assert_eq!(lb.telescoping_sum, r(3, 5));
        assert_eq!(lb.max_skew, r(1, 5));
    }
}
