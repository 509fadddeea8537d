//! Counter-diabatically driven annealing on random-field Ising instances.
//!
//! Each run prepares the classical ground state of the transverse start
//! Hamiltonian (all spins along +x), integrates the driven dynamics to the
//! target Hamiltonian, and rounds the final m_i^z signs to an Ising
//! configuration. Repetitions with freshly drawn random transverse fields are
//! combined by taking the best (lowest) estimated energy; the failure
//! probability P_f(M) is measured against the exact oracle over an ensemble
//! of instances and fitted to the power law P_f ~ M^(-gamma).

use crate::cd::{integrate, CriticalityEvent, IntegratorConfig};
use crate::models::{
    annealing_hamiltonian, rfim_instance_with_boundary, transverse_fields, AnnealingHamiltonian,
    BoundaryKind, FieldKind, ModelError, Schedule,
};
use crate::oracle::{ground_state_maxflow, OracleError};
use crate::rng::mix;
use crate::spin::SpinConfig;
use nalgebra::Vector3;
use rayon::prelude::*;
use std::time::Duration;
use thiserror::Error;

/// Relative energy error above which a run counts as a failure.
pub const FAILURE_THRESHOLD: f64 = 0.01;

/// Accumulated alignment drift at which an annealing trajectory is abandoned
/// as no longer tracking the stationary state.
pub const C_LOSS_TOL: f64 = 1e-3;

/// Salt separating the instance-seed stream from the field-seed stream under
/// one master seed.
const FIELD_SEED_SALT: u64 = 0x6669_656c_6473;

/// Amplitude of the seeded symmetry-breaking tilt applied to the start state
/// of each annealing run (see [`tilted_state`]).
pub const SYMMETRY_BREAKING_TILT: f64 = 3e-3;

/// Salt separating the tilt stream from the transverse-field stream.
const TILT_SEED_SALT: u64 = 0x74_696c_74;

#[derive(Debug, Error)]
pub enum AnnealError {
    #[error("transverse field at spin {index} is {value}; start state needs h_x > 0")]
    NonPositiveField { index: usize, value: f64 },
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),
    #[error("all {m} repetitions halted on criticality; no energy estimate")]
    AllRunsInvalid { m: usize },
    #[error("gamma fit needs at least 3 usable points, got {points}")]
    InsufficientData { points: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Per-step alignment-drift budget for annealing runs. Looser than the
/// trajectory-study default: spikes only need to be crossed faithfully, not
/// resolved all the way to the blow-up threshold.
pub const ANNEAL_REFINE_C_TOL: f64 = 1e-8;

/// Halving budget per step for annealing runs; once exhausted the run is
/// declared critical and abandoned, which keeps genuinely singular instances
/// cheap.
pub const ANNEAL_MAX_HALVINGS: usize = 12;

/// Accepted-step budget for annealing runs. Marginal instances can pin the
/// step near the halving floor for a finite stretch of the sweep; past this
/// budget the run is declared critical instead of crawling through it.
/// Clean sweeps finish in about tau/dt = 400 accepted steps, so ten times
/// that is a generous margin for benign spike crossings.
pub const ANNEAL_MAX_STEPS: usize = 800;

/// Integrator settings for annealing runs: capped step refinement to cross
/// benign counter-diabatic field spikes, plus an accumulated-drift abort so a
/// run that has lost the stationary branch is abandoned instead of producing
/// a meaningless state.
pub fn annealing_integrator(dt: f64) -> IntegratorConfig {
    IntegratorConfig {
        dt,
        refine_c_tol: Some(ANNEAL_REFINE_C_TOL),
        max_halvings: ANNEAL_MAX_HALVINGS,
        c_loss_tol: Some(C_LOSS_TOL),
        record_stride: usize::MAX,
        max_steps: ANNEAL_MAX_STEPS,
        ..Default::default()
    }
}

/// Ground state of the start Hamiltonian V' = -sum_i h_i^x m_i^x: every spin
/// along +x. Requires strictly positive fields.
pub fn initial_state(h_x: &[f64]) -> Result<SpinConfig, AnnealError> {
    for (index, &value) in h_x.iter().enumerate() {
        if !(value > 0.0) {
            return Err(AnnealError::NonPositiveField { index, value });
        }
    }
    Ok(SpinConfig::uniform(h_x.len(), Vector3::new(1.0, 0.0, 0.0)).expect("unit vector"))
}

/// Start state with a deterministic, seeded z tilt of amplitude
/// [`SYMMETRY_BREAKING_TILT`] on every spin.
///
/// The ideal all-+x start lies exactly on the invariant manifolds of any
/// field realization whose h^z pattern is odd under a lattice automorphism
/// (a measure-zero set in the continuum but common for binary +-h fields on
/// small lattices). Driven dynamics started exactly on such a manifold stays
/// on it and ends in a symmetric excited configuration rather than picking a
/// magnetization sign; an infinitesimal generic perturbation is what selects
/// a branch physically. The tilt plays that role, sized well below the
/// rounding scale but above the bifurcation's basin boundary, and is drawn
/// from the run's field seed so repetitions and reruns are reproducible.
pub fn tilted_state(h_x: &[f64], field_seed: u64) -> Result<SpinConfig, AnnealError> {
    use rand::Rng;
    let base = initial_state(h_x)?;
    let mut rng = crate::rng::stream_rng(mix(field_seed, TILT_SEED_SALT), 0);
    let spins: Vec<Vector3<f64>> = base
        .spins()
        .iter()
        .map(|_| {
            let z = SYMMETRY_BREAKING_TILT * (rng.random::<f64>() - 0.5);
            Vector3::new(1.0, 0.0, z).normalize()
        })
        .collect();
    Ok(SpinConfig::new(spins).expect("unit vectors"))
}

/// Outcome of a single annealing run.
#[derive(Debug, Clone)]
pub struct AnnealReport {
    /// Target-Hamiltonian energy of the (continuous) final spin state.
    pub e_continuous: f64,
    /// Ising energy of the rounded configuration.
    pub e_est: f64,
    /// Rounded configuration, sign(m_z) with sign(0) = +1.
    pub spins: Vec<i8>,
    /// Criticality event, if the trajectory was halted early.
    pub criticality: Option<CriticalityEvent>,
    /// Number of accepted integrator steps.
    pub steps: usize,
    pub wall_time: Duration,
}

/// Rounds a continuous spin state to an Ising configuration by the sign of
/// m_z, mapping m_z = 0 to +1.
pub fn round_spins(state: &SpinConfig) -> Vec<i8> {
    state
        .spins()
        .iter()
        .map(|m| if m.z >= 0.0 { 1 } else { -1 })
        .collect()
}

/// One annealing run of `ham` from t = 0 to t = tau.
pub fn anneal_once(
    ham: &AnnealingHamiltonian,
    cfg: &IntegratorConfig,
) -> Result<AnnealReport, AnnealError> {
    cfg.validate().map_err(AnnealError::InvalidConfig)?;
    let start = std::time::Instant::now();
    let state0 = tilted_state(&ham.fields.h_x, ham.fields.seed)?;
    let tau = ham.schedule.tau;
    // The step budget is sized for tau/dt = 400 sweeps; keep at least twice
    // the nominal step count for finer steps or longer sweeps.
    let mut cfg = *cfg;
    cfg.max_steps = cfg.max_steps.max(2 * (tau / cfg.dt).ceil() as usize);
    let rec = integrate(ham, &state0, 0.0, tau, &cfg);
    let spins = round_spins(&rec.final_state);
    let e_est = ham.instance.energy_of_spins(&spins);
    Ok(AnnealReport {
        e_continuous: ham.target_energy(&rec.final_state),
        e_est,
        spins,
        criticality: rec.criticality_event,
        steps: rec.steps,
        wall_time: start.elapsed(),
    })
}

/// Best-of-M annealing on a fixed instance: repetition r draws transverse
/// fields from seed `mix(field_master, r)`, so results are independent of
/// execution order and nested in M. Returns the minimum estimated energy over
/// the runs that completed, with every per-run report.
pub fn run_repetitions(
    instance: &crate::models::IsingInstance,
    m: usize,
    field_master: u64,
    kind: FieldKind,
    schedule: Schedule,
    cfg: &IntegratorConfig,
) -> Result<(f64, Vec<AnnealReport>), AnnealError> {
    assert!(m >= 1, "need at least one repetition");
    let n = instance.spin_count();
    let mut reports = Vec::with_capacity(m);
    let mut best = f64::INFINITY;
    for r in 0..m {
        let fields = transverse_fields(n, kind, mix(field_master, r as u64));
        let ham = annealing_hamiltonian(instance.clone(), fields, schedule)?;
        let report = anneal_once(&ham, cfg)?;
        if report.criticality.is_none() {
            best = best.min(report.e_est);
        }
        reports.push(report);
    }
    if !best.is_finite() {
        return Err(AnnealError::AllRunsInvalid { m });
    }
    Ok((best, reports))
}

/// Failure criterion: relative energy error above [`FAILURE_THRESHOLD`].
pub fn is_failure(e_est: f64, e_g: f64) -> bool {
    debug_assert!(e_g != 0.0, "ground-state energy must be nonzero");
    ((e_est - e_g) / e_g).abs() > FAILURE_THRESHOLD
}

/// Experiment parameters shared by the grid runners.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Lattice side; instances have L^2 spins.
    pub l: usize,
    /// Repetition checkpoints, strictly increasing. P_f is reported at each.
    pub m_values: Vec<usize>,
    /// Number of disorder instances in the ensemble.
    pub n_instances: usize,
    /// Master seed; instance and field seeds are derived from it.
    pub seed: u64,
    /// Anneal duration.
    pub tau: f64,
    /// Base integrator step.
    pub dt: f64,
    /// How transverse fields are drawn each repetition.
    pub field_kind: FieldKind,
    /// Lattice boundary convention. Periodic matches the published failure
    /// rates; see [`BoundaryKind`].
    pub boundary: BoundaryKind,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), AnnealError> {
        if self.l == 0 {
            return Err(AnnealError::InvalidConfig("L must be at least 1".into()));
        }
        if self.n_instances == 0 {
            return Err(AnnealError::InvalidConfig(
                "need at least one instance".into(),
            ));
        }
        if self.m_values.is_empty() || self.m_values[0] == 0 {
            return Err(AnnealError::InvalidConfig(
                "repetition checkpoints must be positive".into(),
            ));
        }
        if !self.m_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(AnnealError::InvalidConfig(
                "repetition checkpoints must be strictly increasing".into(),
            ));
        }
        if !(self.tau > 0.0) || !(self.dt > 0.0) {
            return Err(AnnealError::InvalidConfig(
                "tau and dt must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Seed of the k-th disorder instance.
    pub fn instance_seed(&self, k: usize) -> u64 {
        mix(mix(self.seed, self.l as u64), k as u64)
    }

    /// Seed of the r-th transverse-field draw for the k-th instance.
    pub fn field_seed(&self, k: usize, r: usize) -> u64 {
        mix(mix(self.instance_seed(k), FIELD_SEED_SALT), r as u64)
    }
}

/// Best-of-M energies for one disorder instance. `e_best[c]` is the minimum
/// estimated energy over the first `m_values[c]` repetitions (prefix minima,
/// so larger M can never do worse). Runs halted by criticality are excluded
/// from the minima.
#[derive(Debug, Clone)]
pub struct InstanceSweep {
    pub instance_seed: u64,
    pub e_g: f64,
    pub e_best: Vec<Option<f64>>,
    pub n_halted: usize,
}

/// Runs `max(m_values)` annealing repetitions on one instance and reduces
/// them to prefix minima at each checkpoint.
pub fn sweep_instance(
    config: &ExperimentConfig,
    k: usize,
) -> Result<InstanceSweep, AnnealError> {
    config.validate()?;
    let instance_seed = config.instance_seed(k);
    let instance = rfim_instance_with_boundary(config.l, instance_seed, config.boundary);
    let e_g = ground_state_maxflow(&instance)?.energy;
    let schedule = Schedule::new(config.tau)?;
    let cfg = annealing_integrator(config.dt);
    let m_max = *config.m_values.last().unwrap();
    let n = instance.spin_count();

    let mut best = f64::INFINITY;
    let mut e_best = Vec::with_capacity(config.m_values.len());
    let mut checkpoint = 0usize;
    let mut n_halted = 0usize;
    for r in 0..m_max {
        let fields = transverse_fields(n, config.field_kind, config.field_seed(k, r));
        let ham = annealing_hamiltonian(instance.clone(), fields, schedule)?;
        let report = anneal_once(&ham, &cfg)?;
        if report.criticality.is_some() {
            n_halted += 1;
        } else {
            best = best.min(report.e_est);
        }
        while checkpoint < config.m_values.len() && r + 1 == config.m_values[checkpoint] {
            e_best.push(best.is_finite().then_some(best));
            checkpoint += 1;
        }
    }
    // An instance where every repetition halted keeps e_best = None and is
    // counted as a failure by the statistics; it is not a process error.
    Ok(InstanceSweep {
        instance_seed,
        e_g,
        e_best,
        n_halted,
    })
}

/// Failure statistics at one (L, M) grid point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FailureStats {
    pub l: usize,
    pub m: usize,
    pub n_instances: usize,
    pub n_failures: usize,
    pub p_f: f64,
    /// Binomial standard error sqrt(p (1 - p) / n).
    pub stderr: f64,
}

/// Runs the full ensemble for `config` and returns P_f at every repetition
/// checkpoint, together with the per-instance sweeps.
pub fn failure_statistics(
    config: &ExperimentConfig,
) -> Result<(Vec<FailureStats>, Vec<InstanceSweep>), AnnealError> {
    config.validate()?;
    let sweeps: Result<Vec<InstanceSweep>, AnnealError> = (0..config.n_instances)
        .into_par_iter()
        .map(|k| sweep_instance(config, k))
        .collect();
    let sweeps = sweeps?;
    let n = config.n_instances;
    let stats = config
        .m_values
        .iter()
        .enumerate()
        .map(|(c, &m)| {
            let n_failures = sweeps
                .iter()
                .filter(|s| match s.e_best[c] {
                    Some(e) => is_failure(e, s.e_g),
                    // No valid run yet at this checkpoint counts as a failure.
                    None => true,
                })
                .count();
            let p_f = n_failures as f64 / n as f64;
            FailureStats {
                l: config.l,
                m,
                n_instances: n,
                n_failures,
                p_f,
                stderr: (p_f * (1.0 - p_f) / n as f64).sqrt(),
            }
        })
        .collect();
    Ok((stats, sweeps))
}

/// Power-law fit P_f ~ M^(-gamma).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GammaFit {
    pub gamma: f64,
    /// ln P_f intercept at ln M = 0.
    pub intercept: f64,
    /// (M_low, M_high) actually used by the fit.
    pub fit_range: (usize, usize),
    /// RMS residual of ln P_f around the fit.
    pub residual: f64,
    /// Number of points used.
    pub points: usize,
}

/// Least-squares fit of ln P_f against ln M over the large-M tail: points
/// with ln M at or above the midpoint of the sampled ln M range. Zero
/// failure probabilities are dropped (they carry no log-scale information);
/// when that leaves fewer than three tail points — an ensemble whose P_f
/// reaches the zero-count floor inside the grid — the fit falls back to the
/// three largest-M points that still have nonzero P_f.
pub fn fit_gamma(stats: &[FailureStats]) -> Result<GammaFit, AnnealError> {
    let mut finite: Vec<&FailureStats> = stats.iter().filter(|s| s.p_f > 0.0).collect();
    finite.sort_by_key(|s| s.m);
    let (lo, hi) = stats
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            let x = (s.m as f64).ln();
            (lo.min(x), hi.max(x))
        });
    let mid = 0.5 * (lo + hi);
    let mut tail: Vec<(f64, f64, usize)> = finite
        .iter()
        .filter(|s| (s.m as f64).ln() >= mid - 1e-12)
        .map(|s| ((s.m as f64).ln(), s.p_f.ln(), s.m))
        .collect();
    if tail.len() < 3 {
        tail = finite
            .iter()
            .rev()
            .take(3)
            .rev()
            .map(|s| ((s.m as f64).ln(), s.p_f.ln(), s.m))
            .collect();
    }
    if tail.len() < 3 {
        return Err(AnnealError::InsufficientData { points: tail.len() });
    }
    let n = tail.len() as f64;
    let sx: f64 = tail.iter().map(|p| p.0).sum();
    let sy: f64 = tail.iter().map(|p| p.1).sum();
    let sxx: f64 = tail.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = tail.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(AnnealError::InsufficientData { points: tail.len() });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = (tail
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(GammaFit {
        gamma: -slope,
        intercept,
        fit_range: (
            tail.iter().map(|p| p.2).min().unwrap(),
            tail.iter().map(|p| p.2).max().unwrap(),
        ),
        residual,
        points: tail.len(),
    })
}
