//! Concrete Hamiltonians and problem generators: the fully connected LMG
//! demonstration model, the annealing interpolation between a transverse-field
//! start and an Ising target, and random-field Ising instances on the square
//! lattice.

use crate::rng::stream_rng;
use crate::spin::{Hamiltonian, SpinConfig};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schedule argument s = {0} outside [0, 1]")]
    OutOfDomain(f64),
    #[error("instance has {instance} spins but {fields} transverse fields")]
    DimensionMismatch { instance: usize, fields: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Annealing ramp g(s) = (1 - cos(pi s)) / 2; g(0) = 0, g(1) = 1 and the
/// derivative vanishes at both endpoints, so CD fields vanish there too.
pub fn schedule_g(s: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(ModelError::OutOfDomain(s));
    }
    Ok((1.0 - (PI * s).cos()) / 2.0)
}

/// Time schedule over [0, tau] with the cosine ramp.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub tau: f64,
}

impl Schedule {
    pub fn new(tau: f64) -> Result<Self, ModelError> {
        if tau <= 0.0 {
            return Err(ModelError::InvalidParameter(format!("tau = {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn g(&self, t: f64) -> f64 {
        (1.0 - (PI * t / self.tau).cos()) / 2.0
    }

    /// dg/dt.
    pub fn g_dot(&self, t: f64) -> f64 {
        PI / (2.0 * self.tau) * (PI * t / self.tau).sin()
    }
}

/// Parameters of the fully connected LMG benchmark,
/// H_t = -(J/2N)(sum_i m_i^z)^2 - h^z(t) sum_i m_i^z - h^x(t) sum_i m_i^x
/// with h^z(t) = J cos(pi t/tau)/2 and h^x(t) = h0 sin(pi t/tau).
#[derive(Debug, Clone, Copy)]
pub struct LmgParams {
    pub coupling: f64,
    pub h0: f64,
    pub tau: f64,
    pub n: usize,
}

impl LmgParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.coupling <= 0.0 {
            return Err(ModelError::InvalidParameter(format!(
                "J = {}",
                self.coupling
            )));
        }
        if self.tau <= 0.0 {
            return Err(ModelError::InvalidParameter(format!("tau = {}", self.tau)));
        }
        if self.h0 < 0.0 {
            return Err(ModelError::InvalidParameter(format!("h0 = {}", self.h0)));
        }
        if self.n == 0 {
            return Err(ModelError::InvalidParameter("N = 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LmgHamiltonian {
    pub params: LmgParams,
}

pub fn lmg_hamiltonian(params: LmgParams) -> Result<LmgHamiltonian, ModelError> {
    params.validate()?;
    Ok(LmgHamiltonian { params })
}

impl LmgHamiltonian {
    /// (h^x(t), h^z(t)) of the sweep.
    pub fn sweep_fields(&self, t: f64) -> (f64, f64) {
        let s = PI * t / self.params.tau;
        (self.params.h0 * s.sin(), self.params.coupling * s.cos() / 2.0)
    }

    fn sweep_rates(&self, t: f64) -> (f64, f64) {
        let s = PI * t / self.params.tau;
        let w = PI / self.params.tau;
        (
            self.params.h0 * w * s.cos(),
            -self.params.coupling * w * s.sin() / 2.0,
        )
    }
}

impl Hamiltonian for LmgHamiltonian {
    fn spin_count(&self) -> usize {
        self.params.n
    }

    fn energy(&self, state: &SpinConfig, t: f64) -> f64 {
        let (hx, hz) = self.sweep_fields(t);
        let sz: f64 = state.spins().iter().map(|m| m.z).sum();
        let sx: f64 = state.spins().iter().map(|m| m.x).sum();
        let n = state.len() as f64;
        -self.params.coupling / (2.0 * n) * sz * sz - hz * sz - hx * sx
    }

    fn eff_field_into(&self, state: &SpinConfig, t: f64, out: &mut [Vector3<f64>]) {
        let (hx, hz) = self.sweep_fields(t);
        let sz: f64 = state.spins().iter().map(|m| m.z).sum();
        let mean = self.params.coupling * sz / state.len() as f64;
        for o in out.iter_mut() {
            *o = Vector3::new(hx, 0.0, hz + mean);
        }
    }

    fn field_jacobian_apply(
        &self,
        state: &SpinConfig,
        _t: f64,
        dm: &[Vector3<f64>],
        out: &mut [Vector3<f64>],
    ) {
        let dz: f64 = dm.iter().map(|v| v.z).sum();
        let val = self.params.coupling * dz / state.len() as f64;
        for o in out.iter_mut() {
            *o = Vector3::new(0.0, 0.0, val);
        }
    }

    fn field_jacobian_blocks(
        &self,
        state: &SpinConfig,
        _t: f64,
    ) -> Vec<(usize, usize, Matrix3<f64>)> {
        let n = state.len();
        let mut g = Matrix3::zeros();
        g[(2, 2)] = self.params.coupling / n as f64;
        let mut blocks = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                blocks.push((i, j, g));
            }
        }
        blocks
    }

    fn explicit_time_derivative_into(
        &self,
        _state: &SpinConfig,
        t: f64,
        out: &mut [Vector3<f64>],
    ) {
        let (dhx, dhz) = self.sweep_rates(t);
        for o in out.iter_mut() {
            *o = Vector3::new(dhx, 0.0, dhz);
        }
    }
}

/// Region of the LMG parameter plane (h^x, h^z) at coupling J.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseRegion {
    UniqueStationary,
    Bistable,
    SpinodalLine,
    FirstOrderLine,
    CriticalPoint,
}

/// Classifies (h^x, h^z) against the spinodal lines
/// J^(2/3) = |h^z|^(2/3) + |h^x|^(2/3), the first-order segment h^z = 0 with
/// |h^x| < J, and the critical point h^z = 0, |h^x| = J.
pub fn lmg_phase_classify(hx: f64, hz: f64, coupling: f64) -> PhaseRegion {
    let tol = 1e-9 * coupling;
    let on_axis = hz.abs() <= tol;
    if on_axis && (hx.abs() - coupling).abs() <= tol {
        return PhaseRegion::CriticalPoint;
    }
    if on_axis && hx.abs() < coupling - tol {
        return PhaseRegion::FirstOrderLine;
    }
    let s = (hz.abs() / coupling).powf(2.0 / 3.0) + (hx.abs() / coupling).powf(2.0 / 3.0);
    if (s - 1.0).abs() <= 1e-9 {
        PhaseRegion::SpinodalLine
    } else if s < 1.0 {
        PhaseRegion::Bistable
    } else {
        PhaseRegion::UniqueStationary
    }
}

/// Ferromagnetic Ising instance: bonds (i, j, J_ij) with i < j, longitudinal
/// fields h_i^z, laid out row-major on an L x L open lattice when generated.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IsingInstance {
    #[serde(rename = "L")]
    pub l: usize,
    pub seed: u64,
    pub bonds: Vec<(usize, usize, f64)>,
    pub h_z: Vec<f64>,
}

impl IsingInstance {
    pub fn spin_count(&self) -> usize {
        self.h_z.len()
    }

    /// Ising energy of a +/-1 assignment under Eq. form
    /// E = -sum_bonds J_ij s_i s_j - sum_i h_i^z s_i.
    ///
    /// Field terms are accumulated as separate positive and negative partial
    /// sums so that assignments with the same aligned/anti-aligned counts give
    /// bit-identical energies when all |h_i^z| are equal.
    pub fn energy_of_spins(&self, spins: &[i8]) -> f64 {
        assert_eq!(spins.len(), self.h_z.len());
        let mut bond_acc = 0.0;
        for &(i, j, jij) in &self.bonds {
            bond_acc += jij * (spins[i] * spins[j]) as f64;
        }
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (hz, &s) in self.h_z.iter().zip(spins) {
            let v = hz * s as f64;
            if v >= 0.0 {
                pos += v;
            } else {
                neg -= v;
            }
        }
        -bond_acc - (pos - neg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.h_z.len();
        if n == 0 {
            return Err(ModelError::InvalidParameter("empty instance".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &(i, j, _) in &self.bonds {
            if i >= j || j >= n {
                return Err(ModelError::InvalidParameter(format!("bad bond ({i}, {j})")));
            }
            if !seen.insert((i, j)) {
                return Err(ModelError::InvalidParameter(format!(
                    "duplicate bond ({i}, {j})"
                )));
            }
        }
        Ok(())
    }
}

/// Boundary convention of the L x L lattice.
///
/// Open boundaries give the cleanest planar min-cut picture and are the
/// default for oracle work. The annealing experiments default to periodic
/// boundaries: with open boundaries the soft collective mode of the driven
/// dynamics is the sine-profile Perron mode of the open grid, and its overlap
/// with the random fields — not the plain field sum — picks the final
/// orientation, which inflates uniform-field failure rates by an order of
/// magnitude relative to the translation-invariant lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Open,
    Periodic,
}

/// Random-field Ising instance on the open L x L lattice: J_ij = 1 on
/// nearest-neighbor pairs (2L(L-1) bonds), h_i^z = +/-0.3 with equal
/// probability, drawn from the stream keyed by (seed, L).
pub fn rfim_instance(l: usize, seed: u64) -> IsingInstance {
    rfim_instance_with_boundary(l, seed, BoundaryKind::Open)
}

/// [`rfim_instance`] with an explicit boundary convention. The field draw is
/// identical for both conventions, so the same (L, seed) pair yields the same
/// disorder realization on either lattice. Periodic boundaries require
/// L >= 3 (below that the wrap-around duplicates existing bonds).
pub fn rfim_instance_with_boundary(l: usize, seed: u64, boundary: BoundaryKind) -> IsingInstance {
    assert!(l >= 1, "L must be at least 1");
    assert!(
        boundary == BoundaryKind::Open || l >= 3,
        "periodic boundaries need L >= 3"
    );
    let n = l * l;
    let mut bonds = Vec::new();
    for r in 0..l {
        for c in 0..l {
            let i = r * l + c;
            match boundary {
                BoundaryKind::Open => {
                    if c + 1 < l {
                        bonds.push((i, i + 1, 1.0));
                    }
                    if r + 1 < l {
                        bonds.push((i, i + l, 1.0));
                    }
                }
                BoundaryKind::Periodic => {
                    let right = r * l + (c + 1) % l;
                    let down = ((r + 1) % l) * l + c;
                    bonds.push((i.min(right), i.max(right), 1.0));
                    bonds.push((i.min(down), i.max(down), 1.0));
                }
            }
        }
    }
    bonds.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut rng = stream_rng(seed, l as u64);
    let h_z = (0..n)
        .map(|_| if rng.random::<bool>() { 0.3 } else { -0.3 })
        .collect();
    IsingInstance {
        l,
        seed,
        bonds,
        h_z,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Uniform,
    RandomIid,
}

/// Transverse-field amplitudes h_i^x for the annealing start Hamiltonian
/// V' = -sum_i h_i^x m_i^x.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransverseFields {
    pub h_x: Vec<f64>,
    pub kind: FieldKind,
    pub seed: u64,
}

/// Uniform fields are all 1; random fields are i.i.d. uniform on [1, 2),
/// drawn from the stream keyed by `seed`.
pub fn transverse_fields(n: usize, kind: FieldKind, seed: u64) -> TransverseFields {
    assert!(n >= 1, "need at least one spin");
    let h_x = match kind {
        FieldKind::Uniform => vec![1.0; n],
        FieldKind::RandomIid => {
            let mut rng = stream_rng(seed, 0);
            (0..n).map(|_| rng.random_range(1.0..2.0)).collect()
        }
    };
    TransverseFields { h_x, kind, seed }
}

/// Interpolating Hamiltonian H_t = g(t/tau) H_T + (1 - g(t/tau)) V' with the
/// Ising target H_T and transverse start V'.
#[derive(Debug, Clone)]
pub struct AnnealingHamiltonian {
    pub instance: IsingInstance,
    pub fields: TransverseFields,
    pub schedule: Schedule,
    /// adjacency[i] lists (j, J_ij) for every bond touching i.
    neighbors: Vec<Vec<(usize, f64)>>,
}

pub fn annealing_hamiltonian(
    instance: IsingInstance,
    fields: TransverseFields,
    schedule: Schedule,
) -> Result<AnnealingHamiltonian, ModelError> {
    let n = instance.spin_count();
    if fields.h_x.len() != n {
        return Err(ModelError::DimensionMismatch {
            instance: n,
            fields: fields.h_x.len(),
        });
    }
    instance.validate()?;
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j, jij) in &instance.bonds {
        neighbors[i].push((j, jij));
        neighbors[j].push((i, jij));
    }
    Ok(AnnealingHamiltonian {
        instance,
        fields,
        schedule,
        neighbors,
    })
}

impl AnnealingHamiltonian {
    /// Local longitudinal field h_i^z + sum_j J_ij m_j^z.
    fn local_z(&self, state: &SpinConfig, i: usize) -> f64 {
        let mut lz = self.instance.h_z[i];
        for &(j, jij) in &self.neighbors[i] {
            lz += jij * state.spins()[j].z;
        }
        lz
    }

    /// Target-Hamiltonian energy of the continuous state.
    pub fn target_energy(&self, state: &SpinConfig) -> f64 {
        let mut e = 0.0;
        for &(i, j, jij) in &self.instance.bonds {
            e -= jij * state.spins()[i].z * state.spins()[j].z;
        }
        for (hz, m) in self.instance.h_z.iter().zip(state.spins()) {
            e -= hz * m.z;
        }
        e
    }

    fn start_energy(&self, state: &SpinConfig) -> f64 {
        -self
            .fields
            .h_x
            .iter()
            .zip(state.spins())
            .map(|(hx, m)| hx * m.x)
            .sum::<f64>()
    }
}

impl Hamiltonian for AnnealingHamiltonian {
    fn spin_count(&self) -> usize {
        self.instance.spin_count()
    }

    fn energy(&self, state: &SpinConfig, t: f64) -> f64 {
        let g = self.schedule.g(t);
        g * self.target_energy(state) + (1.0 - g) * self.start_energy(state)
    }

    fn eff_field_into(&self, state: &SpinConfig, t: f64, out: &mut [Vector3<f64>]) {
        let g = self.schedule.g(t);
        for (i, o) in out.iter_mut().enumerate() {
            *o = Vector3::new((1.0 - g) * self.fields.h_x[i], 0.0, g * self.local_z(state, i));
        }
    }

    fn field_jacobian_apply(
        &self,
        _state: &SpinConfig,
        t: f64,
        dm: &[Vector3<f64>],
        out: &mut [Vector3<f64>],
    ) {
        let g = self.schedule.g(t);
        for (i, o) in out.iter_mut().enumerate() {
            let mut dz = 0.0;
            for &(j, jij) in &self.neighbors[i] {
                dz += jij * dm[j].z;
            }
            *o = Vector3::new(0.0, 0.0, g * dz);
        }
    }

    fn field_jacobian_blocks(
        &self,
        _state: &SpinConfig,
        t: f64,
    ) -> Vec<(usize, usize, Matrix3<f64>)> {
        let g = self.schedule.g(t);
        let mut blocks = Vec::with_capacity(2 * self.instance.bonds.len());
        for &(i, j, jij) in &self.instance.bonds {
            let mut m = Matrix3::zeros();
            m[(2, 2)] = g * jij;
            blocks.push((i, j, m));
            blocks.push((j, i, m));
        }
        blocks
    }

    fn explicit_time_derivative_into(&self, state: &SpinConfig, t: f64, out: &mut [Vector3<f64>]) {
        let gd = self.schedule.g_dot(t);
        for (i, o) in out.iter_mut().enumerate() {
            *o = Vector3::new(-gd * self.fields.h_x[i], 0.0, gd * self.local_z(state, i));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::fd;
    use crate::spin::stationarity_residual;
    use approx::assert_relative_eq;

    /// A deterministic off-axis state: unit spins fanned over the sphere.
    fn fanned_state(n: usize) -> SpinConfig {
        let spins = (0..n)
            .map(|i| {
                let theta = 0.4 + 0.3 * i as f64;
                let phi = 0.9 * i as f64 - 0.2;
                Vector3::new(
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                )
            })
            .collect();
        SpinConfig::new(spins).unwrap()
    }

    /// Checks the analytic field, Jacobian apply, and explicit time
    /// derivative against the finite-difference oracles in `spin::fd`.
    fn check_against_fd<H: Hamiltonian>(ham: &H, t: f64) {
        let n = ham.spin_count();
        let state = fanned_state(n);

        let analytic = ham.eff_field(&state, t);
        let fd_field = fd::fd_eff_field(ham, &state, t);
        for i in 0..n {
            assert_relative_eq!(analytic.h[i], fd_field[i], epsilon = 1e-7);
        }

        let exact_dt = ham.explicit_time_derivative(&state, t);
        let fd_dt = fd::fd_explicit_time_derivative(ham, &state, t);
        for i in 0..n {
            assert_relative_eq!(exact_dt.h[i], fd_dt[i], epsilon = 1e-6);
        }

        let blocks = fd::fd_field_jacobian(ham, &state, t);
        let dm: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::new(0.3 * (i as f64).cos(), -0.1, 0.2 * (i as f64).sin()))
            .collect();
        let mut applied = vec![Vector3::zeros(); n];
        ham.field_jacobian_apply(&state, t, &dm, &mut applied);
        for i in 0..n {
            let mut expected = Vector3::zeros();
            for (j, d) in dm.iter().enumerate() {
                let block = &blocks[i * n + j];
                for a in 0..3 {
                    for b in 0..3 {
                        expected[a] += block[(a, b)] * d[b];
                    }
                }
            }
            assert_relative_eq!(applied[i], expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn lmg_fields_match_finite_differences() {
        let ham = lmg_hamiltonian(LmgParams {
            coupling: 1.3,
            h0: 0.8,
            tau: 1.0,
            n: 5,
        })
        .unwrap();
        for t in [0.1, 0.37, 0.82] {
            check_against_fd(&ham, t);
        }
    }

    #[test]
    fn annealing_fields_match_finite_differences() {
        let inst = rfim_instance(2, 5);
        let tf = transverse_fields(4, FieldKind::RandomIid, 1);
        let ham = annealing_hamiltonian(inst, tf, Schedule::new(1.0).unwrap()).unwrap();
        for t in [0.12, 0.5, 0.93] {
            check_against_fd(&ham, t);
        }
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(schedule_g(0.0).unwrap(), 0.0);
        assert_eq!(schedule_g(1.0).unwrap(), 1.0);
        assert_relative_eq!(schedule_g(0.5).unwrap(), 0.5);
        assert!(schedule_g(1.5).is_err());
        let sched = Schedule::new(2.0).unwrap();
        assert_relative_eq!(sched.g_dot(0.0), 0.0);
        assert_relative_eq!(sched.g_dot(2.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lmg_sweep_endpoints() {
        let ham = lmg_hamiltonian(LmgParams {
            coupling: 1.0,
            h0: 0.75,
            tau: 1.0,
            n: 4,
        })
        .unwrap();
        let (hx, hz) = ham.sweep_fields(0.0);
        assert_relative_eq!(hx, 0.0);
        assert_relative_eq!(hz, 0.5);
        let (hx, hz) = ham.sweep_fields(1.0);
        assert_relative_eq!(hx, 0.0, epsilon = 1e-15);
        assert_relative_eq!(hz, -0.5);
        let (hx, hz) = ham.sweep_fields(0.5);
        assert_relative_eq!(hx, 0.75);
        assert_relative_eq!(hz, 0.0, epsilon = 1e-16);
    }

    #[test]
    fn lmg_field_and_energy_match_hand_values() {
        let ham = lmg_hamiltonian(LmgParams {
            coupling: 1.0,
            h0: 0.75,
            tau: 1.0,
            n: 5,
        })
        .unwrap();
        // All spins up at mid-sweep: h_i = (h^x, 0, J + h^z).
        let up = SpinConfig::uniform(5, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let t = 0.3;
        let (hx, hz) = ham.sweep_fields(t);
        let f = ham.eff_field(&up, t);
        for h in &f.h {
            assert_relative_eq!(h.x, hx);
            assert_relative_eq!(h.z, 1.0 + hz);
        }
        // All spins down with h^z = -J/2, h^x = 0 (t = tau): E = -N J.
        let down = SpinConfig::uniform(5, Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert_relative_eq!(ham.energy(&down, 1.0), -5.0, epsilon = 1e-12);
    }

    #[test]
    fn phase_classification_examples() {
        assert_eq!(lmg_phase_classify(1.0, 0.0, 1.0), PhaseRegion::CriticalPoint);
        assert_eq!(
            lmg_phase_classify(2.0, 0.0, 1.0),
            PhaseRegion::UniqueStationary
        );
        assert_eq!(lmg_phase_classify(0.25, 0.01, 1.0), PhaseRegion::Bistable);
        assert_eq!(
            lmg_phase_classify(0.25, 0.0, 1.0),
            PhaseRegion::FirstOrderLine
        );
        // A point constructed to sit on the spinodal.
        let hz: f64 = 0.2;
        let hx = (1.0 - hz.powf(2.0 / 3.0)).powf(1.5);
        assert_eq!(lmg_phase_classify(hx, hz, 1.0), PhaseRegion::SpinodalLine);
    }

    #[test]
    fn rfim_generation() {
        let inst = rfim_instance(1, 42);
        assert_eq!(inst.bonds.len(), 0);
        assert_eq!(inst.h_z.len(), 1);
        assert_relative_eq!(inst.h_z[0].abs(), 0.3);

        let inst = rfim_instance(2, 42);
        assert_eq!(inst.bonds.len(), 4);
        inst.validate().unwrap();

        for l in [3usize, 5, 8] {
            let inst = rfim_instance(l, 7);
            assert_eq!(inst.bonds.len(), 2 * l * (l - 1));
            assert!(inst.h_z.iter().all(|h| h.abs() == 0.3));
        }

        assert_eq!(rfim_instance(4, 9), rfim_instance(4, 9));
        assert_ne!(rfim_instance(4, 9), rfim_instance(4, 10));
    }

    #[test]
    fn transverse_field_generation() {
        let tf = transverse_fields(5, FieldKind::Uniform, 0);
        assert_eq!(tf.h_x, vec![1.0; 5]);

        let tf = transverse_fields(64, FieldKind::RandomIid, 3);
        assert!(tf.h_x.iter().all(|&h| (1.0..2.0).contains(&h)));
        assert_eq!(tf.h_x, transverse_fields(64, FieldKind::RandomIid, 3).h_x);
        assert_ne!(tf.h_x, transverse_fields(64, FieldKind::RandomIid, 4).h_x);
    }

    #[test]
    fn annealing_hamiltonian_interpolates() {
        let inst = rfim_instance(2, 5);
        let tf = transverse_fields(4, FieldKind::RandomIid, 1);
        let sched = Schedule::new(1.0).unwrap();
        let ham = annealing_hamiltonian(inst.clone(), tf.clone(), sched).unwrap();

        let state = SpinConfig::uniform(4, Vector3::new(1.0, 0.0, 0.0)).unwrap();
        // t = 0: pure transverse part.
        let e0 = ham.energy(&state, 0.0);
        assert_relative_eq!(e0, -tf.h_x.iter().sum::<f64>());
        // Stationary start: residual is exactly zero.
        assert_eq!(
            stationarity_residual(&state, &ham.eff_field(&state, 0.0)),
            0.0
        );

        // t = tau with rounded spins: the Ising energy.
        let up = SpinConfig::uniform(4, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let spins = vec![1i8; 4];
        assert_relative_eq!(ham.energy(&up, 1.0), inst.energy_of_spins(&spins));

        // Midpoint: the mean of the two ends.
        let mid = ham.energy(&state, 0.5);
        let et = ham.target_energy(&state);
        assert_relative_eq!(mid, (et + e0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn annealing_rejects_dimension_mismatch() {
        let inst = rfim_instance(2, 5);
        let tf = transverse_fields(9, FieldKind::Uniform, 0);
        assert!(matches!(
            annealing_hamiltonian(inst, tf, Schedule::new(1.0).unwrap()),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn target_energy_matches_ising_energy_at_poles() {
        let inst = rfim_instance(3, 11);
        let tf = transverse_fields(9, FieldKind::Uniform, 0);
        let ham = annealing_hamiltonian(inst.clone(), tf, Schedule::new(1.0).unwrap()).unwrap();
        let mut v = Vec::new();
        let mut spins = Vec::new();
        for i in 0..9 {
            let s = if i % 3 == 0 { -1.0 } else { 1.0 };
            v.push(Vector3::new(0.0, 0.0, s));
            spins.push(if i % 3 == 0 { -1i8 } else { 1i8 });
        }
        let state = SpinConfig::new(v).unwrap();
        assert_relative_eq!(
            ham.target_energy(&state),
            inst.energy_of_spins(&spins),
            epsilon = 1e-12
        );
    }
}
