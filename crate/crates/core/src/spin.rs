//! Spin state, Hamiltonian interface, and canonical-coordinate diagnostics.

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

/// Tolerance on | |m_i| - 1 | at construction and after renormalization.
pub const NORM_TOL: f64 = 1e-12;

/// A spin is gimbal-degenerate when |m^z| exceeds this bound; the canonical
/// chart (q, p) is singular there.
pub const GIMBAL_TOL: f64 = 1e-9;

/// Central finite-difference step used by the Hessian evaluator.
pub const HESSIAN_FD_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum SpinError {
    #[error("spin {index} has |m| = {norm}, expected unit norm")]
    NotUnitNorm { index: usize, norm: f64 },
    #[error("spin configuration must contain at least one spin")]
    Empty,
    #[error("spin {index} has |m^z| > 1 - 1e-9; canonical chart is singular")]
    GimbalDegenerate { index: usize },
    #[error("length mismatch: {left} spins vs {right} fields")]
    LengthMismatch { left: usize, right: usize },
}

/// Configuration of N classical spins, each a unit 3-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfig {
    m: Vec<Vector3<f64>>,
}

impl SpinConfig {
    pub fn new(m: Vec<Vector3<f64>>) -> Result<Self, SpinError> {
        if m.is_empty() {
            return Err(SpinError::Empty);
        }
        for (index, v) in m.iter().enumerate() {
            let norm = v.norm();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(SpinError::NotUnitNorm { index, norm });
            }
        }
        Ok(Self { m })
    }

    /// N copies of `v`, normalized.
    pub fn uniform(n: usize, v: Vector3<f64>) -> Result<Self, SpinError> {
        if n == 0 {
            return Err(SpinError::Empty);
        }
        let norm = v.norm();
        if norm == 0.0 {
            return Err(SpinError::NotUnitNorm { index: 0, norm });
        }
        Ok(Self {
            m: vec![v / norm; n],
        })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn spins(&self) -> &[Vector3<f64>] {
        &self.m
    }

    pub fn spins_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.m
    }

    /// Rescale every spin back to unit length.
    pub fn renormalize(&mut self) {
        for v in &mut self.m {
            let n = v.norm();
            if n > 0.0 {
                *v /= n;
            }
        }
    }

    /// Mean z-magnetization, sum_i m_i^z / N.
    pub fn mean_mz(&self) -> f64 {
        self.m.iter().map(|v| v.z).sum::<f64>() / self.m.len() as f64
    }
}

/// One 3-vector of field per spin, in energy units (J = 1, hbar = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub h: Vec<Vector3<f64>>,
}

impl FieldSet {
    pub fn zeros(n: usize) -> Self {
        Self {
            h: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Time-dependent classical spin Hamiltonian H_t({m_i}).
///
/// Implementors provide the energy, the effective fields h_i = -dH/dm_i,
/// the field Jacobian dh_i/dm_j as a sparse linear map, and the explicit
/// time derivative of the fields at frozen spins. The Jacobian and the
/// explicit derivative together give the total hdot needed by the
/// counter-diabatic solve: hdot_i = d_t h_i + sum_j (dh_i/dm_j) mdot_j.
pub trait Hamiltonian: Sync {
    fn spin_count(&self) -> usize;

    fn energy(&self, state: &SpinConfig, t: f64) -> f64;

    /// Writes h_i = -dH_t/dm_i into `out`.
    fn eff_field_into(&self, state: &SpinConfig, t: f64, out: &mut [Vector3<f64>]);

    /// Applies the field Jacobian: out_i = sum_j (dh_i/dm_j) dm_j.
    fn field_jacobian_apply(
        &self,
        state: &SpinConfig,
        t: f64,
        dm: &[Vector3<f64>],
        out: &mut [Vector3<f64>],
    );

    /// Sparse triplets (i, j, dh_i/dm_j) of the field Jacobian.
    fn field_jacobian_blocks(&self, state: &SpinConfig, t: f64)
        -> Vec<(usize, usize, Matrix3<f64>)>;

    /// Writes d h_i / dt at fixed {m_j} into `out`.
    fn explicit_time_derivative_into(&self, state: &SpinConfig, t: f64, out: &mut [Vector3<f64>]);

    fn eff_field(&self, state: &SpinConfig, t: f64) -> FieldSet {
        let mut f = FieldSet::zeros(state.len());
        self.eff_field_into(state, t, &mut f.h);
        f
    }

    fn explicit_time_derivative(&self, state: &SpinConfig, t: f64) -> FieldSet {
        let mut f = FieldSet::zeros(state.len());
        self.explicit_time_derivative_into(state, t, &mut f.h);
        f
    }
}

/// Effective field h_i(t) = -dH_t/dm_i for every spin.
pub fn effective_field<H: Hamiltonian + ?Sized>(h: &H, state: &SpinConfig, t: f64) -> FieldSet {
    h.eff_field(state, t)
}

/// max_i |m_i x h_i|; zero iff the configuration is stationary.
pub fn stationarity_residual(state: &SpinConfig, fields: &FieldSet) -> f64 {
    assert_eq!(state.len(), fields.len(), "state/field length mismatch");
    state
        .spins()
        .iter()
        .zip(&fields.h)
        .map(|(m, h)| m.cross(h).norm())
        .fold(0.0, f64::max)
}

/// Canonical coordinates (q_i, p_i) with m^z = 2q, m^x = sqrt(1-(2q)^2) cos p,
/// m^y = -sqrt(1-(2q)^2) sin p. At the poles p is undefined; we set p = 0 and
/// flag the spin as degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub degenerate: Vec<bool>,
}

pub fn to_canonical(state: &SpinConfig) -> CanonicalPoint {
    let n = state.len();
    let mut q = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut degenerate = Vec::with_capacity(n);
    for m in state.spins() {
        q.push(m.z / 2.0);
        let gimbal = m.z.abs() >= 1.0 - GIMBAL_TOL;
        degenerate.push(gimbal);
        if gimbal {
            p.push(0.0);
        } else {
            let mut angle = (-m.y).atan2(m.x);
            if angle >= std::f64::consts::PI {
                angle = -std::f64::consts::PI;
            }
            p.push(angle);
        }
    }
    CanonicalPoint { q, p, degenerate }
}

pub fn from_canonical(point: &CanonicalPoint) -> Result<SpinConfig, SpinError> {
    let m = point
        .q
        .iter()
        .zip(&point.p)
        .map(|(&q, &p)| {
            let mz = 2.0 * q;
            let r = (1.0 - mz * mz).max(0.0).sqrt();
            Vector3::new(r * p.cos(), -r * p.sin(), mz)
        })
        .collect::<Vec<_>>();
    let mut cfg = SpinConfig { m };
    cfg.renormalize();
    if cfg.is_empty() {
        return Err(SpinError::Empty);
    }
    Ok(cfg)
}

/// Energy as a function of the canonical point z = (q_1..q_N, p_1..p_N).
fn energy_at_z<H: Hamiltonian + ?Sized>(h: &H, z: &[f64], n: usize, t: f64) -> f64 {
    let m = (0..n)
        .map(|i| {
            let mz = (2.0 * z[i]).clamp(-1.0, 1.0);
            let r = (1.0 - mz * mz).max(0.0).sqrt();
            let p = z[n + i];
            Vector3::new(r * p.cos(), -r * p.sin(), mz)
        })
        .collect();
    h.energy(&SpinConfig { m }, t)
}

/// Determinant of the 2N x 2N Hessian d^2 H / dz_i dz_j at `state`, computed
/// by central finite differences in the canonical chart. Errors if any spin
/// sits at a pole of the chart.
pub fn hessian_determinant<H: Hamiltonian + ?Sized>(
    ham: &H,
    state: &SpinConfig,
    t: f64,
) -> Result<f64, SpinError> {
    let n = state.len();
    for (index, m) in state.spins().iter().enumerate() {
        if m.z.abs() > 1.0 - GIMBAL_TOL {
            return Err(SpinError::GimbalDegenerate { index });
        }
    }
    let point = to_canonical(state);
    let mut z0: Vec<f64> = point.q.clone();
    z0.extend_from_slice(&point.p);
    let dim = 2 * n;
    let eps = HESSIAN_FD_STEP;
    let mut hess = DMatrix::zeros(dim, dim);
    let e0 = energy_at_z(ham, &z0, n, t);
    let mut z = z0.clone();
    for a in 0..dim {
        // diagonal
        z[a] = z0[a] + eps;
        let ep = energy_at_z(ham, &z, n, t);
        z[a] = z0[a] - eps;
        let em = energy_at_z(ham, &z, n, t);
        z[a] = z0[a];
        hess[(a, a)] = (ep - 2.0 * e0 + em) / (eps * eps);
        for b in (a + 1)..dim {
            z[a] = z0[a] + eps;
            z[b] = z0[b] + eps;
            let epp = energy_at_z(ham, &z, n, t);
            z[b] = z0[b] - eps;
            let epm = energy_at_z(ham, &z, n, t);
            z[a] = z0[a] - eps;
            let emm = energy_at_z(ham, &z, n, t);
            z[b] = z0[b] + eps;
            let emp = energy_at_z(ham, &z, n, t);
            z[a] = z0[a];
            z[b] = z0[b];
            let v = (epp - epm - emp + emm) / (4.0 * eps * eps);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    Ok(hess.determinant())
}

/// Iteratively aligns every spin with its effective field. Converges to a
/// nearby stationary configuration when one exists; used to prepare initial
/// states for stationary tracking.
pub fn relax_to_stationary<H: Hamiltonian + ?Sized>(
    ham: &H,
    state: &mut SpinConfig,
    t: f64,
    tol: f64,
    max_iter: usize,
) -> f64 {
    let n = state.len();
    let mut h = vec![Vector3::zeros(); n];
    let mut residual: f64;
    for _ in 0..max_iter {
        ham.eff_field_into(state, t, &mut h);
        residual = 0.0;
        for (m, hi) in state.spins_mut().iter_mut().zip(&h) {
            let norm = hi.norm();
            if norm > 0.0 {
                residual = residual.max(m.cross(hi).norm());
                *m = hi / norm;
            }
        }
        if residual <= tol {
            break;
        }
    }
    ham.eff_field_into(state, t, &mut h);
    state
        .spins()
        .iter()
        .zip(&h)
        .map(|(m, hi)| m.cross(hi).norm())
        .fold(0.0, f64::max)
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    struct TransverseOnly {
        hx: f64,
        n: usize,
    }

    impl Hamiltonian for TransverseOnly {
        fn spin_count(&self) -> usize {
            self.n
        }
        fn energy(&self, state: &SpinConfig, _t: f64) -> f64 {
            -self.hx * state.spins().iter().map(|m| m.x).sum::<f64>()
        }
        fn eff_field_into(&self, _state: &SpinConfig, _t: f64, out: &mut [Vector3<f64>]) {
            for o in out.iter_mut() {
                *o = Vector3::new(self.hx, 0.0, 0.0);
            }
        }
        fn field_jacobian_apply(
            &self,
            _state: &SpinConfig,
            _t: f64,
            _dm: &[Vector3<f64>],
            out: &mut [Vector3<f64>],
        ) {
            for o in out.iter_mut() {
                *o = Vector3::zeros();
            }
        }
        fn field_jacobian_blocks(
            &self,
            _state: &SpinConfig,
            _t: f64,
        ) -> Vec<(usize, usize, Matrix3<f64>)> {
            Vec::new()
        }
        fn explicit_time_derivative_into(
            &self,
            _state: &SpinConfig,
            _t: f64,
            out: &mut [Vector3<f64>],
        ) {
            for o in out.iter_mut() {
                *o = Vector3::zeros();
            }
        }
    }

    #[test]
    fn transverse_field_is_constant() {
        let ham = TransverseOnly { hx: 1.5, n: 3 };
        let state = SpinConfig::uniform(3, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let f = ham.eff_field(&state, 0.0);
        for h in &f.h {
            assert_eq!(*h, Vector3::new(1.5, 0.0, 0.0));
        }
    }

    #[test]
    fn stationarity_examples() {
        let state = SpinConfig::uniform(1, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let parallel = FieldSet {
            h: vec![Vector3::new(0.0, 0.0, 2.0)],
        };
        assert_eq!(stationarity_residual(&state, &parallel), 0.0);

        let ortho = FieldSet {
            h: vec![Vector3::new(1.0, 0.0, 0.0)],
        };
        assert_relative_eq!(stationarity_residual(&state, &ortho), 1.0);

        let tilted = FieldSet {
            h: vec![Vector3::new(0.1f64.sin(), 0.0, 0.1f64.cos())],
        };
        assert_relative_eq!(
            stationarity_residual(&state, &tilted),
            0.1f64.sin(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn canonical_examples() {
        let m = SpinConfig::uniform(1, Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let c = to_canonical(&m);
        assert_eq!(c.q[0], 0.0);
        assert_eq!(c.p[0], 0.0);
        assert!(!c.degenerate[0]);

        let m = SpinConfig::uniform(1, Vector3::new(0.0, -1.0, 0.0)).unwrap();
        let c = to_canonical(&m);
        assert_eq!(c.q[0], 0.0);
        assert_relative_eq!(c.p[0], PI / 2.0);

        let m = SpinConfig::uniform(1, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let c = to_canonical(&m);
        assert_eq!(c.q[0], 0.5);
        assert_eq!(c.p[0], 0.0);
        assert!(c.degenerate[0]);
    }

    #[test]
    fn canonical_round_trip() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.99..0.99),
            );
            if v.norm() < 1e-3 {
                continue;
            }
            let state = SpinConfig::uniform(1, v).unwrap();
            if state.spins()[0].z.abs() >= 1.0 - 1e-9 {
                continue;
            }
            let back = from_canonical(&to_canonical(&state)).unwrap();
            assert!((back.spins()[0] - state.spins()[0]).norm() < 1e-12);
        }
    }

    #[test]
    fn single_spin_hessian_matches_symbolic() {
        // H = -hx m^x has det Hess = 4 hx^2 at the stationary point m = +x.
        let hx = 0.7;
        let ham = TransverseOnly { hx, n: 1 };
        let state = SpinConfig::uniform(1, Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let det = hessian_determinant(&ham, &state, 0.0).unwrap();
        assert_relative_eq!(det, 4.0 * hx * hx, max_relative = 1e-6);
    }

    #[test]
    fn hessian_rejects_gimbal_degenerate_states() {
        let ham = TransverseOnly { hx: 1.0, n: 1 };
        let state = SpinConfig::uniform(1, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(matches!(
            hessian_determinant(&ham, &state, 0.0),
            Err(SpinError::GimbalDegenerate { .. })
        ));
    }

    #[test]
    fn construction_rejects_bad_norms() {
        assert!(SpinConfig::new(vec![Vector3::new(0.0, 0.0, 1.1)]).is_err());
        assert!(SpinConfig::new(Vec::new()).is_err());
    }
}
