//! Exact recursive filtering for small linear-Gaussian systems.
//!
//! This module exists to check the particle machinery: on a linear-Gaussian
//! model the Kalman recursion is the exact Bayesian filter and the predictive
//! measurement density is available in closed form. Dimensions are limited to
//! `N <= 4` states and `M <= 2` observations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::ssm::{SensorModel, StateVector, TransitionModel};

pub const MAX_STATE_DIM: usize = 4;
pub const MAX_OBS_DIM: usize = 2;

const PSD_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "belief covariance",
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        check_psd("belief covariance", &cov)?;
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
        )
    }
}

/// `x' = A x + w`, `w ~ N(0, Q)`; `y = H x + v`, `v ~ N(0, R)`.
#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    initial: GaussianBelief,
    q_sqrt: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(
        a: DMatrix<f64>,
        q: DMatrix<f64>,
        h: DMatrix<f64>,
        r: DMatrix<f64>,
        initial: GaussianBelief,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = h.nrows();
        if n == 0 || n > MAX_STATE_DIM || m == 0 || m > MAX_OBS_DIM {
            return Err(Error::InvalidConfig(format!(
                "oracle supports 1..={MAX_STATE_DIM} states and 1..={MAX_OBS_DIM} observations, got {n} and {m}"
            )));
        }
        let dims = [
            ("A", a.ncols(), n),
            ("Q rows", q.nrows(), n),
            ("Q cols", q.ncols(), n),
            ("H cols", h.ncols(), n),
            ("R rows", r.nrows(), m),
            ("R cols", r.ncols(), m),
            ("initial mean", initial.mean.len(), n),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(Error::InvalidConfig(format!(
                    "{what}: expected dimension {expected}, got {got}"
                )));
            }
        }
        check_psd("Q", &q)?;
        check_psd("R", &r)?;
        let q_sqrt = psd_sqrt(&q);
        Ok(Self {
            a,
            q,
            h,
            r,
            initial,
            q_sqrt,
        })
    }

    /// One-dimensional model with scalar coefficients.
    pub fn scalar(a: f64, q: f64, h: f64, r: f64, mean0: f64, var0: f64) -> Result<Self> {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self::new(m(a), m(q), m(h), m(r), GaussianBelief::scalar(mean0, var0)?)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn initial(&self) -> &GaussianBelief {
        &self.initial
    }

    /// Observation density `N(y; Hx, R)` as a [`SensorModel`]. Needs `R` positive definite.
    pub fn sensor(&self) -> Result<LinearSensor> {
        LinearSensor::new(self.h.clone(), self.r.clone())
    }

    /// Draw `x ~ N(mean, cov)` using the supplied stream.
    pub fn sample_gaussian(belief: &GaussianBelief, stream: &mut RandomStream) -> StateVector {
        let root = psd_sqrt(&belief.cov);
        let z = DVector::from_iterator(
            belief.mean.len(),
            (0..belief.mean.len()).map(|_| StandardNormal.sample(stream)),
        );
        let x = &belief.mean + root * z;
        StateVector::new(x.iter().copied().collect())
    }
}

impl TransitionModel for LinearGaussianModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn sample(&self, _time: u64, state: &StateVector, stream: &mut RandomStream) -> StateVector {
        let n = self.a.nrows();
        let x = DVector::from_column_slice(state.as_slice());
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(stream)));
        let next = &self.a * x + &self.q_sqrt * z;
        StateVector::new(next.iter().copied().collect())
    }
}

/// Gaussian observation density `N(y; Hx, R)`.
#[derive(Clone, Debug)]
pub struct LinearSensor {
    h: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    log_norm: f64,
}

impl LinearSensor {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let m = h.nrows();
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::DimensionMismatch {
                what: "observation covariance",
                expected: m,
                got: r.nrows(),
            });
        }
        let det = r.determinant();
        if !(det > 0.0) {
            return Err(Error::Singular);
        }
        let r_inv = r.try_inverse().ok_or(Error::Singular)?;
        let log_norm = -0.5 * (m as f64 * (2.0 * PI).ln() + det.ln());
        Ok(Self { h, r_inv, log_norm })
    }

    /// `N(mean(state) = state[0], sigma)` on a scalar state.
    pub fn scalar(h: f64, sigma: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, h),
            DMatrix::from_element(1, 1, sigma * sigma),
        )
    }
}

impl SensorModel for LinearSensor {
    fn reading_dim(&self) -> usize {
        self.h.nrows()
    }

    fn density(&self, reading: &[f64], state: &StateVector) -> f64 {
        self.log_density(reading, state).exp()
    }

    fn log_density(&self, reading: &[f64], state: &StateVector) -> f64 {
        let x = DVector::from_column_slice(state.as_slice());
        let resid = DVector::from_column_slice(reading) - &self.h * x;
        let maha = (resid.transpose() * &self.r_inv * &resid)[(0, 0)];
        self.log_norm - 0.5 * maha
    }
}

/// Time update: `N(A mu, A Sigma A' + Q)`.
pub fn kalman_predict(belief: &GaussianBelief, model: &LinearGaussianModel) -> GaussianBelief {
    let mean = &model.a * &belief.mean;
    let cov = symmetrize(&model.a * &belief.cov * model.a.transpose() + &model.q);
    GaussianBelief { mean, cov }
}

/// Measurement update of an already predicted belief (Joseph form).
pub fn kalman_correct(
    predicted: &GaussianBelief,
    model: &LinearGaussianModel,
    reading: &[f64],
) -> Result<GaussianBelief> {
    if reading.len() != model.obs_dim() {
        return Err(Error::DimensionMismatch {
            what: "kalman reading",
            expected: model.obs_dim(),
            got: reading.len(),
        });
    }
    let h = &model.h;
    let s = h * &predicted.cov * h.transpose() + &model.r;
    let s_inv = s.try_inverse().ok_or(Error::Singular)?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular);
    }
    let gain = &predicted.cov * h.transpose() * s_inv;
    let innovation = DVector::from_column_slice(reading) - h * &predicted.mean;
    let mean = &predicted.mean + &gain * innovation;
    let n = predicted.mean.len();
    let i_kh = DMatrix::identity(n, n) - &gain * h;
    let cov =
        symmetrize(&i_kh * &predicted.cov * i_kh.transpose() + &gain * &model.r * gain.transpose());
    Ok(GaussianBelief { mean, cov })
}

/// One predict-correct cycle of the exact filter.
pub fn kalman_step(
    belief: &GaussianBelief,
    model: &LinearGaussianModel,
    reading: &[f64],
) -> Result<GaussianBelief> {
    if belief.mean.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "belief",
            expected: model.state_dim(),
            got: belief.mean.len(),
        });
    }
    kalman_correct(&kalman_predict(belief, model), model, reading)
}

/// Exact predictive measurement density `N(y; H mu, H Sigma H' + R)` of a
/// *predicted* belief, evaluated at each query reading.
pub fn grid_predictive_density(
    predicted: &GaussianBelief,
    model: &LinearGaussianModel,
    queries: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let h = &model.h;
    let mean = h * &predicted.mean;
    let cov = h * &predicted.cov * h.transpose() + &model.r;
    let sensor = LinearSensor::new(DMatrix::identity(mean.len(), mean.len()), cov)?;
    let centre = StateVector::new(mean.iter().copied().collect());
    queries
        .iter()
        .map(|q| {
            if q.len() != mean.len() {
                return Err(Error::DimensionMismatch {
                    what: "query reading",
                    expected: mean.len(),
                    got: q.len(),
                });
            }
            Ok(sensor.density(q, &centre))
        })
        .collect()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(1.0);
    if asym > PSD_TOL * scale {
        return false;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .all(|&l| l >= -PSD_TOL * scale)
}

fn check_psd(what: &str, m: &DMatrix<f64>) -> Result<()> {
    if is_psd(m) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{what} must be symmetric positive semidefinite"
        )))
    }
}

/// Symmetric square root `V diag(sqrt(max(l, 0))) V'`.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use rand::Rng;

    fn identity_model(r: f64) -> LinearGaussianModel {
        LinearGaussianModel::scalar(1.0, 0.0, 1.0, r, 0.0, 1.0).unwrap()
    }

    #[test]
    fn uninformative_measurement_keeps_prior() {
        let model = identity_model(1e12);
        let prior = GaussianBelief::scalar(0.3, 1.0).unwrap();
        let post = kalman_step(&prior, &model, &[5.0]).unwrap();
        assert!((post.mean[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn perfect_measurement_pins_mean() {
        let model = identity_model(1e-12);
        let prior = GaussianBelief::scalar(0.3, 1.0).unwrap();
        let post = kalman_step(&prior, &model, &[5.0]).unwrap();
        assert!((post.mean[0] - 5.0).abs() < 1e-6);
    }

    /// Second, independently written scalar recursion.
    fn scalar_recursion(
        a: f64,
        q: f64,
        h: f64,
        r: f64,
        m0: f64,
        p0: f64,
        ys: &[f64],
    ) -> Vec<(f64, f64)> {
        let (mut m, mut p) = (m0, p0);
        let mut out = Vec::with_capacity(ys.len());
        for &y in ys {
            let mp = a * m;
            let pp = a * a * p + q;
            let k = pp * h / (h * h * pp + r);
            m = mp + k * (y - h * mp);
            p = (1.0 - k * h) * pp;
            out.push((m, p));
        }
        out
    }

    #[test]
    fn matches_hand_rolled_scalar_recursion() {
        let model = LinearGaussianModel::scalar(1.0, 0.04, 1.0, 1.0, 0.0, 1.0).unwrap();
        let mut s = RandomStream::open(3, Purpose::Custom(1), 0, 0);
        let ys: Vec<f64> = (0..50).map(|_| s.random_range(-2.0..2.0)).collect();
        let expected = scalar_recursion(1.0, 0.04, 1.0, 1.0, 0.0, 1.0, &ys);
        let mut b = model.initial().clone();
        for (y, (m, p)) in ys.iter().zip(expected) {
            b = kalman_step(&b, &model, &[*y]).unwrap();
            assert!((b.mean[0] - m).abs() < 1e-12);
            assert!((b.cov[(0, 0)] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn predictive_density_examples() {
        let model = LinearGaussianModel::scalar(1.0, 0.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        let pred = GaussianBelief::scalar(0.0, 1.0).unwrap();
        let d =
            grid_predictive_density(&pred, &model, &[vec![0.0], vec![10.0], vec![-10.0]]).unwrap();
        assert!((d[0] - 0.3989422804).abs() < 1e-10);
        assert!(d[1] < 1e-21 && d[2] < 1e-21);
    }

    #[test]
    fn covariance_stays_psd_through_random_steps() {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.0, 0.95, 0.2, 0.05, 0.0, 0.8]);
        let q = DMatrix::from_row_slice(3, 3, &[0.1, 0.02, 0.0, 0.02, 0.05, 0.0, 0.0, 0.0, 0.02]);
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]);
        let init = GaussianBelief::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let model = LinearGaussianModel::new(a, q, h, r, init.clone()).unwrap();
        let mut s = RandomStream::open(9, Purpose::Custom(2), 0, 0);
        let mut b = init;
        for _ in 0..10_000 {
            let y = [s.random_range(-3.0..3.0), s.random_range(-3.0..3.0)];
            b = kalman_step(&b, &model, &y).unwrap();
            assert!(is_psd(&b.cov));
            assert_eq!(b.cov, b.cov.transpose());
        }
    }

    #[test]
    fn rejects_oversized_and_non_psd_models() {
        let five = DMatrix::identity(5, 5);
        let h = DMatrix::identity(1, 5);
        let init = GaussianBelief::new(DVector::zeros(5), five.clone()).unwrap();
        assert!(LinearGaussianModel::new(
            five.clone(),
            five.clone(),
            h,
            DMatrix::identity(1, 1),
            init
        )
        .is_err());
        assert!(LinearGaussianModel::scalar(1.0, -1.0, 1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn singular_innovation_is_reported() {
        let model = LinearGaussianModel::scalar(1.0, 0.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let b = model.initial().clone();
        assert_eq!(kalman_step(&b, &model, &[1.0]), Err(Error::Singular));
    }

    #[test]
    fn linear_sensor_is_standard_normal() {
        let s = LinearSensor::scalar(1.0, 1.0).unwrap();
        let x = StateVector::new(vec![0.0]);
        assert!((s.density(&[0.0], &x) - 0.3989422804).abs() < 1e-10);
        assert!((s.density(&[1.0], &x) - 0.2419707245).abs() < 1e-10);
        assert!((s.density(&[-1.0], &x) - 0.2419707245).abs() < 1e-10);
    }
}
