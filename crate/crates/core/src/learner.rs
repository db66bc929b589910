//! Online acceleration-disturbance model.
//!
//! Inputs are projected onto `N` random frequencies, `phi = [cos(W x); sin(W x)]`,
//! and the output weights are the ridge-regression solution over every pair
//! seen so far. The information matrix `lambda I + sum phi phi^T / N` is kept
//! as a lower Cholesky factor updated by one rank-one step per sample, so an
//! update costs `O(N^2)` and the weights always equal the batch solution.
//!
//! Derivatives with respect to the input are analytic, and the time
//! derivatives of the prediction follow from the chain rule given the input
//! rates.

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::fbl::{gravity, DisturbanceTriple};
use crate::geometry::Vec3;
use nalgebra::{DMatrix, DVector, Matrix3xX};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Number of random frequencies `N`; the feature vector has `2N` entries.
    pub n_freq: usize,
    /// Per-input length scales; their count is the input dimension.
    pub length_scales: Vec<f64>,
    /// Ridge regularizer.
    pub lambda: f64,
    pub seed: u64,
    /// Pairs whose target norm exceeds this are skipped (m/s^2).
    pub outlier_threshold: f64,
}

impl FeatureConfig {
    pub fn new(n_freq: usize, length_scales: Vec<f64>, seed: u64) -> Self {
        Self {
            n_freq,
            length_scales,
            lambda: 1e-3,
            seed,
            outlier_threshold: 30.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_freq == 0 {
            return Err(Error::InvalidParameter("n_freq must be at least 1".into()));
        }
        if self.length_scales.is_empty() || self.length_scales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidParameter(
                "length scales must be non-empty and positive".into(),
            ));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter("lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Frequency matrix: i.i.d. standard normals scaled column-wise by the
/// inverse length scales. Deterministic in the seed.
pub fn make_features(cfg: &FeatureConfig) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.input_dim();
    let mut omega = DMatrix::zeros(cfg.n_freq, d);
    for n in 0..cfg.n_freq {
        for i in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            omega[(n, i)] = g / cfg.length_scales[i];
        }
    }
    omega
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: DVector<f64>,
    pub target: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Accepted,
    SkippedOutlier,
}

#[derive(Debug, Clone)]
pub struct DisturbanceModel {
    cfg: FeatureConfig,
    omega: DMatrix<f64>,
    /// Lower factor of the information matrix.
    factor: DMatrix<f64>,
    /// `sum phi y^T / sqrt(N)`.
    moments: DMatrix<f64>,
    weights: DMatrix<f64>,
    samples: usize,
    skipped: usize,
}

impl DisturbanceModel {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let omega = make_features(&cfg);
        let m = 2 * cfg.n_freq;
        Ok(Self {
            factor: DMatrix::identity(m, m) * cfg.lambda.sqrt(),
            moments: DMatrix::zeros(m, 3),
            weights: DMatrix::zeros(m, 3),
            omega,
            cfg,
            samples: 0,
            skipped: 0,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// `2N x 3` output weights.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn input_dim(&self) -> usize {
        self.omega.ncols()
    }

    pub fn n_freq(&self) -> usize {
        self.omega.nrows()
    }

    fn check_dim(&self, xi: &DVector<f64>) -> Result<()> {
        if xi.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: xi.len(),
            });
        }
        Ok(())
    }

    /// `[cos(W xi); sin(W xi)]`, without the `1/sqrt(N)` scale.
    pub fn phi(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(xi)?;
        let proj = &self.omega * xi;
        let n = self.n_freq();
        let mut out = DVector::zeros(2 * n);
        for (k, w) in proj.iter().enumerate() {
            let (s, c) = w.sin_cos();
            out[k] = c;
            out[n + k] = s;
        }
        Ok(out)
    }

    pub fn update(&mut self, pair: &TrainingPair) -> Result<UpdateOutcome> {
        self.check_dim(&pair.input)?;
        if !pair.input.iter().all(|x| x.is_finite()) || !pair.target.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidPair("non-finite entries".into()));
        }
        if pair.target.norm() > self.cfg.outlier_threshold {
            self.skipped += 1;
            log::debug!("skipping outlier pair with |y| = {:.2}", pair.target.norm());
            return Ok(UpdateOutcome::SkippedOutlier);
        }
        let scale = 1.0 / (self.n_freq() as f64).sqrt();
        let phi = self.phi(&pair.input)? * scale;
        cholesky_rank_one_update(&mut self.factor, phi.clone());
        self.moments += &phi * pair.target.transpose();
        self.resolve();
        self.samples += 1;
        if self.samples.is_multiple_of(10_000) {
            let cond = self.condition_estimate();
            log::info!("learner: {} samples, condition estimate {cond:.3e}", self.samples);
        }
        Ok(UpdateOutcome::Accepted)
    }

    fn resolve(&mut self) {
        let y = self
            .factor
            .solve_lower_triangular(&self.moments)
            .expect("factor diagonal is positive");
        self.weights = self
            .factor
            .tr_solve_lower_triangular(&y)
            .expect("factor diagonal is positive");
    }

    /// Squared ratio of the extreme factor diagonal entries; a cheap lower
    /// bound on the information-matrix condition number.
    pub fn condition_estimate(&self) -> f64 {
        let d = self.factor.diagonal();
        let (lo, hi) = d
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        (hi / lo).powi(2)
    }

    /// Mean prediction `W^T phi / sqrt(N)`.
    pub fn predict(&self, xi: &DVector<f64>) -> Result<Vec3> {
        let phi = self.phi(xi)?;
        let scale = 1.0 / (self.n_freq() as f64).sqrt();
        Ok(Vec3::from_iterator(
            (self.weights.transpose() * phi).iter().map(|x| x * scale),
        ))
    }

    /// Per-frequency coefficients `(c_k, s_k)` such that the prediction's
    /// derivative along the k-th frequency uses `-W_cos sin + W_sin cos` and
    /// its second derivative `-W_cos cos - W_sin sin`.
    fn harmonic_terms(&self, xi: &DVector<f64>) -> Result<(Matrix3xX<f64>, Matrix3xX<f64>)> {
        self.check_dim(xi)?;
        let n = self.n_freq();
        let scale = 1.0 / (n as f64).sqrt();
        let proj = &self.omega * xi;
        let mut first = Matrix3xX::zeros(n);
        let mut second = Matrix3xX::zeros(n);
        for k in 0..n {
            let (s, c) = proj[k].sin_cos();
            for out in 0..3 {
                let wc = self.weights[(k, out)];
                let ws = self.weights[(n + k, out)];
                first[(out, k)] = scale * (-wc * s + ws * c);
                second[(out, k)] = scale * (-wc * c - ws * s);
            }
        }
        Ok((first, second))
    }

    /// `3 x d` Jacobian of the prediction with respect to the input.
    pub fn predict_jacobian(&self, xi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (first, _) = self.harmonic_terms(xi)?;
        let j = first * &self.omega;
        Ok(DMatrix::from_iterator(3, self.input_dim(), j.iter().copied()))
    }

    /// Hessian of each output, `[H_x, H_y, H_z]`, each `d x d` and symmetric.
    pub fn predict_hessian(&self, xi: &DVector<f64>) -> Result<[DMatrix<f64>; 3]> {
        let (_, second) = self.harmonic_terms(xi)?;
        let d = self.input_dim();
        let mut out = [DMatrix::zeros(d, d), DMatrix::zeros(d, d), DMatrix::zeros(d, d)];
        for (o, h) in out.iter_mut().enumerate() {
            for k in 0..self.n_freq() {
                let c = second[(o, k)];
                if c == 0.0 {
                    continue;
                }
                let w = self.omega.row(k);
                for i in 0..d {
                    for j in i..d {
                        let v = c * w[i] * w[j];
                        h[(i, j)] += v;
                        if i != j {
                            h[(j, i)] += v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Prediction and its first two time derivatives along an input path
    /// with rate `xi_dot` and acceleration `xi_ddot`.
    pub fn disturbance_triple(
        &self,
        xi: &DVector<f64>,
        xi_dot: &DVector<f64>,
        xi_ddot: &DVector<f64>,
    ) -> Result<DisturbanceTriple> {
        self.check_dim(xi_dot)?;
        self.check_dim(xi_ddot)?;
        let fe = self.predict(xi)?;
        let (first, second) = self.harmonic_terms(xi)?;
        let rate = &self.omega * xi_dot;
        let accel = &self.omega * xi_ddot;
        let rate_sq = rate.component_mul(&rate);
        let fe_dot = &first * &rate;
        let fe_ddot = &second * rate_sq + &first * accel;
        Ok(DisturbanceTriple {
            fe,
            fe_dot: Vec3::new(fe_dot[0], fe_dot[1], fe_dot[2]),
            fe_ddot: Vec3::new(fe_ddot[0], fe_ddot[1], fe_ddot[2]),
        })
    }

    /// Serializes frequencies, factor and moments as keyed CSV records.
    pub fn export(&self) -> String {
        fn row(out: &mut String, key: &str, values: impl Iterator<Item = f64>) {
            out.push_str(key);
            for v in values {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        let mut out = String::new();
        let _ = writeln!(out, "issgpr-model,1");
        let _ = writeln!(out, "n_freq,{}", self.n_freq());
        let _ = writeln!(out, "input_dim,{}", self.input_dim());
        let _ = writeln!(out, "lambda,{:?}", self.cfg.lambda);
        let _ = writeln!(out, "seed,{}", self.cfg.seed);
        let _ = writeln!(out, "outlier_threshold,{:?}", self.cfg.outlier_threshold);
        let _ = writeln!(out, "samples,{}", self.samples);
        let _ = writeln!(out, "skipped,{}", self.skipped);
        row(&mut out, "length_scales", self.cfg.length_scales.iter().copied());
        row(&mut out, "omega", row_major(&self.omega));
        row(&mut out, "factor", row_major(&self.factor));
        row(&mut out, "moments", row_major(&self.moments));
        out
    }

    pub fn import(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split(',');
            let key = parts.next().unwrap_or_default().trim().to_string();
            let vals: Vec<&str> = parts.map(str::trim).collect();
            fields.insert(key, vals);
        }
        let get = |k: &str| -> Result<&Vec<&str>> {
            fields
                .get(k)
                .ok_or_else(|| Error::Config(format!("model blob missing '{k}'")))
        };
        if get("issgpr-model")?.first() != Some(&"1") {
            return Err(Error::Config("unsupported model blob version".into()));
        }
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad value for '{k}'")))
        };
        let floats = |k: &str, len: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = get(k)?
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("'{k}': {e}")))?;
            if v.len() != len {
                return Err(Error::Config(format!(
                    "'{k}' has {} values, expected {len}",
                    v.len()
                )));
            }
            Ok(v)
        };
        let n = num("n_freq")? as usize;
        let d = num("input_dim")? as usize;
        let m = 2 * n;
        let cfg = FeatureConfig {
            n_freq: n,
            length_scales: floats("length_scales", d)?,
            lambda: num("lambda")?,
            seed: num("seed")? as u64,
            outlier_threshold: num("outlier_threshold")?,
        };
        cfg.validate()?;
        let mut model = Self {
            omega: DMatrix::from_row_slice(n, d, &floats("omega", n * d)?),
            factor: DMatrix::from_row_slice(m, m, &floats("factor", m * m)?),
            moments: DMatrix::from_row_slice(m, 3, &floats("moments", m * 3)?),
            weights: DMatrix::zeros(m, 3),
            samples: num("samples")? as usize,
            skipped: num("skipped")? as usize,
            cfg,
        };
        if model.factor.diagonal().iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Config("factor diagonal must be positive".into()));
        }
        model.resolve();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.export()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::import(&text)
    }
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

/// In-place update of a lower Cholesky factor `L` to that of `L L^T + x x^T`.
pub fn cholesky_rank_one_update(l: &mut DMatrix<f64>, mut x: DVector<f64>) {
    let n = l.nrows();
    for k in 0..n {
        let lkk = l[(k, k)];
        let r = lkk.hypot(x[k]);
        let c = r / lkk;
        let s = x[k] / lkk;
        l[(k, k)] = r;
        for i in k + 1..n {
            let lik = (l[(i, k)] + s * x[i]) / c;
            x[i] = c * x[i] - s * lik;
            l[(i, k)] = lik;
        }
    }
}

/// Which state quantities form the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSelection {
    /// `(p, v)`, six inputs.
    PositionVelocity,
    /// `(p, v, sin yaw, cos yaw)`, eight inputs.
    PositionVelocityYaw,
}

impl FeatureSelection {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureSelection::PositionVelocity => 6,
            FeatureSelection::PositionVelocityYaw => 8,
        }
    }

    pub fn input(&self, x: &VehicleState) -> DVector<f64> {
        let mut xi = DVector::zeros(self.input_dim());
        xi.rows_mut(0, 3).copy_from(&x.p);
        xi.rows_mut(3, 3).copy_from(&x.v);
        if let FeatureSelection::PositionVelocityYaw = self {
            let (s, c) = x.yaw().sin_cos();
            xi[6] = s;
            xi[7] = c;
        }
        xi
    }

    /// Input rate and acceleration from velocity, acceleration and jerk plus
    /// yaw rate and yaw acceleration.
    pub fn input_rates(
        &self,
        x: &VehicleState,
        a: &Vec3,
        j: &Vec3,
        yaw_rate: f64,
        yaw_accel: f64,
    ) -> (DVector<f64>, DVector<f64>) {
        let d = self.input_dim();
        let mut rate = DVector::zeros(d);
        let mut accel = DVector::zeros(d);
        rate.rows_mut(0, 3).copy_from(&x.v);
        rate.rows_mut(3, 3).copy_from(a);
        accel.rows_mut(0, 3).copy_from(a);
        accel.rows_mut(3, 3).copy_from(j);
        if let FeatureSelection::PositionVelocityYaw = self {
            let (s, c) = x.yaw().sin_cos();
            rate[6] = c * yaw_rate;
            rate[7] = -s * yaw_rate;
            accel[6] = -s * yaw_rate * yaw_rate + c * yaw_accel;
            accel[7] = -c * yaw_rate * yaw_rate - s * yaw_accel;
        }
        (rate, accel)
    }
}

/// Training pair from two consecutive samples `dt` apart: the input is taken
/// at the current sample, the target is the finite-difference acceleration
/// minus the nominal model evaluated with the previous thrust and attitude.
pub fn build_pair(
    prev: &VehicleState,
    u_prev: f64,
    cur: &VehicleState,
    dt: f64,
    selection: FeatureSelection,
) -> TrainingPair {
    let observed = (cur.v - prev.v) / dt;
    let predicted = prev.z_axis() * u_prev + gravity();
    TrainingPair {
        input: selection.input(cur),
        target: observed - predicted,
    }
}

/// Disturbance triple at a vehicle state using the model-based acceleration
/// and jerk: `f_e` first, then `a` from it, then `f_e'` from the input rate,
/// then `j`, then `f_e''`.
pub fn disturbance_triple_for_state(
    model: &DisturbanceModel,
    selection: FeatureSelection,
    x: &VehicleState,
    u: f64,
    u_dot: f64,
    yaw_accel: f64,
) -> Result<DisturbanceTriple> {
    let xi = selection.input(x);
    let fe = model.predict(&xi)?;
    let z = x.z_axis();
    let w = x.omega_world();
    let yaw_rate = w.z;
    let a = z * u + gravity() + fe;
    let (rate0, _) = selection.input_rates(x, &a, &Vec3::zeros(), yaw_rate, yaw_accel);
    let fe_dot = {
        let jac = model.predict_jacobian(&xi)?;
        let r = jac * &rate0;
        Vec3::new(r[0], r[1], r[2])
    };
    let j = z * u_dot + w.cross(&z) * u + fe_dot;
    let (rate, accel) = selection.input_rates(x, &a, &j, yaw_rate, yaw_accel);
    model.disturbance_triple(&xi, &rate, &accel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cfg(n: usize, d: usize, seed: u64) -> FeatureConfig {
        FeatureConfig::new(n, vec![1.0; d], seed)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize, s: f64) -> DVector<f64> {
        DVector::from_iterator(d, (0..d).map(|_| rng.random_range(-s..s)))
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, d: usize, pairs: usize) -> DisturbanceModel {
        let mut m = DisturbanceModel::new(cfg(n, d, rng.random())).unwrap();
        for _ in 0..pairs {
            let xi = rand_vec(rng, d, 2.0);
            let target = Vec3::new(xi[0].sin(), (xi[1] * xi[0]).cos(), xi.sum().tanh());
            m.update(&TrainingPair { input: xi, target }).unwrap();
        }
        m
    }

    #[test]
    fn feature_matrix_shape_and_determinism() {
        let c = cfg(50, 6, 42);
        let a = make_features(&c);
        assert_eq!(a.shape(), (50, 6));
        assert_eq!(a, make_features(&c));
        let mut scaled = c.clone();
        scaled.length_scales[0] = 2.0;
        let b = make_features(&scaled);
        for n in 0..50 {
            assert_eq!(b[(n, 0)], a[(n, 0)] / 2.0);
            assert_eq!(b[(n, 1)], a[(n, 1)]);
        }
        let m = DisturbanceModel::new(c).unwrap();
        assert_eq!(m.phi(&DVector::zeros(6)).unwrap().len(), 100);
    }

    #[test]
    fn config_validation() {
        assert!(DisturbanceModel::new(cfg(0, 6, 1)).is_err());
        let mut c = cfg(4, 2, 1);
        c.length_scales[1] = 0.0;
        assert!(DisturbanceModel::new(c).is_err());
        let mut c = cfg(4, 2, 1);
        c.lambda = 0.0;
        assert!(DisturbanceModel::new(c).is_err());
    }

    #[test]
    fn phi_identities() {
        let m = DisturbanceModel::new(cfg(20, 3, 7)).unwrap();
        let zero = m.phi(&DVector::zeros(3)).unwrap();
        assert!(zero.rows(0, 20).iter().all(|x| *x == 1.0));
        assert!(zero.rows(20, 20).iter().all(|x| *x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let xi = rand_vec(&mut rng, 3, 10.0);
            let p = m.phi(&xi).unwrap();
            assert_relative_eq!(p.norm_squared(), 20.0, epsilon = 1e-12);
            let q = m.phi(&-xi).unwrap();
            assert_eq!(q.rows(0, 20), p.rows(0, 20));
            assert_eq!(q.rows(20, 20), -p.rows(20, 20));
        }
        assert!(matches!(
            m.phi(&DVector::zeros(4)),
            Err(Error::DimensionMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn empty_model_is_zero() {
        let m = DisturbanceModel::new(cfg(10, 4, 3)).unwrap();
        let xi = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.1]);
        assert_eq!(m.predict(&xi).unwrap(), Vec3::zeros());
        assert!(m.predict_jacobian(&xi).unwrap().iter().all(|x| *x == 0.0));
        assert!(m
            .predict_hessian(&xi)
            .unwrap()
            .iter()
            .all(|h| h.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn rejects_bad_pairs() {
        let mut m = DisturbanceModel::new(cfg(5, 2, 3)).unwrap();
        let bad = TrainingPair {
            input: DVector::from_vec(vec![f64::NAN, 0.0]),
            target: Vec3::zeros(),
        };
        assert!(matches!(m.update(&bad), Err(Error::InvalidPair(_))));
        let outlier = TrainingPair {
            input: DVector::zeros(2),
            target: Vec3::new(40.0, 0.0, 0.0),
        };
        assert_eq!(m.update(&outlier).unwrap(), UpdateOutcome::SkippedOutlier);
        assert_eq!(m.skipped(), 1);
        assert_eq!(m.samples(), 0);
        assert_eq!(m.weights().amax(), 0.0);
    }

    #[test]
    fn fits_constant_field() {
        let mut m = DisturbanceModel::new(FeatureConfig::new(50, vec![1.0; 6], 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..4000 {
            let xi = rand_vec(&mut rng, 6, 0.5);
            m.update(&TrainingPair {
                input: xi,
                target: Vec3::x(),
            })
            .unwrap();
        }
        for _ in 0..200 {
            let xi = rand_vec(&mut rng, 6, 0.5);
            let f = m.predict(&xi).unwrap();
            assert!((f - Vec3::x()).norm() < 0.05, "{f}");
        }
    }

    #[test]
    fn jacobian_and_hessian_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_model(&mut rng, 30, 5, 60);
        let h = 1e-5;
        for _ in 0..20 {
            let xi = rand_vec(&mut rng, 5, 2.0);
            let jac = m.predict_jacobian(&xi).unwrap();
            let hess = m.predict_hessian(&xi).unwrap();
            for i in 0..5 {
                let mut e = DVector::zeros(5);
                e[i] = h;
                let fd = (m.predict(&(&xi + &e)).unwrap() - m.predict(&(&xi - &e)).unwrap()) / (2.0 * h);
                let fdj = (m.predict_jacobian(&(&xi + &e)).unwrap()
                    - m.predict_jacobian(&(&xi - &e)).unwrap())
                    / (2.0 * h);
                for o in 0..3 {
                    assert!((fd[o] - jac[(o, i)]).abs() < 1e-6 * (1.0 + jac[(o, i)].abs()));
                    for k in 0..5 {
                        assert!((fdj[(o, k)] - hess[o][(i, k)]).abs() < 1e-5 * (1.0 + hess[o][(i, k)].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn triple_with_zero_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = random_model(&mut rng, 10, 4, 20);
        let xi = rand_vec(&mut rng, 4, 1.0);
        let t = m
            .disturbance_triple(&xi, &DVector::zeros(4), &DVector::zeros(4))
            .unwrap();
        assert_eq!(t.fe_dot, Vec3::zeros());
        assert_eq!(t.fe_ddot, Vec3::zeros());
        assert_eq!(t.fe, m.predict(&xi).unwrap());
    }

    #[test]
    fn triple_matches_path_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let m = random_model(&mut rng, 25, 3, 50);
        let path = |t: f64| DVector::from_vec(vec![t.sin(), 0.5 * t * t, (1.3 * t).cos()]);
        let rate = |t: f64| DVector::from_vec(vec![t.cos(), t, -1.3 * (1.3 * t).sin()]);
        let accel = |t: f64| DVector::from_vec(vec![-t.sin(), 1.0, -1.69 * (1.3 * t).cos()]);
        for h in [5e-3, 2.5e-3] {
            for k in 0..20 {
                let t = 0.1 * k as f64;
                let tri = m.disturbance_triple(&path(t), &rate(t), &accel(t)).unwrap();
                let f = |s: f64| m.predict(&path(s)).unwrap();
                let d1 = (f(t + h) - f(t - h)) / (2.0 * h);
                let d2 = (f(t + h) - f(t) * 2.0 + f(t - h)) / (h * h);
                assert!((d1 - tri.fe_dot).amax() < 20.0 * h * h * (1.0 + tri.fe_dot.amax()));
                assert!((d2 - tri.fe_ddot).amax() < 20.0 * h * h * (1.0 + tri.fe_ddot.amax()));
            }
        }
    }

    #[test]
    fn pair_examples() {
        let hover = VehicleState::hover(Vec3::zeros(), 0.0);
        let p = build_pair(&hover, 9.81, &hover, 0.01, FeatureSelection::PositionVelocity);
        assert_eq!(p.target, Vec3::zeros());
        assert_eq!(p.input.len(), 6);
        let mut moved = hover;
        moved.v.x = 0.01;
        let p = build_pair(&hover, 9.81, &moved, 0.01, FeatureSelection::PositionVelocityYaw);
        assert_relative_eq!(p.target, Vec3::x(), epsilon = 1e-12);
        assert_eq!(p.input.len(), 8);
        assert_eq!(p.input[7], 1.0);
    }

    #[test]
    fn export_import_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let m = random_model(&mut rng, 8, 3, 30);
        let back = DisturbanceModel::import(&m.export()).unwrap();
        assert_eq!(back.omega(), m.omega());
        assert_eq!(back.factor(), m.factor());
        assert_eq!(back.weights(), m.weights());
        assert_eq!(back.samples(), 30);
        assert!(DisturbanceModel::import("issgpr-model,2\n").is_err());
    }

    #[test]
    fn rank_one_update_matches_refactorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 12;
        let mut a = DMatrix::<f64>::identity(n, n) * 0.5;
        let mut l = a.clone().cholesky().unwrap().l();
        for _ in 0..30 {
            let x = rand_vec(&mut rng, n, 1.0);
            a += &x * x.transpose();
            cholesky_rank_one_update(&mut l, x);
        }
        let direct = a.cholesky().unwrap().l();
        assert!((l - direct).amax() < 1e-12);
    }

    fn batch_weights(m: &DisturbanceModel, pairs: &[TrainingPair]) -> DMatrix<f64> {
        let dim = 2 * m.n_freq();
        let scale = 1.0 / (m.n_freq() as f64).sqrt();
        let mut a = DMatrix::identity(dim, dim) * m.config().lambda;
        let mut b = DMatrix::zeros(dim, 3);
        for p in pairs {
            let phi = m.phi(&p.input).unwrap() * scale;
            a += &phi * phi.transpose();
            b += &phi * p.target.transpose();
        }
        a.lu().solve(&b).unwrap()
    }

    fn random_pairs(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Vec<TrainingPair> {
        (0..k)
            .map(|_| TrainingPair {
                input: rand_vec(rng, d, 2.0),
                target: Vec3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
            })
            .collect()
    }

    #[test]
    fn incremental_matches_batch_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in [1, 10, 200] {
            let mut m = DisturbanceModel::new(cfg(50, 6, 5)).unwrap();
            let pairs = random_pairs(&mut rng, 6, k);
            for p in &pairs {
                m.update(p).unwrap();
            }
            let batch = batch_weights(&m, &pairs);
            let rel = (m.weights() - &batch).norm() / batch.norm();
            assert!(rel < 1e-8, "k={k} rel={rel:e}");
        }
    }

    #[test]
    fn duplicate_pair_doubles_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut m = DisturbanceModel::new(cfg(20, 4, 6)).unwrap();
        let mut pairs = random_pairs(&mut rng, 4, 15);
        for p in &pairs {
            m.update(p).unwrap();
        }
        let dup = pairs[3].clone();
        m.update(&dup).unwrap();
        pairs.push(dup);
        let batch = batch_weights(&m, &pairs);
        assert!((m.weights() - &batch).norm() / batch.norm() < 1e-8);
    }

    #[test]
    fn hessian_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let m = random_model(&mut rng, 12, 6, 10);
            let xi = rand_vec(&mut rng, 6, 3.0);
            for h in m.predict_hessian(&xi).unwrap() {
                assert!((&h - h.transpose()).amax() <= 1e-12 * (1.0 + h.amax()));
            }
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(24);
            random_model(&mut rng, 16, 6, 40).weights().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn conditioning_stays_finite() {
        let mut c = cfg(10, 6, 9);
        c.lambda = 1e-6;
        let mut m = DisturbanceModel::new(c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let xi = rand_vec(&mut rng, 6, 1.0);
        for i in 0..100_000 {
            // Nearly repeated inputs are the worst case for conditioning.
            let input = &xi + rand_vec(&mut rng, 6, 1e-3);
            let target = Vec3::new((i as f64 * 1e-3).sin(), 0.0, 0.0);
            m.update(&TrainingPair { input, target }).unwrap();
        }
        let cond = m.condition_estimate();
        assert!(cond.is_finite() && cond > 1.0);
        assert!(m.weights().iter().all(|w| w.is_finite()));
        assert!(m.factor().diagonal().iter().all(|d| *d > 0.0));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn prop_incremental_equals_batch(seed in 0u64..1_000_000, k in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = DisturbanceModel::new(cfg(15, 3, seed)).unwrap();
            let pairs = random_pairs(&mut rng, 3, k);
            for p in &pairs {
                m.update(p).unwrap();
            }
            let batch = batch_weights(&m, &pairs);
            proptest::prop_assert!((m.weights() - &batch).norm() <= 1e-8 * batch.norm());
        }
    }
}
