//! Probabilistic movement primitives over 3-D end-effector positions.
//!
//! Each Cartesian axis carries its own weight distribution over a shared
//! Gaussian basis, so the joint weight covariance is block diagonal.
//! Conditioning is the usual Gaussian update of the weight distribution
//! given a desired position and variance at one instant.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::GaussianBasis;
use crate::demos::{DemoSet, Demonstration};
use crate::error::{ensure, Error, Result};
use crate::geometry::{arr3, Vec3};

/// Default ridge term for weight regression.
pub const DEFAULT_LAMBDA: f64 = 1e-6;
/// Desired variance used for hard waypoints, m².
pub const HARD_VARIANCE: f64 = 1e-10;
/// Eigenvalues below `-COV_TOLERANCE` mean a broken covariance, not rounding.
pub const COV_TOLERANCE: f64 = 1e-10;
/// Isotropic weight variance the planner adds before conditioning, m².
pub const DEFAULT_WEIGHT_PRIOR: f64 = 1e-4;

const TIME_SLACK: f64 = 1e-9;

/// Desired observation of the end effector at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    #[serde(with = "vec3_serde")]
    pub position: Vec3,
    /// Per-axis desired variance, m².
    #[serde(with = "vec3_serde")]
    pub variance: Vec3,
}

impl Waypoint {
    pub fn new(t: f64, position: Vec3, variance: Vec3) -> Self {
        Self { t, position, variance }
    }

    /// Waypoint the mean must pass through.
    pub fn hard(t: f64, position: Vec3) -> Self {
        Self::new(t, position, Vec3::repeat(HARD_VARIANCE))
    }

    fn validate(&self, duration: f64) -> Result<()> {
        ensure(self.t.is_finite() && self.t >= -TIME_SLACK && self.t <= duration + TIME_SLACK, || {
            format!("waypoint time {} outside [0, {duration}]", self.t)
        })?;
        ensure(self.position.iter().all(|v| v.is_finite()), || "non-finite waypoint position".into())?;
        ensure(self.variance.iter().all(|&v| v >= 0.0 && !v.is_nan()), || {
            "waypoint variance must be non-negative".into()
        })
    }
}

/// Sampled positions, without variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec3>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Pointwise Gaussian marginal of a primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDistribution {
    pub times: Vec<f64>,
    pub mean: Vec<Vec3>,
    pub var: Vec<Vec3>,
}

impl TrajectoryDistribution {
    pub fn mean_trajectory(&self) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            points: self.mean.clone(),
        }
    }

    /// `t,x,y,z,var_x,var_y,var_z` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,z,var_x,var_y,var_z\n");
        for ((t, m), v) in self.times.iter().zip(&self.mean).zip(&self.var) {
            out.push_str(&format!("{t},{},{},{},{},{},{}\n", m.x, m.y, m.z, v.x, v.y, v.z));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut out = Self { times: vec![], mean: vec![], var: vec![] };
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::parse("trajectory csv", e))?;
            let vals = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse("trajectory csv", format!("row {}: {e}", line + 1)))?;
            if vals.len() < 4 {
                return Err(Error::parse("trajectory csv", format!("row {} has {} columns", line + 1, vals.len())));
            }
            out.times.push(vals[0]);
            out.mean.push(Vec3::new(vals[1], vals[2], vals[3]));
            out.var.push(if vals.len() >= 7 { Vec3::new(vals[4], vals[5], vals[6]) } else { Vec3::zeros() });
        }
        ensure(!out.times.is_empty(), || "trajectory csv has no rows".into())?;
        Ok(out)
    }
}

fn row_for(basis: &GaussianBasis, t: f64, duration: f64) -> Result<DVector<f64>> {
    basis.eval_time(t.clamp(0.0, duration), duration)
}

/// Regularized least-squares weights for one demonstration, one vector per axis.
pub fn fit_weights(demo: &Demonstration, basis: &GaussianBasis, lambda: f64) -> Result<[DVector<f64>; 3]> {
    ensure(lambda >= 0.0 && lambda.is_finite(), || format!("lambda must be >= 0, got {lambda}"))?;
    let k = basis.len();
    if demo.len() < k {
        return Err(Error::InsufficientData(format!(
            "demonstration has {} samples, basis needs at least {k}",
            demo.len()
        )));
    }
    let psi = basis.matrix(&demo.times, demo.duration())?;
    let gram = psi.transpose() * &psi + DMatrix::identity(k, k) * lambda;

    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > max * f64::EPSILON * k as f64) {
        return Err(Error::IllConditioned(format!(
            "normal matrix with lambda = {lambda} has eigenvalues in [{min:e}, {max:e}]"
        )));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::IllConditioned(format!("normal matrix not positive definite (lambda = {lambda})")))?;
    let psi_t = psi.transpose();
    Ok([0, 1, 2].map(|d| chol.solve(&(&psi_t * demo.coordinate(d)))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProMP {
    basis: GaussianBasis,
    duration: f64,
    mean_w: [DVector<f64>; 3],
    cov_w: [DMatrix<f64>; 3],
    noise: Vec3,
}

impl ProMP {
    pub fn new(
        basis: GaussianBasis,
        duration: f64,
        mean_w: [DVector<f64>; 3],
        cov_w: [DMatrix<f64>; 3],
        noise: Vec3,
    ) -> Result<Self> {
        let k = basis.len();
        ensure(duration.is_finite() && duration > 0.0, || format!("duration must be positive, got {duration}"))?;
        ensure(mean_w.iter().all(|m| m.len() == k), || "mean weight length mismatch".into())?;
        ensure(cov_w.iter().all(|c| c.shape() == (k, k)), || "weight covariance shape mismatch".into())?;
        ensure(noise.iter().all(|&v| v >= 0.0), || "observation noise must be non-negative".into())?;
        let cov_w = cov_w.map(|c| (&c + c.transpose()) * 0.5);
        for c in &cov_w {
            let min = SymmetricEigen::new(c.clone()).eigenvalues.min();
            if min < -COV_TOLERANCE {
                return Err(Error::CovarianceRepair { min_eigenvalue: min });
            }
        }
        Ok(Self { basis, duration, mean_w, cov_w, noise })
    }

    /// Fits every demonstration and takes sample statistics of the weights.
    ///
    /// `Sigma_x` is the mean squared reconstruction residual per axis.
    pub fn learn(set: &DemoSet, basis: &GaussianBasis, lambda: f64) -> Result<Self> {
        if set.demos.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "learning needs at least 2 demonstrations, got {}",
                set.demos.len()
            )));
        }
        let k = basis.len();
        let n = set.demos.len() as f64;
        let mut weights = Vec::with_capacity(set.demos.len());
        let mut sq_residual = Vec3::zeros();
        let mut samples = 0usize;
        for demo in &set.demos {
            let w = fit_weights(demo, basis, lambda)?;
            let psi = basis.matrix(&demo.times, demo.duration())?;
            for d in 0..3 {
                sq_residual[d] += (&psi * &w[d] - demo.coordinate(d)).norm_squared();
            }
            samples += demo.len();
            weights.push(w);
        }
        let mean_w = [0, 1, 2].map(|d| weights.iter().map(|w| &w[d]).sum::<DVector<f64>>() / n);
        let cov_w = [0, 1, 2].map(|d| {
            let mut c = DMatrix::zeros(k, k);
            for w in &weights {
                let dev = &w[d] - &mean_w[d];
                c += &dev * dev.transpose();
            }
            c / (n - 1.0)
        });
        Self::new(basis.clone(), set.duration, mean_w, cov_w, sq_residual / samples as f64)
    }

    pub fn basis(&self) -> &GaussianBasis {
        &self.basis
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn mean_weights(&self) -> &[DVector<f64>; 3] {
        &self.mean_w
    }

    pub fn weight_covariances(&self) -> &[DMatrix<f64>; 3] {
        &self.cov_w
    }

    pub fn noise(&self) -> Vec3 {
        self.noise
    }

    /// Same distribution played over a different duration.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        ensure(duration > 0.0, || format!("duration must be positive, got {duration}"))?;
        Ok(Self { duration, ..self.clone() })
    }

    /// Adds `variance * I` to every weight covariance.
    ///
    /// Demonstrations sharing a start point leave almost no weight variance
    /// there, so a hard waypoint far from the start cannot be reached. The
    /// isotropic term restores a floor of roughly `variance / k` everywhere.
    pub fn with_weight_prior(&self, variance: f64) -> Result<Self> {
        ensure(variance >= 0.0 && variance.is_finite(), || {
            format!("weight prior variance must be >= 0, got {variance}")
        })?;
        let k = self.basis.len();
        let mut out = self.clone();
        for c in out.cov_w.iter_mut() {
            *c += DMatrix::identity(k, k) * variance;
        }
        Ok(out)
    }

    pub fn with_noise(&self, noise: Vec3) -> Result<Self> {
        ensure(noise.iter().all(|&v| v >= 0.0), || "observation noise must be non-negative".into())?;
        Ok(Self { noise, ..self.clone() })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        ensure(t.is_finite() && t >= -TIME_SLACK && t <= self.duration + TIME_SLACK, || {
            format!("time {t} outside [0, {}]", self.duration)
        })
    }

    pub fn mean_at(&self, t: f64) -> Result<Vec3> {
        self.check_time(t)?;
        let psi = row_for(&self.basis, t, self.duration)?;
        Ok(Vec3::from_fn(|d, _| psi.dot(&self.mean_w[d])))
    }

    /// Per-axis marginal variance including observation noise.
    pub fn var_at(&self, t: f64) -> Result<Vec3> {
        self.check_time(t)?;
        let psi = row_for(&self.basis, t, self.duration)?;
        Ok(Vec3::from_fn(|d, _| {
            ((&self.cov_w[d] * &psi).dot(&psi) + self.noise[d]).max(0.0)
        }))
    }

    pub fn marginal(&self, times: &[f64]) -> Result<TrajectoryDistribution> {
        let mut out = TrajectoryDistribution {
            times: times.to_vec(),
            mean: Vec::with_capacity(times.len()),
            var: Vec::with_capacity(times.len()),
        };
        for &t in times {
            out.mean.push(self.mean_at(t)?);
            out.var.push(self.var_at(t)?);
        }
        Ok(out)
    }

    /// Posterior primitive given one desired observation. `self` is untouched.
    pub fn condition(&self, wp: &Waypoint) -> Result<Self> {
        wp.validate(self.duration)?;
        let psi = row_for(&self.basis, wp.t, self.duration)?;
        let mut next = self.clone();
        for d in 0..3 {
            let cov = &self.cov_w[d];
            let cov_psi = cov * &psi;
            let innovation_var = wp.variance[d] + cov_psi.dot(&psi);
            if !(innovation_var > 0.0) || !innovation_var.is_finite() {
                return Err(Error::SingularConditioning { t: wp.t });
            }
            let innovation = wp.position[d] - psi.dot(&self.mean_w[d]);
            next.mean_w[d] = &self.mean_w[d] + &cov_psi * (innovation / innovation_var);
            let updated = cov - &cov_psi * cov_psi.transpose() / innovation_var;
            next.cov_w[d] = repair_covariance(updated)?;
        }
        Ok(next)
    }

    /// Applies [`condition`](Self::condition) for each waypoint in order.
    pub fn condition_all(&self, wps: &[Waypoint]) -> Result<Self> {
        wps.iter().try_fold(self.clone(), |model, wp| model.condition(wp))
    }

    /// Draws weights for each axis from the weight distribution.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[DVector<f64>; 3]> {
        let mut out: [DVector<f64>; 3] = Default::default();
        for d in 0..3 {
            out[d] = sample_gaussian(&self.mean_w[d], &self.cov_w[d], rng)?;
        }
        Ok(out)
    }

    fn positions_for(&self, weights: &[DVector<f64>; 3], times: &[f64]) -> Result<Vec<Vec3>> {
        times
            .iter()
            .map(|&t| {
                self.check_time(t)?;
                let psi = row_for(&self.basis, t, self.duration)?;
                Ok(Vec3::from_fn(|d, _| psi.dot(&weights[d])))
            })
            .collect()
    }

    /// One trajectory realization. Observation noise is added only when
    /// `with_noise` is set.
    pub fn sample_with<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R, with_noise: bool) -> Result<Trajectory> {
        let weights = self.sample_weights(rng)?;
        let mut points = self.positions_for(&weights, times)?;
        if with_noise {
            add_noise(&mut points, self.noise, rng);
        }
        Ok(Trajectory { times: times.to_vec(), points })
    }

    pub fn sample_trajectory(&self, times: &[f64], seed: u64) -> Result<Trajectory> {
        self.sample_with(times, &mut ChaCha8Rng::seed_from_u64(seed), false)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProMPFile {
            k: self.basis.len(),
            centers: self.basis.centers().to_vec(),
            h: self.basis.bandwidth(),
            duration: self.duration,
            mu_w: self.mean_w.iter().map(|m| m.as_slice().to_vec()).collect(),
            sigma_w: self
                .cov_w
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            sigma_x: arr3(&self.noise),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::parse("model", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ProMPFile = serde_json::from_str(text).map_err(|e| Error::parse("model", e))?;
        ensure(f.centers.len() == f.k, || format!("k = {} but {} centers", f.k, f.centers.len()))?;
        ensure(f.mu_w.len() == 3 && f.sigma_w.len() == 3, || "model needs 3 axes".into())?;
        let basis = GaussianBasis::from_centers(f.centers, f.h)?;
        let k = f.k;
        let mean_w = [0, 1, 2].map(|d| DVector::from_vec(f.mu_w[d].clone()));
        let mut cov_w: [DMatrix<f64>; 3] = Default::default();
        for (d, rows) in f.sigma_w.iter().enumerate() {
            ensure(rows.len() == k && rows.iter().all(|r| r.len() == k), || {
                format!("Sigma_w[{d}] must be {k}x{k}")
            })?;
            cov_w[d] = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
        }
        Self::new(basis, f.duration, mean_w, cov_w, Vec3::from(f.sigma_x))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ProMPFile {
    k: usize,
    centers: Vec<f64>,
    h: f64,
    #[serde(rename = "T")]
    duration: f64,
    mu_w: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_w")]
    sigma_w: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_x")]
    sigma_x: [f64; 3],
}

/// Symmetrizes and clamps tiny negative eigenvalues to zero.
pub fn repair_covariance(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if min < -COV_TOLERANCE || min.is_nan() {
        return Err(Error::CovarianceRepair { min_eigenvalue: min });
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose())
}

fn sample_gaussian<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -COV_TOLERANCE {
        return Err(Error::CovarianceRepair { min_eigenvalue: min });
    }
    let z = DVector::from_iterator(
        mean.len(),
        eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal)),
    );
    Ok(mean + &eig.eigenvectors * z)
}

fn add_noise<R: Rng + ?Sized>(points: &mut [Vec3], noise: Vec3, rng: &mut R) {
    for p in points {
        for d in 0..3 {
            p[d] += noise[d].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Reach segment followed by push segment, each with its own phase.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositePrimitive {
    pub mp1: ProMP,
    pub mp2: ProMP,
    pub t1: f64,
}

pub const DEFAULT_T1: f64 = 0.85;
pub const DEFAULT_TOTAL: f64 = 2.0;
pub const DEFAULT_K1: usize = 4;
pub const DEFAULT_K2: usize = 5;

impl CompositePrimitive {
    /// Joins the segments and pins both to the same junction point.
    ///
    /// Without an explicit junction, the midpoint of the two segment means at
    /// the switch time is used.
    pub fn compose(mp1: &ProMP, mp2: &ProMP, t1: f64, total: f64, junction: Option<Vec3>) -> Result<Self> {
        ensure(total.is_finite() && t1 > 0.0 && t1 < total, || {
            format!("switch time {t1} must lie in (0, {total})")
        })?;
        let mp1 = mp1.with_duration(t1)?;
        let mp2 = mp2.with_duration(total - t1)?;
        let junction = match junction {
            Some(p) => p,
            None => (mp1.mean_at(t1)? + mp2.mean_at(0.0)?) / 2.0,
        };
        Ok(Self {
            mp1: mp1.condition(&Waypoint::hard(t1, junction))?,
            mp2: mp2.condition(&Waypoint::hard(0.0, junction))?,
            t1,
        })
    }

    /// Joins already-conditioned segments as they are.
    pub fn from_parts(mp1: ProMP, mp2: ProMP, t1: f64) -> Result<Self> {
        ensure(t1 > 0.0, || format!("switch time must be positive, got {t1}"))?;
        Ok(Self {
            mp1: mp1.with_duration(t1)?,
            mp2,
            t1,
        })
    }

    pub fn duration(&self) -> f64 {
        self.t1 + self.mp2.duration()
    }

    fn segment(&self, t: f64) -> (&ProMP, f64) {
        if t < self.t1 {
            (&self.mp1, t)
        } else {
            (&self.mp2, (t - self.t1).min(self.mp2.duration()))
        }
    }

    pub fn mean_at(&self, t: f64) -> Result<Vec3> {
        let (mp, local) = self.segment(t);
        mp.mean_at(local)
    }

    pub fn var_at(&self, t: f64) -> Result<Vec3> {
        let (mp, local) = self.segment(t);
        mp.var_at(local)
    }

    pub fn marginal(&self, times: &[f64]) -> Result<TrajectoryDistribution> {
        let mut out = TrajectoryDistribution {
            times: times.to_vec(),
            mean: Vec::with_capacity(times.len()),
            var: Vec::with_capacity(times.len()),
        };
        for &t in times {
            ensure(t >= -TIME_SLACK && t <= self.duration() + TIME_SLACK, || {
                format!("time {t} outside [0, {}]", self.duration())
            })?;
            out.mean.push(self.mean_at(t)?);
            out.var.push(self.var_at(t)?);
        }
        Ok(out)
    }

    /// Samples the reach segment, then the push segment conditioned on the
    /// sampled junction point so every realization is continuous.
    pub fn sample_with<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> Result<Trajectory> {
        let w1 = self.mp1.sample_weights(rng)?;
        let junction = self.mp1.positions_for(&w1, &[self.t1])?[0];
        let exact = Waypoint::new(0.0, junction, Vec3::zeros());
        let mp2 = match self.mp2.condition(&exact) {
            Ok(m) => m,
            Err(Error::SingularConditioning { .. }) => self.mp2.clone(),
            Err(e) => return Err(e),
        };
        let w2 = mp2.sample_weights(rng)?;
        let mut points = Vec::with_capacity(times.len());
        for &t in times {
            let p = if t < self.t1 {
                self.mp1.positions_for(&w1, &[t])?[0]
            } else {
                mp2.positions_for(&w2, &[(t - self.t1).min(mp2.duration())])?[0]
            };
            points.push(p);
        }
        Ok(Trajectory { times: times.to_vec(), points })
    }

    pub fn sample_trajectory(&self, times: &[f64], seed: u64) -> Result<Trajectory> {
        self.sample_with(times, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Uniform grid over `[0, duration]` at `rate` samples per second, both ends included.
pub fn uniform_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate).round().max(1.0) as usize + 1;
    (0..n)
        .map(|i| if i + 1 == n { duration } else { duration * i as f64 / (n - 1) as f64 })
        .collect()
}

pub(crate) mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::{default_goals, generate_nominals, DemoConfig, NominalPath};
    use proptest::prelude::*;
    use rand::Rng;

    /// Gaussian elimination with partial pivoting on explicitly accumulated
    /// normal equations, written without nalgebra.
    fn normal_equations_oracle(psi: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
        let k = psi[0].len();
        let mut a = vec![vec![0.0; k + 1]; k];
        for i in 0..k {
            for j in 0..k {
                a[i][j] = psi.iter().map(|r| r[i] * r[j]).sum::<f64>() + if i == j { lambda } else { 0.0 };
            }
            a[i][k] = psi.iter().zip(y).map(|(r, v)| r[i] * v).sum();
        }
        for col in 0..k {
            let piv = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            for row in col + 1..k {
                let f = a[row][col] / a[col][col];
                for c in col..=k {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
        let mut x = vec![0.0; k];
        for row in (0..k).rev() {
            let s: f64 = (row + 1..k).map(|c| a[row][c] * x[c]).sum();
            x[row] = (a[row][k] - s) / a[row][row];
        }
        x
    }

    fn scalar_basis_row(centers: &[f64], h: f64, z: f64) -> Vec<f64> {
        let raw: Vec<f64> = centers.iter().map(|c| (-(z - c) * (z - c) / (2.0 * h)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    fn default_set() -> DemoSet {
        generate_nominals(&DemoConfig::default(), 42).unwrap()
    }

    #[test]
    fn constant_demo_is_reproduced() {
        let times: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        let p = Vec3::new(0.2, -0.1, 0.4);
        let demo = Demonstration::new(times.clone(), vec![p; times.len()], 0).unwrap();
        let basis = GaussianBasis::new(5).unwrap();
        let w = fit_weights(&demo, &basis, 0.0).unwrap();
        let psi = basis.matrix(&times, 1.0).unwrap();
        for d in 0..3 {
            let rec = &psi * &w[d];
            assert!(rec.iter().all(|v| (v - p[d]).abs() < 1e-9));
        }
    }

    #[test]
    fn square_system_interpolates() {
        let basis = GaussianBasis::new(4).unwrap();
        let times = vec![0.0, 0.3, 0.7, 1.0];
        let points = vec![
            Vec3::new(0.0, 0.1, 0.2),
            Vec3::new(0.5, -0.2, 0.1),
            Vec3::new(0.1, 0.3, 0.0),
            Vec3::new(0.4, 0.0, 0.6),
        ];
        let demo = Demonstration::new(times.clone(), points.clone(), 0).unwrap();
        let w = fit_weights(&demo, &basis, 0.0).unwrap();
        let psi = basis.matrix(&times, 1.0).unwrap();
        for d in 0..3 {
            let rec = &psi * &w[d];
            for (i, p) in points.iter().enumerate() {
                assert!((rec[i] - p[d]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fit_matches_independent_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let basis = GaussianBasis::new(7).unwrap();
        let times: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        let points: Vec<Vec3> = times.iter().map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let demo = Demonstration::new(times.clone(), points.clone(), 0).unwrap();
        let w = fit_weights(&demo, &basis, 1e-6).unwrap();
        let psi: Vec<Vec<f64>> = times.iter().map(|&t| scalar_basis_row(basis.centers(), basis.bandwidth(), t)).collect();
        for d in 0..3 {
            let y: Vec<f64> = points.iter().map(|p| p[d]).collect();
            let oracle = normal_equations_oracle(&psi, &y, 1e-6);
            let num: f64 = oracle.iter().zip(w[d].iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = oracle.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num / den < 1e-8, "relative error {}", num / den);
        }
    }

    #[test]
    fn singular_regression_is_reported() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let demo = Demonstration::new(times.clone(), times.iter().map(|&t| Vec3::repeat(t)).collect(), 0).unwrap();
        let wide = GaussianBasis::with_bandwidth(20, 1.0).unwrap();
        assert!(matches!(fit_weights(&demo, &wide, 0.0), Err(Error::IllConditioned(_))));
        assert!(fit_weights(&demo, &wide, 1e-6).is_ok());
        let short = Demonstration::new(vec![0.0, 1.0], vec![Vec3::zeros(); 2], 0).unwrap();
        assert!(matches!(fit_weights(&short, &GaussianBasis::new(4).unwrap(), 0.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn identical_demos_have_zero_covariance() {
        let set = default_set();
        let one = DemoSet {
            demos: vec![set.demos[0].clone(); 5],
            ..set.clone()
        };
        let basis = GaussianBasis::new(4).unwrap();
        let model = ProMP::learn(&one, &basis, DEFAULT_LAMBDA).unwrap();
        for c in model.weight_covariances() {
            assert!(c.amax() < 1e-12);
        }
        let w = fit_weights(&one.demos[0], &basis, DEFAULT_LAMBDA).unwrap();
        for d in 0..3 {
            assert!((&model.mean_weights()[d] - &w[d]).amax() < 1e-12);
        }
        let few = DemoSet { demos: vec![set.demos[0].clone()], ..set };
        assert!(matches!(ProMP::learn(&few, &basis, 0.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn learned_mean_starts_at_shared_start() {
        let set = default_set();
        // Normalized bumps are biased at the phase boundary; k = 20 keeps the
        // bias below the tolerance, k = 4 does not.
        let model = ProMP::learn(&set, &GaussianBasis::new(20).unwrap(), DEFAULT_LAMBDA).unwrap();
        assert!((model.mean_at(0.0).unwrap() - set.start).norm() < 1e-3);
        let dist = model.marginal(&uniform_times(1.0, 100.0)).unwrap();
        for v in &dist.var {
            for d in 0..3 {
                assert!(v[d] >= model.noise()[d]);
            }
        }
    }

    #[test]
    fn mean_reproduces_held_out_clean_demo() {
        let cfg = DemoConfig {
            goals: vec![default_goals()[3]],
            ..DemoConfig::default()
        };
        let set = generate_nominals(&cfg, 9).unwrap();
        let clean = NominalPath::fit(cfg.start, cfg.goals[0], cfg.duration, cfg.via_lift).unwrap();
        let model = ProMP::learn(&set, &GaussianBasis::new(10).unwrap(), DEFAULT_LAMBDA).unwrap();
        let times = uniform_times(1.0, 100.0);
        let sq: f64 = times
            .iter()
            .map(|&t| (model.mean_at(t).unwrap() - clean.position(t).unwrap()).norm_squared())
            .sum();
        assert!((sq / times.len() as f64).sqrt() < 1e-3);
    }

    #[test]
    fn mirrored_demos_have_mean_on_mirror_plane() {
        let times: Vec<f64> = (0..=60).map(|i| i as f64 / 60.0).collect();
        let a: Vec<Vec3> = times.iter().map(|&t| Vec3::new(t, 0.05 * (3.0 * t).sin(), 0.2 * t * t)).collect();
        let b: Vec<Vec3> = a.iter().map(|p| Vec3::new(p.x, -p.y, p.z)).collect();
        let set = DemoSet {
            duration: 1.0,
            start: a[0],
            goals: vec![],
            demos: vec![
                Demonstration::new(times.clone(), a, 0).unwrap(),
                Demonstration::new(times.clone(), b, 1).unwrap(),
            ],
        };
        let model = ProMP::learn(&set, &GaussianBasis::new(6).unwrap(), DEFAULT_LAMBDA).unwrap();
        for &t in &times {
            assert!(model.mean_at(t).unwrap().y.abs() < 1e-9);
        }
    }

    fn model_with(k: usize, cov_scale: f64, noise: f64) -> ProMP {
        let basis = GaussianBasis::new(k).unwrap();
        let mean = [0, 1, 2].map(|d| DVector::from_fn(k, |i, _| 0.1 * (i as f64 + d as f64)));
        let cov = [0, 1, 2].map(|_| DMatrix::from_fn(k, k, |i, j| cov_scale * (-((i as f64 - j as f64).powi(2)) / 4.0).exp()));
        ProMP::new(basis, 1.0, mean, cov, Vec3::repeat(noise)).unwrap()
    }

    #[test]
    fn deterministic_model_has_zero_variance() {
        let m = model_with(5, 0.0, 0.0);
        let dist = m.marginal(&uniform_times(1.0, 20.0)).unwrap();
        assert!(dist.var.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn single_basis_variance_is_constant() {
        let basis = GaussianBasis::new(1).unwrap();
        let cov = [0.3, 0.2, 0.1].map(|v| DMatrix::from_element(1, 1, v));
        let mean = [1.0, 2.0, 3.0].map(|v| DVector::from_element(1, v));
        let m = ProMP::new(basis, 2.0, mean, cov, Vec3::new(0.01, 0.02, 0.03)).unwrap();
        for t in [0.0, 0.4, 1.1, 2.0] {
            let v = m.var_at(t).unwrap();
            assert!((v - Vec3::new(0.31, 0.22, 0.13)).amax() < 1e-15);
        }
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let m = model_with(5, 1e-3, 1e-6);
        let t = 0.37;
        let wp = Waypoint::hard(t, m.mean_at(t).unwrap());
        let post = m.condition(&wp).unwrap();
        assert_eq!(post.mean_weights(), m.mean_weights());
        assert!(post.var_at(t).unwrap().x < m.var_at(t).unwrap().x);
    }

    #[test]
    fn near_exact_waypoint_is_hit() {
        let m = model_with(6, 1e-3, 0.0);
        let target = Vec3::new(0.4, -0.2, 0.9);
        let post = m.condition(&Waypoint::hard(0.6, target)).unwrap();
        assert!((post.mean_at(0.6).unwrap() - target).amax() < 1e-6);
        assert!(post.var_at(0.6).unwrap().amax() <= 1e-6);
        // Original is untouched.
        assert_ne!(m.mean_at(0.6).unwrap(), post.mean_at(0.6).unwrap());
    }

    #[test]
    fn uninformative_waypoint_changes_nothing() {
        let m = model_with(6, 1e-3, 0.0);
        let post = m.condition(&Waypoint::new(0.6, Vec3::new(5.0, 5.0, 5.0), Vec3::repeat(1e12))).unwrap();
        for d in 0..3 {
            let rel = (&post.mean_weights()[d] - &m.mean_weights()[d]).norm() / m.mean_weights()[d].norm();
            assert!(rel < 1e-6);
            let rel = (&post.weight_covariances()[d] - &m.weight_covariances()[d]).norm() / m.weight_covariances()[d].norm();
            assert!(rel < 1e-6);
        }
    }

    #[test]
    fn singular_conditioning() {
        let m = model_with(4, 0.0, 0.0);
        let wp = Waypoint::new(0.5, Vec3::zeros(), Vec3::zeros());
        assert!(matches!(m.condition(&wp), Err(Error::SingularConditioning { .. })));
        assert!(m.condition(&Waypoint::hard(1.5, Vec3::zeros())).is_err());
    }

    #[test]
    fn condition_all_cases() {
        let m = model_with(6, 1e-3, 0.0);
        assert_eq!(m.condition_all(&[]).unwrap(), m);
        let a = Waypoint::hard(0.2, Vec3::new(0.1, 0.2, 0.3));
        let b = Waypoint::hard(0.8, Vec3::new(-0.1, 0.0, 0.5));
        let post = m.condition_all(&[a, b]).unwrap();
        assert!((post.mean_at(0.2).unwrap() - a.position).amax() < 1e-6);
        assert!((post.mean_at(0.8).unwrap() - b.position).amax() < 1e-6);
        let once = m.condition(&a).unwrap();
        let twice = once.condition(&a).unwrap();
        for t in [0.0, 0.2, 0.5, 1.0] {
            assert!((once.mean_at(t).unwrap() - twice.mean_at(t).unwrap()).amax() < 1e-9);
        }
    }

    #[test]
    fn exact_conditioning_is_order_free() {
        let m = model_with(6, 1e-3, 0.0);
        let a = Waypoint::new(0.25, Vec3::new(0.1, 0.2, 0.3), Vec3::zeros());
        let b = Waypoint::new(0.75, Vec3::new(-0.1, 0.0, 0.5), Vec3::zeros());
        let ab = m.condition_all(&[a, b]).unwrap();
        let ba = m.condition_all(&[b, a]).unwrap();
        for t in uniform_times(1.0, 50.0) {
            assert!((ab.mean_at(t).unwrap() - ba.mean_at(t).unwrap()).amax() < 1e-8);
            assert!((ab.mean_at(0.25).unwrap() - a.position).amax() < 1e-9);
        }
    }

    #[test]
    fn repair_rejects_real_negativity() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(matches!(repair_covariance(bad), Err(Error::CovarianceRepair { .. })));
        let drift = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        let fixed = repair_covariance(drift).unwrap();
        assert!(SymmetricEigen::new(fixed).eigenvalues.min() >= 0.0);
    }

    #[test]
    fn degenerate_sampling_returns_mean() {
        let m = model_with(5, 0.0, 0.0);
        let times = uniform_times(1.0, 10.0);
        let s = m.sample_trajectory(&times, 3).unwrap();
        for (t, p) in times.iter().zip(&s.points) {
            assert_eq!(*p, m.mean_at(*t).unwrap());
        }
    }

    #[test]
    fn sampling_is_reproducible_and_matches_marginal() {
        let m = model_with(5, 1e-3, 0.0);
        let times = uniform_times(1.0, 10.0);
        assert_eq!(m.sample_trajectory(&times, 8).unwrap(), m.sample_trajectory(&times, 8).unwrap());

        let t = 0.42;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let xs: Vec<Vec3> = (0..n).map(|_| m.sample_with(&[t], &mut rng, false).unwrap().points[0]).collect();
        let mean = xs.iter().sum::<Vec3>() / n as f64;
        let expected = m.var_at(t).unwrap();
        for d in 0..3 {
            let var = xs.iter().map(|x| (x[d] - mean[d]).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            assert!((var / expected[d] - 1.0).abs() < 0.05, "axis {d}: {var} vs {}", expected[d]);
        }
    }

    #[test]
    fn json_is_lossless() {
        let m = ProMP::learn(&default_set(), &GaussianBasis::new(4).unwrap(), DEFAULT_LAMBDA).unwrap();
        let back = ProMP::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn composite_is_continuous_at_junction() {
        let set = default_set();
        let mp = ProMP::learn(&set, &GaussianBasis::new(4).unwrap(), DEFAULT_LAMBDA)
            .unwrap()
            .with_weight_prior(DEFAULT_WEIGHT_PRIOR)
            .unwrap();
        let junction = mp.mean_at(1.0).unwrap();
        let c = CompositePrimitive::compose(&mp, &mp.with_duration(1.0).unwrap(), 1.0, 2.0, Some(junction)).unwrap();
        let left = c.mp1.mean_at(1.0).unwrap();
        let right = c.mean_at(1.0).unwrap();
        assert!((left - right).amax() < 1e-6);
        assert!(CompositePrimitive::compose(&mp, &mp, 2.0, 2.0, None).is_err());
        assert!(CompositePrimitive::compose(&mp, &mp, 0.0, 2.0, None).is_err());
    }

    #[test]
    fn weight_prior_lets_start_move() {
        let mp = ProMP::learn(&default_set(), &GaussianBasis::new(4).unwrap(), DEFAULT_LAMBDA).unwrap();
        let far = Waypoint::hard(0.0, Vec3::new(0.3, 0.0, 0.52));
        let raw = mp.condition(&far).unwrap();
        assert!((raw.mean_at(0.0).unwrap() - far.position).norm() > 1e-4);
        let widened = mp.with_weight_prior(DEFAULT_WEIGHT_PRIOR).unwrap();
        let moved = widened.condition(&far).unwrap();
        assert!((moved.mean_at(0.0).unwrap() - far.position).norm() < 1e-4);
        for d in 0..3 {
            let diff = &widened.weight_covariances()[d] - &mp.weight_covariances()[d];
            assert!((diff - DMatrix::identity(4, 4) * DEFAULT_WEIGHT_PRIOR).amax() < 1e-18);
        }
    }

    #[test]
    fn composite_samples_are_continuous() {
        let set = default_set();
        let mp1 = ProMP::learn(&set, &GaussianBasis::new(DEFAULT_K1).unwrap(), DEFAULT_LAMBDA).unwrap();
        let mp2 = ProMP::learn(&set, &GaussianBasis::new(DEFAULT_K2).unwrap(), DEFAULT_LAMBDA).unwrap();
        let c = CompositePrimitive::compose(&mp1, &mp2, DEFAULT_T1, DEFAULT_TOTAL, None).unwrap();
        let var = c.mp1.var_at(DEFAULT_T1).unwrap() + c.mp2.var_at(0.0).unwrap();
        let eps = 1e-9;
        let times = [DEFAULT_T1 - eps, DEFAULT_T1];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s = c.sample_with(&times, &mut rng).unwrap();
            let gap = s.points[1] - s.points[0];
            for d in 0..3 {
                assert!(gap[d].abs() <= 3.0 * var[d].sqrt() + 1e-8, "gap {gap:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn conditioning_never_grows_uncertainty(
            t in 0.0f64..=1.0,
            x in -1.0f64..1.0,
            var in 0.0f64..1e-2,
            scale in 1e-6f64..1e-2,
        ) {
            let m = model_with(6, scale, 1e-8);
            let post = m.condition(&Waypoint::new(t, Vec3::repeat(x), Vec3::repeat(var))).unwrap();
            for d in 0..3 {
                let diff = &m.weight_covariances()[d] - &post.weight_covariances()[d];
                prop_assert!(SymmetricEigen::new(diff).eigenvalues.min() >= -1e-10);
            }
            let before = m.var_at(t).unwrap();
            let after = post.var_at(t).unwrap();
            for d in 0..3 {
                prop_assert!(after[d] <= before[d] + 1e-12);
            }
        }
    }
}
