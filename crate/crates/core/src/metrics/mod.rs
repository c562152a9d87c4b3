//! Distribution metrics over feature sets (FID, KID, RBF-MMD) and
//! segmentation metrics over labeled grids (per-class IoU, mIoU).
//!
//! Pairwise kernel sums are split by row across threads; row partials are
//! reduced in index order so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::GraphVae;
use crate::numeric::{Real, Rng, Tensor};
use crate::voxel::SemanticVoxelGrid;

#[cfg(test)]
mod tests;

/// Negative eigenvalues down to this (relative) level are rounding noise.
const EIG_CLAMP: f64 = 1e-10;

/// `n` feature vectors of width `d`, tagged with the extractor that made them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    features: Tensor<f64>,
    pub extractor: String,
}

impl FeatureSet {
    pub fn new(features: Tensor<f64>, extractor: impl Into<String>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::InvalidParameter(format!(
                "feature set must be [n, d], got {:?}",
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite { op: "feature set" });
        }
        Ok(FeatureSet {
            features,
            extractor: extractor.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], extractor: impl Into<String>) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?, extractor)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn features(&self) -> &Tensor<f64> {
        &self.features
    }
}

fn check_pair(op: &'static str, a: &FeatureSet, b: &FeatureSet, min: usize) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(op, a.features.shape(), b.features.shape()));
    }
    if a.len() < min || b.len() < min {
        return Err(Error::InvalidParameter(format!(
            "{op} needs at least {min} vectors per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `Σ_i Σ_j f(a_i, b_j)`, skipping `i == j` when `skip_diag`.
fn kernel_sum(a: &FeatureSet, b: &FeatureSet, skip_diag: bool, f: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync)) -> f64 {
    let rows: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let x = a.row(i);
            (0..b.len())
                .filter(|&j| !(skip_diag && i == j))
                .map(|j| f(x, b.row(j)))
                .sum()
        })
        .collect();
    rows.iter().sum()
}

fn moments(a: &FeatureSet) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (a.len(), a.dim());
    let x = DMatrix::from_row_slice(n, d, a.features.data());
    let mu = x.row_mean().transpose();
    let mut c = x;
    for mut row in c.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = c.transpose() * &c / (n - 1) as f64;
    (mu, cov)
}

/// Eigenvalues of a symmetric matrix with rounding-level negatives set to 0.
fn psd_eigen(op: &str, m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut e = SymmetricEigen::new(sym);
    let top = e.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = EIG_CLAMP * top.max(1.0);
    for v in e.eigenvalues.iter_mut() {
        if *v < -floor {
            return Err(Error::Runtime(format!(
                "{op}: matrix is not positive semidefinite (eigenvalue {v:e}, largest {top:e}, ratio {:e})",
                top / v.abs()
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(e)
}

fn psd_sqrt(op: &str, m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = psd_eigen(op, m)?;
    let vals = e.eigenvalues.map(f64::sqrt);
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose())
}

/// Fréchet distance between Gaussian fits of the two sets.
///
/// `Tr((Σa Σb)^{1/2})` equals the sum of singular values of
/// `Σa^{1/2} Σb^{1/2}`; taking singular values directly avoids square roots
/// of near-zero eigenvalues when a covariance is rank deficient.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_pair("fid", a, b, 2)?;
    let (mu_a, cov_a) = moments(a);
    let (mu_b, cov_b) = moments(b);
    let sa = psd_sqrt("fid covariance", cov_a.clone())?;
    let sb = psd_sqrt("fid covariance", cov_b.clone())?;
    let tr_sqrt: f64 = (sa * sb).singular_values().iter().sum();
    let diff = (&mu_a - &mu_b).norm_squared();
    Ok(diff + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt)
}

/// Cubic polynomial kernel `(xᵀy/d + 1)³`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    (dot(x, y) / x.len() as f64 + 1.0).powi(3)
}

/// Estimator used by [`kid`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KidEstimator {
    /// Pairs `(a_i, b_i)`; the cross sum also skips `i == j`. Needs equal
    /// set sizes and is exactly 0 when `b` is a copy of `a`.
    Paired,
    /// Full cross sum over all `m·n` pairs.
    Unpaired,
}

/// Unbiased squared MMD with the cubic polynomial kernel: paired when the
/// sets have equal size, unpaired otherwise.
pub fn kid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    let est = if a.len() == b.len() {
        KidEstimator::Paired
    } else {
        KidEstimator::Unpaired
    };
    kid_with(a, b, est)
}

/// Within-set sums always exclude the diagonal. Kernel values are shifted
/// by `k(a_0, b_0)` before summing, which leaves the estimate unchanged and
/// makes constant-kernel inputs cancel exactly.
pub fn kid_with(a: &FeatureSet, b: &FeatureSet, est: KidEstimator) -> Result<f64> {
    check_pair("kid", a, b, 2)?;
    let (m, n) = (a.len() as f64, b.len() as f64);
    let c0 = poly_kernel(a.row(0), b.row(0));
    let k = move |x: &[f64], y: &[f64]| poly_kernel(x, y) - c0;
    let aa = kernel_sum(a, a, true, &k) / (m * (m - 1.0));
    let bb = kernel_sum(b, b, true, &k) / (n * (n - 1.0));
    let ab = match est {
        KidEstimator::Paired if a.len() != b.len() => {
            return Err(Error::InvalidParameter(format!(
                "paired kid needs equal set sizes, got {} and {}",
                a.len(),
                b.len()
            )))
        }
        KidEstimator::Paired => kernel_sum(a, b, true, &k) / (m * (m - 1.0)),
        KidEstimator::Unpaired => kernel_sum(a, b, false, &k) / (m * n),
    };
    Ok(aa + bb - 2.0 * ab)
}

pub fn rbf_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    (-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Median pairwise distance over the pooled sets.
pub fn median_bandwidth(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_pair("median_bandwidth", a, b, 1)?;
    let pooled: Vec<&[f64]> = (0..a.len()).map(|i| a.row(i)).chain((0..b.len()).map(|i| b.row(i))).collect();
    let mut d: Vec<f64> = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let med = match d.len() {
        0 => 0.0,
        n if n % 2 == 1 => d[n / 2],
        n => 0.5 * (d[n / 2 - 1] + d[n / 2]),
    };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::InvalidParameter(
            "median pairwise distance is 0; pass an explicit bandwidth".into(),
        ))
    }
}

/// Biased (V-statistic) squared MMD with an RBF kernel.
pub fn mmd_rbf(a: &FeatureSet, b: &FeatureSet, bandwidth: f64) -> Result<f64> {
    check_pair("mmd_rbf", a, b, 1)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let (m, n) = (a.len() as f64, b.len() as f64);
    let k = move |x: &[f64], y: &[f64]| rbf_kernel(x, y, bandwidth);
    let aa = kernel_sum(a, a, false, &k) / (m * m);
    let bb = kernel_sum(b, b, false, &k) / (n * n);
    let ab = kernel_sum(a, b, false, &k) / (m * n);
    Ok(aa + bb - 2.0 * ab)
}

/// Per-class intersection and union counts, accumulated over grid pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IouCounts {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
    /// Voxels of each class in the ground truth.
    pub support: Vec<u64>,
}

impl IouCounts {
    pub fn new(num_classes: u16) -> Self {
        let n = num_classes as usize;
        IouCounts {
            intersection: vec![0; n],
            union: vec![0; n],
            support: vec![0; n],
        }
    }

    pub fn add(&mut self, pred: &SemanticVoxelGrid, gt: &SemanticVoxelGrid) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape("iou", &pred.dims(), &gt.dims()));
        }
        let classes = pred.num_classes().max(gt.num_classes()) as usize;
        if classes > self.union.len() {
            for v in [&mut self.intersection, &mut self.union, &mut self.support] {
                v.resize(classes, 0);
            }
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            let (p, g) = (p as usize, g as usize);
            self.support[g] += 1;
            if p == g {
                self.intersection[g] += 1;
                self.union[g] += 1;
            } else {
                self.union[p] += 1;
                self.union[g] += 1;
            }
        }
        Ok(())
    }

    /// IoU of class `c`, `None` when it appears in neither grid.
    pub fn iou(&self, c: u16) -> Option<f64> {
        let c = c as usize;
        match self.union.get(c) {
            Some(&u) if u > 0 => Some(self.intersection[c] as f64 / u as f64),
            _ => None,
        }
    }

    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.union.len()).map(|c| self.iou(c as u16)).collect()
    }

    /// Mean IoU over the semantic classes (label ≥ 1) present in the
    /// ground truth.
    pub fn miou(&self) -> Option<f64> {
        let vals: Vec<f64> = (1..self.union.len())
            .filter(|&c| self.support[c] > 0)
            .filter_map(|c| self.iou(c as u16))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// IoU of class `c` between two grids; `None` when `c` appears in neither.
pub fn iou(pred: &SemanticVoxelGrid, gt: &SemanticVoxelGrid, c: u16) -> Result<Option<f64>> {
    let mut counts = IouCounts::new(pred.num_classes().max(gt.num_classes()));
    counts.add(pred, gt)?;
    Ok(counts.iou(c))
}

pub fn miou(pred: &SemanticVoxelGrid, gt: &SemanticVoxelGrid) -> Result<Option<f64>> {
    let mut counts = IouCounts::new(pred.num_classes().max(gt.num_classes()));
    counts.add(pred, gt)?;
    Ok(counts.miou())
}

/// One feature vector per scene: the VAE posterior mean averaged over the
/// code graph's nodes.
pub fn extract_features<T: Real>(vae: &GraphVae, params: &crate::numeric::ParamStore<T>, grids: &[SemanticVoxelGrid]) -> Result<FeatureSet> {
    let rows: Vec<Vec<f64>> = grids
        .par_iter()
        .map(|g| {
            if g.dims() != vae.geom.grid_dims || g.num_classes() != vae.cfg.num_classes {
                return Err(Error::Config(format!(
                    "grid {:?} with {} classes does not match extractor {:?} with {}",
                    g.dims(),
                    g.num_classes(),
                    vae.geom.grid_dims,
                    vae.cfg.num_classes
                )));
            }
            let code = vae.encode(params, g, &Rng::new(0))?;
            let mu = code.mu.cast::<f64>();
            let n = mu.rows() as f64;
            Ok((0..mu.cols())
                .map(|c| (0..mu.rows()).map(|r| mu.row(r)[c]).sum::<f64>() / n)
                .collect())
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return FeatureSet::new(Tensor::zeros(&[0, vae.cfg.widths.code]), "vae-mean-code");
    }
    FeatureSet::from_rows(&rows, "vae-mean-code")
}

/// Everything the `metrics` command reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub extractor: String,
    pub n_a: usize,
    pub n_b: usize,
    pub fid: Option<f64>,
    /// Raw unbiased estimate.
    pub kid: Option<f64>,
    pub kid_estimator: Option<KidEstimator>,
    /// `kid` scaled by 10³.
    pub kid_x1e3: Option<f64>,
    pub mmd: Option<f64>,
    pub mmd_bandwidth: Option<f64>,
    pub mmd_estimator: String,
    /// Per class, `null` when absent from both sides.
    pub iou: Vec<Option<f64>>,
    pub miou: Option<f64>,
}

impl MetricReport {
    /// Distribution metrics need at least two vectors per side; with fewer
    /// they are reported as `null`. `bandwidth` defaults to the median
    /// heuristic.
    pub fn compute(a: &FeatureSet, b: &FeatureSet, bandwidth: Option<f64>, seg: Option<&IouCounts>) -> Result<Self> {
        let enough = a.len() >= 2 && b.len() >= 2;
        let fid_v = if enough { Some(fid(a, b)?) } else { None };
        let kid_v = if enough { Some(kid(a, b)?) } else { None };
        let bw = match bandwidth {
            Some(bw) => Some(bw),
            None if !a.is_empty() && !b.is_empty() => median_bandwidth(a, b).ok(),
            None => None,
        };
        let mmd_v = match bw {
            Some(bw) if !a.is_empty() && !b.is_empty() => Some(mmd_rbf(a, b, bw)?),
            _ => None,
        };
        Ok(MetricReport {
            extractor: a.extractor.clone(),
            n_a: a.len(),
            n_b: b.len(),
            fid: fid_v,
            kid: kid_v,
            kid_estimator: enough.then(|| if a.len() == b.len() { KidEstimator::Paired } else { KidEstimator::Unpaired }),
            kid_x1e3: kid_v.map(|k| k * 1e3),
            mmd: mmd_v,
            mmd_bandwidth: bw,
            mmd_estimator: "biased".into(),
            iou: seg.map(IouCounts::per_class).unwrap_or_default(),
            miou: seg.and_then(IouCounts::miou),
        })
    }
}
