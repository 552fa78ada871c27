//! Feature pre-processing pipeline: per-speaker mean normalization,
//! derivative features, frame splicing, LDA, MLLT and fMLLR.
//!
//! The pipeline order mean-norm -> splice -> LDA -> MLLT -> fMLLR is
//! enforced through the stage tag on `FrameMatrix`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};

use crate::corpus::FrameMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_DELTA_WINDOW: usize = 2;
pub const DEFAULT_SPLICE: usize = 7;
pub const DEFAULT_LDA_DIM: usize = 40;
/// fMLLR falls back to identity when a speaker has fewer than 10*D frames.
pub const FMLLR_MIN_FRAMES_PER_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Raw,
    MeanNormalized,
    Deltas,
    Spliced,
    Lda,
    Mllt,
    Fmllr,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Raw => "raw",
            Stage::MeanNormalized => "mean-normalized",
            Stage::Deltas => "deltas",
            Stage::Spliced => "spliced",
            Stage::Lda => "lda",
            Stage::Mllt => "mllt",
            Stage::Fmllr => "fmllr",
        };
        write!(f, "{s}")
    }
}

fn expect_stage(fm: &FrameMatrix, allowed: &[Stage]) -> Result<()> {
    if allowed.contains(&fm.stage) {
        Ok(())
    } else {
        Err(Error::StageMismatch {
            expected: allowed.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" or "),
            got: fm.stage.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Lda,
    Mllt,
    Fmllr,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    pub matrix: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub kind: TransformKind,
}

impl LinearTransform {
    pub fn identity(dim: usize, kind: TransformKind) -> Self {
        LinearTransform { matrix: Array2::eye(dim), bias: None, kind }
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Maps a single frame.
    pub fn apply_row(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut y = self.matrix.dot(x);
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }
}

/// Subtracts each speaker's mean over all of that speaker's frames.
/// Idempotent; each utterance must have a speaker id in `speaker_of`.
pub fn speaker_mean_normalize(
    features: &mut BTreeMap<String, FrameMatrix>,
    speaker_of: &BTreeMap<String, String>,
) -> Result<()> {
    let mut sums: BTreeMap<&str, (Array1<f64>, usize)> = BTreeMap::new();
    for (id, fm) in features.iter() {
        expect_stage(fm, &[Stage::Raw, Stage::MeanNormalized])?;
        let spk = speaker_of
            .get(id)
            .ok_or_else(|| Error::UnknownSpeaker(id.clone()))?;
        let entry = sums
            .entry(spk.as_str())
            .or_insert_with(|| (Array1::zeros(fm.dim()), 0));
        entry.0 += &fm.data.sum_axis(Axis(0));
        entry.1 += fm.num_frames();
    }
    let means: BTreeMap<&str, Array1<f64>> = sums
        .into_iter()
        .map(|(spk, (sum, n))| (spk, sum / n as f64))
        .collect();
    for (id, fm) in features.iter_mut() {
        let mean = &means[speaker_of[id].as_str()];
        for mut row in fm.data.rows_mut() {
            row -= mean;
        }
        fm.stage = Stage::MeanNormalized;
    }
    Ok(())
}

/// Appends regression-based delta and delta-delta coefficients computed
/// over +-`window` frames with edge replication; output dim is 3D.
pub fn add_deltas(fm: &FrameMatrix, window: usize) -> Result<FrameMatrix> {
    expect_stage(fm, &[Stage::Raw, Stage::MeanNormalized])?;
    let deltas = regression_delta(&fm.data, window);
    let ddeltas = regression_delta(&deltas, window);
    let t = fm.num_frames();
    let d = fm.dim();
    let mut out = Array2::zeros((t, 3 * d));
    for i in 0..t {
        for j in 0..d {
            out[[i, j]] = fm.data[[i, j]];
            out[[i, d + j]] = deltas[[i, j]];
            out[[i, 2 * d + j]] = ddeltas[[i, j]];
        }
    }
    Ok(FrameMatrix::with_stage(out, Stage::Deltas))
}

fn regression_delta(x: &Array2<f64>, window: usize) -> Array2<f64> {
    let t = x.nrows() as isize;
    let d = x.ncols();
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros((x.nrows(), d));
    for i in 0..t {
        for n in 1..=window as isize {
            let fwd = (i + n).clamp(0, t - 1) as usize;
            let bwd = (i - n).clamp(0, t - 1) as usize;
            for j in 0..d {
                out[[i as usize, j]] += n as f64 * (x[[fwd, j]] - x[[bwd, j]]) / denom;
            }
        }
    }
    out
}

/// Frame t becomes the concatenation of frames t-left .. t+right with
/// edge replication; output dim is (left+right+1)*D.
pub fn splice(fm: &FrameMatrix, left: usize, right: usize) -> Result<FrameMatrix> {
    expect_stage(fm, &[Stage::Raw, Stage::MeanNormalized, Stage::Fmllr])?;
    let t = fm.num_frames() as isize;
    let d = fm.dim();
    let width = left + right + 1;
    let mut out = Array2::zeros((fm.num_frames(), width * d));
    for i in 0..t {
        for (w, off) in (-(left as isize)..=right as isize).enumerate() {
            let src = (i + off).clamp(0, t - 1) as usize;
            for j in 0..d {
                out[[i as usize, w * d + j]] = fm.data[[src, j]];
            }
        }
    }
    Ok(FrameMatrix::with_stage(out, Stage::Spliced))
}

/// Applies a linear transform row-wise, advancing the pipeline stage
/// according to the transform kind.
pub fn apply_transform(fm: &FrameMatrix, t: &LinearTransform) -> Result<FrameMatrix> {
    if t.in_dim() != fm.dim() {
        return Err(Error::dims(format!(
            "transform in-dim {} != feature dim {}",
            t.in_dim(),
            fm.dim()
        )));
    }
    let next = match t.kind {
        TransformKind::Lda => {
            expect_stage(fm, &[Stage::Spliced])?;
            Stage::Lda
        }
        TransformKind::Mllt => {
            expect_stage(fm, &[Stage::Lda])?;
            Stage::Mllt
        }
        TransformKind::Fmllr => {
            expect_stage(fm, &[Stage::Mllt])?;
            Stage::Fmllr
        }
        TransformKind::Generic => fm.stage,
    };
    let mut out = fm.data.dot(&t.matrix.t());
    if let Some(b) = &t.bias {
        for mut row in out.rows_mut() {
            row += b;
        }
    }
    Ok(FrameMatrix::with_stage(out, next))
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Result of an LDA estimation: the projection and the generalized
/// eigenvalues of (between-scatter, within-scatter) it selected.
#[derive(Debug, Clone)]
pub struct LdaFit {
    pub transform: LinearTransform,
    pub eigenvalues: Vec<f64>,
}

/// Fits LDA on labeled frames. Rows of the result are the top `out_dim`
/// generalized eigenvectors of (Sb, Sw), scaled so the projected
/// within-class covariance is the identity.
pub fn lda_fit(features: &Array2<f64>, labels: &[usize], out_dim: usize) -> Result<LdaFit> {
    if features.nrows() != labels.len() {
        return Err(Error::dims("label count != frame count"));
    }
    let d = features.ncols();
    let n_classes = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("LDA needs at least 2 classes"));
    }
    // class and global means
    let mut class_mean = vec![Array1::<f64>::zeros(d); n_classes];
    for (row, &l) in features.rows().into_iter().zip(labels) {
        class_mean[l] += &row.to_owned();
    }
    for (m, &c) in class_mean.iter_mut().zip(&counts) {
        if c > 0 {
            *m /= c as f64;
        }
    }
    let n = labels.len() as f64;
    let global: Array1<f64> = features.mean_axis(Axis(0)).unwrap();

    let mut sw = DMatrix::<f64>::zeros(d, d);
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for (row, &l) in features.rows().into_iter().zip(labels) {
        let x = row.to_owned() - &class_mean[l];
        for i in 0..d {
            for j in 0..d {
                sw[(i, j)] += x[i] * x[j];
            }
        }
    }
    sw /= n;
    for (l, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let m = &class_mean[l] - &global;
        let wgt = c as f64 / n;
        for i in 0..d {
            for j in 0..d {
                sb[(i, j)] += wgt * m[i] * m[j];
            }
        }
    }
    // floor the within-class scatter diagonal before inversion
    let floor = 1e-6 * sw.trace() / d as f64;
    for i in 0..d {
        sw[(i, i)] += floor;
    }
    let chol = sw
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("within-class scatter not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("cholesky factor not invertible".into()))?;
    let m = &l_inv * sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    if out_dim > d {
        return Err(Error::invalid(format!("out_dim {out_dim} > feature dim {d}")));
    }
    let mut rows = DMatrix::<f64>::zeros(out_dim, d);
    let mut eigenvalues = Vec::with_capacity(out_dim);
    for (r, &i) in idx.iter().take(out_dim).enumerate() {
        eigenvalues.push(eig.eigenvalues[i]);
        // row = u_i^T L^{-1}; projected within-class covariance is I
        let u = eig.eigenvectors.column(i);
        let w = u.transpose() * &l_inv;
        for j in 0..d {
            rows[(r, j)] = w[(0, j)];
        }
    }
    Ok(LdaFit {
        transform: LinearTransform { matrix: from_na(&rows), bias: None, kind: TransformKind::Lda },
        eigenvalues,
    })
}

/// Occupancy-weighted full-covariance statistics for one tied state /
/// mixture component, accumulated in the current feature space.
#[derive(Debug, Clone)]
pub struct ClassScatter {
    pub occupancy: f64,
    /// Full covariance around the class mean.
    pub covariance: Array2<f64>,
}

/// Semi-tied covariance (MLLT) estimation from per-class scatters.
/// Returns the square transform and the auxiliary objective value per
/// iteration (non-decreasing).
pub fn mllt_fit(stats: &[ClassScatter], n_iters: usize) -> Result<(LinearTransform, Vec<f64>)> {
    let d = stats
        .first()
        .ok_or_else(|| Error::invalid("no MLLT statistics"))?
        .covariance
        .nrows();
    let beta: f64 = stats.iter().map(|s| s.occupancy).sum();
    if beta <= 0.0 {
        return Err(Error::invalid("zero total occupancy"));
    }
    let covs: Vec<DMatrix<f64>> = stats.iter().map(|s| to_na(&s.covariance)).collect();
    let occ: Vec<f64> = stats.iter().map(|s| s.occupancy).collect();

    let mut a = DMatrix::<f64>::identity(d, d);
    let objective = |a: &DMatrix<f64>| -> Result<f64> {
        let det = a.determinant();
        if det.abs() < 1e-300 {
            return Err(Error::Numerical("singular MLLT transform".into()));
        }
        let mut obj = beta * det.abs().ln();
        for (cov, &g) in covs.iter().zip(&occ) {
            let proj = a * cov * a.transpose();
            for i in 0..d {
                obj -= 0.5 * g * proj[(i, i)].max(1e-12).ln();
            }
        }
        Ok(obj)
    };
    let mut objectives = vec![objective(&a)?];
    for _ in 0..n_iters {
        // diagonal variances in the current transformed space
        let sigma2: Vec<Vec<f64>> = covs
            .iter()
            .map(|cov| {
                let proj = &a * cov * a.transpose();
                (0..d).map(|i| proj[(i, i)].max(1e-12)).collect()
            })
            .collect();
        for i in 0..d {
            let mut g = DMatrix::<f64>::zeros(d, d);
            for (j, cov) in covs.iter().enumerate() {
                g += cov * (occ[j] / sigma2[j][i]);
            }
            let g_inv = g
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular MLLT accumulator".into()))?;
            // cofactor row i of A
            let det = a.determinant();
            let a_inv = a
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular MLLT transform".into()))?;
            let cof: DMatrix<f64> = a_inv.transpose() * det; // cofactor matrix
            let c_i = cof.row(i).transpose();
            let cgc = (c_i.transpose() * &g_inv * &c_i)[(0, 0)];
            if cgc <= 0.0 {
                return Err(Error::Numerical("non-positive MLLT quadratic form".into()));
            }
            let scale = (beta / cgc).sqrt();
            let new_row = (&g_inv * &c_i) * scale;
            for jcol in 0..d {
                a[(i, jcol)] = new_row[jcol];
            }
        }
        let obj = objective(&a)?;
        let last = *objectives.last().unwrap();
        if obj + 1e-6 * obj.abs().max(1.0) < last {
            return Err(Error::Numerical(format!(
                "MLLT objective decreased: {last} -> {obj}"
            )));
        }
        objectives.push(obj);
    }
    Ok((
        LinearTransform { matrix: from_na(&a), bias: None, kind: TransformKind::Mllt },
        objectives,
    ))
}

/// Per-speaker fMLLR sufficient statistics in the standard row form:
/// for each output row i, k_i = sum gamma * (mu_i / sigma2_i) * xi^T and
/// G_i = sum gamma / sigma2_i * xi xi^T with xi = [x; 1].
#[derive(Debug, Clone)]
pub struct FmllrAccumulator {
    pub dim: usize,
    pub k: Vec<Array1<f64>>,
    pub g: Vec<Array2<f64>>,
    pub beta: f64,
}

impl FmllrAccumulator {
    pub fn new(dim: usize) -> Self {
        FmllrAccumulator {
            dim,
            k: vec![Array1::zeros(dim + 1); dim],
            g: vec![Array2::zeros((dim + 1, dim + 1)); dim],
            beta: 0.0,
        }
    }

    /// Adds one frame observed under a diagonal Gaussian with
    /// responsibility `gamma`.
    pub fn add_frame(&mut self, x: &Array1<f64>, gamma: f64, mean: &Array1<f64>, var: &Array1<f64>) {
        let d = self.dim;
        let mut xi = Array1::zeros(d + 1);
        xi.slice_mut(ndarray::s![..d]).assign(x);
        xi[d] = 1.0;
        for i in 0..d {
            let inv = 1.0 / var[i];
            let w_k = gamma * mean[i] * inv;
            let w_g = gamma * inv;
            for p in 0..=d {
                self.k[i][p] += w_k * xi[p];
                for q in 0..=d {
                    self.g[i][[p, q]] += w_g * xi[p] * xi[q];
                }
            }
        }
        self.beta += gamma;
    }

    pub fn merge(&mut self, other: &FmllrAccumulator) {
        for i in 0..self.dim {
            self.k[i] += &other.k[i];
            self.g[i] += &other.g[i];
        }
        self.beta += other.beta;
    }
}

/// The fMLLR auxiliary objective for W = [A|b]:
/// beta*log|det A| + sum_i w_i k_i^T - 0.5 sum_i w_i G_i w_i^T.
fn fmllr_objective(w: &DMatrix<f64>, acc: &FmllrAccumulator) -> f64 {
    let d = acc.dim;
    let a = w.view((0, 0), (d, d)).into_owned();
    let mut obj = acc.beta * a.determinant().abs().ln();
    for i in 0..d {
        let wi = w.row(i).transpose();
        let ki = DMatrix::from_fn(d + 1, 1, |p, _| acc.k[i][p]);
        let gi = to_na(&acc.g[i]);
        obj += (wi.transpose() * &ki)[(0, 0)];
        obj -= 0.5 * (wi.transpose() * gi * &wi)[(0, 0)];
    }
    obj
}

/// Estimates an affine per-speaker transform [A|b] by iterative row-wise
/// updates including the log-determinant term. Returns the transform and
/// the per-iteration auxiliary objective (non-decreasing). Falls back to
/// identity when the speaker has fewer than 10*D frames of occupancy.
pub fn fmllr_fit(acc: &FmllrAccumulator, n_iters: usize) -> Result<(LinearTransform, Vec<f64>)> {
    let d = acc.dim;
    if acc.beta < (FMLLR_MIN_FRAMES_PER_DIM * d) as f64 {
        let mut t = LinearTransform::identity(d, TransformKind::Fmllr);
        t.bias = Some(Array1::zeros(d));
        return Ok((t, vec![]));
    }
    let mut w = DMatrix::<f64>::zeros(d, d + 1);
    for i in 0..d {
        w[(i, i)] = 1.0;
    }
    let g_inv: Vec<DMatrix<f64>> = acc
        .g
        .iter()
        .map(|g| {
            to_na(g)
                .try_inverse()
                .ok_or_else(|| Error::Numerical("ill-conditioned fMLLR accumulator".into()))
        })
        .collect::<Result<_>>()?;
    let mut objectives = vec![fmllr_objective(&w, acc)];
    for _ in 0..n_iters {
        for i in 0..d {
            let a = w.view((0, 0), (d, d)).into_owned();
            let det = a.determinant();
            let a_inv = a
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular fMLLR transform".into()))?;
            let cof = a_inv.transpose() * det;
            // extended cofactor vector [cof_i; 0]
            let mut c = DMatrix::<f64>::zeros(d + 1, 1);
            for j in 0..d {
                c[(j, 0)] = cof[(i, j)];
            }
            let ki = DMatrix::from_fn(d + 1, 1, |p, _| acc.k[i][p]);
            let cg = &g_inv[i] * &c;
            let kg = &g_inv[i] * &ki;
            let q_cc = (c.transpose() * &cg)[(0, 0)];
            let q_ck = (c.transpose() * &kg)[(0, 0)];
            if q_cc <= 0.0 {
                return Err(Error::Numerical("non-positive fMLLR quadratic form".into()));
            }
            // alpha solves q_cc*alpha^2 + q_ck*alpha - beta = 0; the
            // positive root keeps the row-cofactor inner product (and so
            // det A) positive, avoiding the reflected optimum
            let disc = (q_ck * q_ck + 4.0 * q_cc * acc.beta).sqrt();
            let alpha = (-q_ck + disc) / (2.0 * q_cc);
            let row = (&cg * alpha) + &kg;
            for j in 0..=d {
                w[(i, j)] = row[(j, 0)];
            }
        }
        let obj = fmllr_objective(&w, acc);
        let last = *objectives.last().unwrap();
        if obj + 1e-6 * obj.abs().max(1.0) < last {
            return Err(Error::Numerical(format!(
                "fMLLR objective decreased: {last} -> {obj}"
            )));
        }
        objectives.push(obj);
    }
    let matrix = Array2::from_shape_fn((d, d), |(i, j)| w[(i, j)]);
    let bias = Array1::from_shape_fn(d, |i| w[(i, d)]);
    Ok((
        LinearTransform { matrix, bias: Some(bias), kind: TransformKind::Fmllr },
        objectives,
    ))
}

/// Scales each dimension to unit variance, estimated globally over all
/// frames. Returns the inverse standard deviations used.
pub fn variance_normalize_global(features: &mut BTreeMap<String, FrameMatrix>) -> Result<Array1<f64>> {
    let d = features
        .values()
        .next()
        .ok_or_else(|| Error::invalid("no features"))?
        .dim();
    let mut sum = Array1::<f64>::zeros(d);
    let mut sq = Array1::<f64>::zeros(d);
    let mut n = 0usize;
    for fm in features.values() {
        for row in fm.data.rows() {
            for j in 0..d {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
        }
        n += fm.num_frames();
    }
    let mut inv_std = Array1::zeros(d);
    for j in 0..d {
        let mean = sum[j] / n as f64;
        let var = (sq[j] / n as f64 - mean * mean).max(1e-12);
        inv_std[j] = 1.0 / var.sqrt();
    }
    for fm in features.values_mut() {
        for mut row in fm.data.rows_mut() {
            for j in 0..d {
                row[j] *= inv_std[j];
            }
        }
    }
    Ok(inv_std)
}

/// Persists transforms in the matrix container. Bias vectors, when
/// present, are stored under `<key>__bias`.
pub fn write_transforms(map: &BTreeMap<String, LinearTransform>, path: &Path) -> Result<()> {
    let mut records = BTreeMap::new();
    for (key, t) in map {
        records.insert(key.clone(), t.matrix.clone());
        if let Some(b) = &t.bias {
            let row = b
                .clone()
                .into_shape_with_order((1, b.len()))
                .expect("row vector");
            records.insert(format!("{key}__bias"), row);
        }
    }
    crate::io::write_archive(path, &records)
}

pub fn read_transforms(path: &Path, kind: TransformKind) -> Result<BTreeMap<String, LinearTransform>> {
    let records = crate::io::read_archive(path)?;
    let mut out = BTreeMap::new();
    for (key, mat) in &records {
        if key.ends_with("__bias") {
            continue;
        }
        let bias = records
            .get(&format!("{key}__bias"))
            .map(|b| b.row(0).to_owned());
        out.insert(key.clone(), LinearTransform { matrix: mat.clone(), bias, kind });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw(data: Array2<f64>) -> FrameMatrix {
        FrameMatrix::raw(data)
    }

    #[test]
    fn mean_normalize_single_speaker() {
        let mut feats = BTreeMap::new();
        feats.insert("u1".to_string(), raw(arr2(&[[1.0], [3.0]])));
        let speakers = BTreeMap::from([("u1".to_string(), "s1".to_string())]);
        speaker_mean_normalize(&mut feats, &speakers).unwrap();
        assert_eq!(feats["u1"].data, arr2(&[[-1.0], [1.0]]));
        assert_eq!(feats["u1"].stage, Stage::MeanNormalized);
    }

    #[test]
    fn mean_normalize_two_speakers_zero_mean() {
        let mut feats = BTreeMap::new();
        feats.insert("a1".to_string(), raw(arr2(&[[5.0, 1.0], [7.0, 3.0]])));
        feats.insert("b1".to_string(), raw(arr2(&[[-3.0, 0.0], [-1.0, 2.0]])));
        let speakers = BTreeMap::from([
            ("a1".to_string(), "a".to_string()),
            ("b1".to_string(), "b".to_string()),
        ]);
        speaker_mean_normalize(&mut feats, &speakers).unwrap();
        for fm in feats.values() {
            let m = fm.data.mean_axis(Axis(0)).unwrap();
            assert!(m.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn mean_normalize_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut feats = BTreeMap::new();
        feats.insert("u".to_string(), raw(Array2::from_shape_fn((20, 3), |_| rng.gen::<f64>())));
        let speakers = BTreeMap::from([("u".to_string(), "s".to_string())]);
        speaker_mean_normalize(&mut feats, &speakers).unwrap();
        let once = feats["u"].clone();
        speaker_mean_normalize(&mut feats, &speakers).unwrap();
        for (a, b) in once.data.iter().zip(feats["u"].data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_normalize_unknown_speaker() {
        let mut feats = BTreeMap::new();
        feats.insert("u".to_string(), raw(Array2::zeros((2, 2))));
        assert!(matches!(
            speaker_mean_normalize(&mut feats, &BTreeMap::new()),
            Err(Error::UnknownSpeaker(_))
        ));
    }

    #[test]
    fn deltas_constant_sequence() {
        let fm = raw(Array2::from_elem((10, 2), 3.0));
        let out = add_deltas(&fm, 2).unwrap();
        assert_eq!(out.dim(), 6);
        for i in 0..10 {
            for j in 2..6 {
                assert!(out.data[[i, j]].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deltas_dimension_arithmetic() {
        let fm = raw(Array2::zeros((5, 44)));
        assert_eq!(add_deltas(&fm, 2).unwrap().dim(), 132);
    }

    #[test]
    fn deltas_linear_ramp() {
        let t = 20;
        let fm = raw(Array2::from_shape_fn((t, 1), |(i, _)| i as f64));
        let out = add_deltas(&fm, 2).unwrap();
        for i in 4..t - 4 {
            assert!((out.data[[i, 1]] - 1.0).abs() < 1e-10, "delta at {i}");
            assert!(out.data[[i, 2]].abs() < 1e-10, "delta-delta at {i}");
        }
    }

    #[test]
    fn splice_dims_and_edges() {
        let fm = FrameMatrix::with_stage(Array2::zeros((12, 40)), Stage::MeanNormalized);
        let out = splice(&fm, 7, 7).unwrap();
        assert_eq!(out.dim(), 600);
        assert_eq!(out.num_frames(), 12);
        // single frame replicates itself
        let one = FrameMatrix::with_stage(arr2(&[[1.0, 2.0]]), Stage::MeanNormalized);
        let sp = splice(&one, 7, 7).unwrap();
        assert_eq!(sp.dim(), 30);
        for w in 0..15 {
            assert_eq!(sp.data[[0, 2 * w]], 1.0);
            assert_eq!(sp.data[[0, 2 * w + 1]], 2.0);
        }
    }

    #[test]
    fn apply_identity_and_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fm = raw(Array2::from_shape_fn((6, 3), |_| rng.gen::<f64>()));
        let id = LinearTransform::identity(3, TransformKind::Generic);
        let out = apply_transform(&fm, &id).unwrap();
        assert_eq!(out.data, fm.data);

        let a = LinearTransform {
            matrix: Array2::from_shape_fn((3, 3), |_| rng.gen::<f64>()),
            bias: None,
            kind: TransformKind::Generic,
        };
        let b = LinearTransform {
            matrix: Array2::from_shape_fn((2, 3), |_| rng.gen::<f64>()),
            bias: None,
            kind: TransformKind::Generic,
        };
        let seq = apply_transform(&apply_transform(&fm, &a).unwrap(), &b).unwrap();
        let ba = LinearTransform {
            matrix: b.matrix.dot(&a.matrix),
            bias: None,
            kind: TransformKind::Generic,
        };
        let direct = apply_transform(&fm, &ba).unwrap();
        for (x, y) in seq.data.iter().zip(direct.data.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn pipeline_order_enforced() {
        let fm = raw(Array2::zeros((4, 600)));
        let lda = LinearTransform {
            matrix: Array2::zeros((40, 600)),
            bias: None,
            kind: TransformKind::Lda,
        };
        // LDA on raw (unspliced) features is rejected
        assert!(matches!(
            apply_transform(&fm, &lda),
            Err(Error::StageMismatch { .. })
        ));
        let spliced = FrameMatrix::with_stage(Array2::zeros((4, 600)), Stage::Spliced);
        assert!(apply_transform(&spliced, &lda).is_ok());
        // fMLLR before MLLT is rejected
        let after_lda = apply_transform(&spliced, &lda).unwrap();
        let fmllr = LinearTransform {
            matrix: Array2::eye(40),
            bias: Some(Array1::zeros(40)),
            kind: TransformKind::Fmllr,
        };
        assert!(apply_transform(&after_lda, &fmllr).is_err());
    }

    fn two_blob_data(sep: f64, n: usize, d: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((2 * n, d));
        let mut labels = Vec::with_capacity(2 * n);
        for i in 0..2 * n {
            let class = i % 2;
            for j in 0..d {
                x[[i, j]] = rng.gen::<f64>() - 0.5;
            }
            // separation along axis 0
            x[[i, 0]] += if class == 0 { -sep / 2.0 } else { sep / 2.0 };
            labels.push(class);
        }
        (x, labels)
    }

    #[test]
    fn lda_two_blobs_finds_separating_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, labels) = two_blob_data(4.0, 10_000, 10, &mut rng);
        let fit = lda_fit(&x, &labels, 1).unwrap();
        let row = fit.transform.matrix.row(0);
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = (row[0] / norm).abs();
        // within 3 degrees of the separating axis
        assert!(cos > (3f64.to_radians()).cos(), "cos={cos}");
    }

    #[test]
    fn lda_shuffled_labels_low_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, labels) = two_blob_data(4.0, 300, 10, &mut rng);
        let fit_sep = lda_fit(&x, &labels, 1).unwrap();
        let mut shuffled = labels.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        let fit_rand = lda_fit(&x, &shuffled, 1).unwrap();
        assert!(fit_rand.eigenvalues[0] < fit_sep.eigenvalues[0] / 10.0);
    }

    #[test]
    fn lda_whitens_within_class_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, labels) = two_blob_data(3.0, 400, 6, &mut rng);
        let fit = lda_fit(&x, &labels, 3).unwrap();
        let fm = FrameMatrix::with_stage(x.clone(), Stage::Spliced);
        let proj = apply_transform(&fm, &fit.transform).unwrap();
        // compute projected within-class covariance
        let mut mean = [Array1::<f64>::zeros(3), Array1::<f64>::zeros(3)];
        let mut count = [0usize; 2];
        for (row, &l) in proj.data.rows().into_iter().zip(&labels) {
            mean[l] += &row.to_owned();
            count[l] += 1;
        }
        for l in 0..2 {
            mean[l] /= count[l] as f64;
        }
        let mut cov = Array2::<f64>::zeros((3, 3));
        for (row, &l) in proj.data.rows().into_iter().zip(&labels) {
            let c = row.to_owned() - &mean[l];
            for i in 0..3 {
                for j in 0..3 {
                    cov[[i, j]] += c[i] * c[j];
                }
            }
        }
        cov /= labels.len() as f64;
        for i in 0..3 {
            assert!((cov[[i, i]] - 1.0).abs() < 1e-3, "diag {} = {}", i, cov[[i, i]]);
        }
    }

    #[test]
    fn lda_single_class_errors() {
        let x = Array2::zeros((10, 4));
        let labels = vec![0usize; 10];
        assert!(lda_fit(&x, &labels, 1).is_err());
    }

    fn diag_class_stats(rotation: Option<&Array2<f64>>, rng: &mut ChaCha8Rng) -> Vec<ClassScatter> {
        // several classes with distinct diagonal covariances
        let d = 2;
        let mut stats = Vec::new();
        for c in 0..4 {
            let vars: Vec<f64> = (0..d).map(|j| 0.2 + rng.gen::<f64>() * (1.0 + c as f64 + j as f64)).collect();
            let mut cov = Array2::zeros((d, d));
            for j in 0..d {
                cov[[j, j]] = vars[j];
            }
            if let Some(r) = rotation {
                cov = r.dot(&cov).dot(&r.t());
            }
            stats.push(ClassScatter { occupancy: 100.0, covariance: cov });
        }
        stats
    }

    #[test]
    fn mllt_diagonal_data_stays_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stats = diag_class_stats(None, &mut rng);
        let (_t, obj) = mllt_fit(&stats, 10).unwrap();
        let gain = obj.last().unwrap() - obj.first().unwrap();
        assert!(gain.abs() < 1e-6, "gain {gain}");
    }

    #[test]
    fn mllt_objective_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let theta = 0.6f64;
        let rot = arr2(&[[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]);
        let stats = diag_class_stats(Some(&rot), &mut rng);
        let (_t, obj) = mllt_fit(&stats, 15).unwrap();
        for w in obj.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn mllt_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = 0.6f64;
        let rot = arr2(&[[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]);
        let stats = diag_class_stats(Some(&rot), &mut rng);
        let (t, _obj) = mllt_fit(&stats, 30).unwrap();
        // A * R should be a signed permutation (within 2 degrees)
        let prod = t.matrix.dot(&rot);
        // normalize rows, check each row is within 2 deg of an axis
        for i in 0..2 {
            let row = prod.row(i);
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let max_abs = row.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let cos = max_abs / norm;
            assert!(cos > (2f64.to_radians()).cos(), "row {i}: cos {cos}");
        }
    }

    /// Builds fMLLR stats for frames drawn from a single Gaussian model
    /// after shifting the data by `shift`.
    fn fmllr_shift_acc(shift: &Array1<f64>, n: usize, rng: &mut ChaCha8Rng) -> FmllrAccumulator {
        let d = shift.len();
        let mean = Array1::from_shape_fn(d, |j| j as f64 * 0.5);
        let var: Array1<f64> = Array1::from_elem(d, 0.5);
        let mut acc = FmllrAccumulator::new(d);
        for _ in 0..n {
            let x = Array1::from_shape_fn(d, |j| {
                mean[j] + gauss(rng) * var[j].sqrt()
            }) + shift;
            acc.add_frame(&x, 1.0, &mean, &var);
        }
        acc
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn fmllr_recovers_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 3;
        let shift = Array1::from_elem(d, 1.0 / (d as f64).sqrt()); // magnitude 1.0
        let acc = fmllr_shift_acc(&shift, 2000, &mut rng);
        let (t, obj) = fmllr_fit(&acc, 10).unwrap();
        assert!(!obj.is_empty());
        // estimated b should be about -shift, A about identity
        let b = t.bias.as_ref().unwrap();
        let err: f64 = b
            .iter()
            .zip(shift.iter())
            .map(|(bi, si)| (bi + si).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 0.05, "bias error {err}");
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((t.matrix[[i, j]] - expect).abs() < 0.1);
            }
        }
    }

    #[test]
    fn fmllr_null_case_small_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let shift = Array1::zeros(2);
        let acc = fmllr_shift_acc(&shift, 50_000, &mut rng);
        let (_t, obj) = fmllr_fit(&acc, 10).unwrap();
        let gain_per_frame = (obj.last().unwrap() - obj.first().unwrap()) / acc.beta;
        assert!(gain_per_frame < 1e-4, "gain/frame {gain_per_frame}");
    }

    #[test]
    fn fmllr_objective_nondecreasing_and_improves_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shift = Array1::from_vec(vec![0.7, -0.4, 0.2]);
        let acc = fmllr_shift_acc(&shift, 3000, &mut rng);
        let (_t, obj) = fmllr_fit(&acc, 10).unwrap();
        for w in obj.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }
        // ML ascent: final objective at least the identity objective
        assert!(obj.last().unwrap() >= obj.first().unwrap());
    }

    #[test]
    fn fmllr_too_few_frames_falls_back_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shift = Array1::from_elem(4, 1.0);
        let acc = fmllr_shift_acc(&shift, 10, &mut rng);
        let (t, obj) = fmllr_fit(&acc, 10).unwrap();
        assert!(obj.is_empty());
        assert_eq!(t.matrix, Array2::eye(4));
    }

    #[test]
    fn transforms_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut map = BTreeMap::new();
        map.insert(
            "spk00".to_string(),
            LinearTransform {
                matrix: Array2::from_shape_fn((3, 3), |_| rng.gen::<f64>()),
                bias: Some(Array1::from_shape_fn(3, |_| rng.gen::<f64>())),
                kind: TransformKind::Fmllr,
            },
        );
        map.insert(
            "lda".to_string(),
            LinearTransform {
                matrix: Array2::from_shape_fn((2, 5), |_| rng.gen::<f64>()),
                bias: None,
                kind: TransformKind::Fmllr,
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vlf");
        write_transforms(&map, &path).unwrap();
        let back = read_transforms(&path, TransformKind::Fmllr).unwrap();
        assert_eq!(map, back);
    }
}
