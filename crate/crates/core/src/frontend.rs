//! Appearance feature extraction: orthonormal 2-D DCT with zigzag
//! truncation, and PCA Eigenlips.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Frames, Utterance};
use crate::error::{Error, Result};

pub const DEFAULT_DCT_COEFFS: usize = 44;
pub const DEFAULT_PCA_DIMS: usize = 30;
pub const DEFAULT_PCA_IMAGES_PER_UTT: usize = 25;

/// JPEG-style zigzag traversal of an R x C grid: anti-diagonal sweeps of
/// alternating direction starting at (0,0). The diagonal index r+c is
/// non-decreasing along the list, so low frequencies come first.
pub fn zigzag_order(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(rows * cols);
    for s in 0..rows + cols - 1 {
        if s % 2 == 0 {
            // up-right sweep
            let r0 = s.min(rows - 1);
            let mut r = r0 as isize;
            let mut c = (s - r0) as isize;
            while r >= 0 && (c as usize) < cols {
                out.push((r as usize, c as usize));
                r -= 1;
                c += 1;
            }
        } else {
            // down-left sweep
            let c0 = s.min(cols - 1);
            let mut c = c0 as isize;
            let mut r = (s - c0) as isize;
            while c >= 0 && (r as usize) < rows {
                out.push((r as usize, c as usize));
                r += 1;
                c -= 1;
            }
        }
    }
    out
}

/// Orthonormal DCT-II basis matrix of size n x n; row k is the k-th basis
/// function, so coefficients = B x (signal).
pub fn dct_basis(n: usize) -> Array2<f64> {
    let mut b = Array2::zeros((n, n));
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..n {
        for i in 0..n {
            let scale = if k == 0 { norm0 } else { norm };
            b[[k, i]] = scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    b
}

/// Full orthonormal 2-D DCT-II coefficient matrix of an image.
pub fn dct2(image: &Array2<f64>) -> Array2<f64> {
    let bh = dct_basis(image.nrows());
    let bw = dct_basis(image.ncols());
    bh.dot(image).dot(&bw.t())
}

/// Inverse of [`dct2`], exact by orthonormality.
pub fn idct2(coeffs: &Array2<f64>) -> Array2<f64> {
    let bh = dct_basis(coeffs.nrows());
    let bw = dct_basis(coeffs.ncols());
    bh.t().dot(coeffs).dot(&bw)
}

/// First `n_coeffs` 2-D DCT coefficients in zigzag order.
pub fn dct2_features(image: &Array2<f64>, n_coeffs: usize) -> Result<Array1<f64>> {
    let (h, w) = image.dim();
    if n_coeffs > h * w {
        return Err(Error::invalid(format!("n_coeffs {n_coeffs} > H*W {}", h * w)));
    }
    let coeffs = dct2(image);
    let order = zigzag_order(h, w);
    Ok(Array1::from_iter(order.into_iter().take(n_coeffs).map(|(r, c)| coeffs[[r, c]])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenbasis {
    pub mean: Array1<f64>,
    /// k x D, rows orthonormal, sorted by descending eigenvalue.
    pub components: Array2<f64>,
    pub eigenvalues: Array1<f64>,
}

impl Eigenbasis {
    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }
}

/// Fits PCA on flattened images via eigendecomposition of the sample
/// covariance. Component signs are normalized so each row's
/// largest-magnitude entry is positive.
pub fn pca_fit(images: &[Array1<f64>], k: usize) -> Result<Eigenbasis> {
    if images.len() < k + 1 {
        return Err(Error::invalid(format!(
            "need at least {} samples for k={k}, got {}",
            k + 1,
            images.len()
        )));
    }
    let d = images[0].len();
    if k > d {
        return Err(Error::invalid(format!("k {k} > dimension {d}")));
    }
    let n = images.len();
    let mut mean = Array1::<f64>::zeros(d);
    for img in images {
        if img.len() != d {
            return Err(Error::dims("PCA samples have inconsistent dimension"));
        }
        mean += img;
    }
    mean /= n as f64;

    // sample covariance (1/(n-1))
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for img in images {
        let c = DVector::from_iterator(d, img.iter().zip(mean.iter()).map(|(x, m)| x - m));
        cov.syger(1.0 / (n as f64 - 1.0), &c, &c, 1.0);
    }
    // syger fills the lower triangle; mirror it
    for i in 0..d {
        for j in i + 1..d {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = cov.symmetric_eigen();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut components = Array2::zeros((k, d));
    let mut eigenvalues = Array1::zeros(k);
    for (row, &i) in idx.iter().take(k).enumerate() {
        eigenvalues[row] = eig.eigenvalues[i].max(0.0);
        let col = eig.eigenvectors.column(i);
        // sign normalization for determinism
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                sign = if v >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        for j in 0..d {
            components[[row, j]] = col[j] * sign;
        }
    }
    Ok(Eigenbasis { mean, components, eigenvalues })
}

/// components * (image - mean)
pub fn pca_project(image: &Array1<f64>, basis: &Eigenbasis) -> Result<Array1<f64>> {
    if image.len() != basis.dim() {
        return Err(Error::dims(format!(
            "image dim {} != basis dim {}",
            image.len(),
            basis.dim()
        )));
    }
    let centered = image - &basis.mean;
    Ok(basis.components.dot(&centered))
}

/// mean + componentsᵀ * code
pub fn pca_reconstruct(code: &Array1<f64>, basis: &Eigenbasis) -> Array1<f64> {
    &basis.mean + &basis.components.t().dot(code)
}

/// Samples up to `per_utterance` frames from each training utterance,
/// uniformly without replacement, deterministically from `seed`.
pub fn sample_pca_training_images(
    corpus: &Corpus,
    per_utterance: usize,
    seed: u64,
) -> Result<Vec<Array1<f64>>> {
    let train = corpus.train_utterances();
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for utt in train {
        let flat = utterance_pixels(utt)?;
        let t = flat.nrows();
        let mut idx: Vec<usize> = (0..t).collect();
        if t > per_utterance {
            idx.shuffle(&mut rng);
            idx.truncate(per_utterance);
            idx.sort_unstable();
        }
        for i in idx {
            out.push(flat.row(i).to_owned());
        }
    }
    Ok(out)
}

fn utterance_pixels(utt: &Utterance) -> Result<Array2<f64>> {
    match &utt.frames {
        Frames::Roi(roi) => Ok(roi.flatten()),
        Frames::Feat(f) => Ok(f.data.clone()),
    }
}

/// Persists an eigenbasis in the binary matrix container under the keys
/// "mean", "components" and "eigenvalues".
pub fn write_eigenbasis(basis: &Eigenbasis, path: &Path) -> Result<()> {
    let mut map = BTreeMap::new();
    let d = basis.dim();
    map.insert(
        "mean".to_string(),
        basis.mean.clone().into_shape_with_order((1, d)).expect("row vector"),
    );
    map.insert("components".to_string(), basis.components.clone());
    let k = basis.k();
    map.insert(
        "eigenvalues".to_string(),
        basis.eigenvalues.clone().into_shape_with_order((1, k)).expect("row vector"),
    );
    crate::io::write_archive(path, &map)
}

pub fn read_eigenbasis(path: &Path) -> Result<Eigenbasis> {
    let map = crate::io::read_archive(path)?;
    let get = |k: &str| {
        map.get(k)
            .cloned()
            .ok_or_else(|| Error::MalformedArchive(format!("missing record {k}")))
    };
    let mean = get("mean")?.row(0).to_owned();
    let components = get("components")?;
    let eigenvalues = get("eigenvalues")?.row(0).to_owned();
    Ok(Eigenbasis { mean, components, eigenvalues })
}
