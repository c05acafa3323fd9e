//! Linear semantic autoencoder: a principal-component model that maps
//! images to a `d`-dimensional latent, synthesizes images back, and
//! projects arbitrary images onto the learned appearance subspace.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Grid, Image, RealMap};

/// Eigenvalues below this are treated as rank deficiency.
pub const MIN_EIGENVALUE: f64 = 1e-12;

const MAGIC: &[u8; 4] = b"HSLM";
const FORMAT_VERSION: u32 = 1;

/// Point in the semantic latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Latent(Vec<f64>);

impl Latent {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("latent values must be finite".into()));
        }
        Ok(Latent(values))
    }

    pub fn zeros(d: usize) -> Self {
        Latent(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// `self + scale * direction`
    pub fn offset(&self, direction: &[f64], scale: f64) -> Latent {
        Latent(self.0.iter().zip(direction).map(|(z, n)| z + scale * n).collect())
    }
}

/// Encoder/decoder pair standing in for a generative autoencoder.
///
/// `project` is the manifold projection used by the occlusion step. Callers
/// re-encode the projected image rather than reuse the encoder output, which
/// matters for any backend where decode∘encode is not idempotent.
pub trait SemanticAutoencoder: Sync {
    fn latent_dim(&self) -> usize;
    fn image_dims(&self) -> (usize, usize);
    fn encode(&self, img: &Image) -> Result<Latent>;
    fn decode(&self, z: &Latent) -> Result<Image>;

    fn project(&self, img: &Image) -> Result<(Image, Latent)> {
        let z = self.encode(img)?;
        Ok((self.decode(&z)?, z))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    width: usize,
    height: usize,
    mean: Vec<f64>,
    /// `d` orthonormal rows, each of length `width * height`.
    basis: Vec<Vec<f64>>,
}

impl LatentModel {
    /// Principal-component fit. Uses the `n x n` Gram matrix when the pixel
    /// count exceeds the corpus size, the `p x p` covariance otherwise.
    pub fn fit(corpus: &[Image], d: usize) -> Result<Self> {
        let n = corpus.len();
        if d < 2 || d + 1 > n {
            return Err(Error::InvalidArgument(format!(
                "latent dimension {d} must satisfy 2 <= d <= corpus size - 1 ({})",
                n.saturating_sub(1)
            )));
        }
        let (w, h) = corpus[0].dims();
        if let Some(bad) = corpus.iter().find(|img| img.dims() != (w, h)) {
            return Err(Error::dims((w, h), bad.dims()));
        }
        let p = w * h;

        let mut mean = vec![0.0; p];
        for img in corpus {
            for (m, v) in mean.iter_mut().zip(img.pixels()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, p, |i, j| corpus[i].pixels()[j] - mean[j]);
        let denom = (n - 1) as f64;

        let mut basis = Vec::with_capacity(d);
        if p > n {
            let gram = &centered * centered.transpose();
            let (values, vectors) = sorted_eigen(gram);
            for (k, &value) in values.iter().enumerate().take(d) {
                let lambda = value / denom;
                if lambda < MIN_EIGENVALUE {
                    return Err(Error::InsufficientRank {
                        index: k,
                        eigenvalue: lambda,
                    });
                }
                let v = centered.transpose() * vectors.column(k);
                basis.push(v.iter().copied().collect::<Vec<f64>>());
            }
        } else {
            let cov = centered.transpose() * &centered / denom;
            let (values, vectors) = sorted_eigen(cov);
            for (k, &value) in values.iter().enumerate().take(d) {
                if value < MIN_EIGENVALUE {
                    return Err(Error::InsufficientRank {
                        index: k,
                        eigenvalue: value,
                    });
                }
                basis.push(vectors.column(k).iter().copied().collect());
            }
        }
        orthonormalize(&mut basis)?;
        for row in basis.iter_mut() {
            fix_sign(row);
        }
        Ok(Self {
            width: w,
            height: h,
            mean,
            basis,
        })
    }

    pub fn from_parts(width: usize, height: usize, mean: Vec<f64>, basis: Vec<Vec<f64>>) -> Result<Self> {
        let p = width * height;
        if mean.len() != p {
            return Err(Error::len(p, mean.len()));
        }
        if let Some(row) = basis.iter().find(|r| r.len() != p) {
            return Err(Error::len(p, row.len()));
        }
        Ok(Self {
            width,
            height,
            mean,
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.dims() != (self.width, self.height) {
            return Err(Error::dims((self.width, self.height), img.dims()));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Latent) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::len(self.dim(), z.dim()));
        }
        Ok(())
    }

    /// `mean + sum_i z_i * basis_i` without clamping.
    pub fn synthesize(&self, z: &Latent) -> Result<RealMap> {
        self.check_latent(z)?;
        let mut out = self.mean.clone();
        for (row, &zi) in self.basis.iter().zip(z.values()) {
            for (o, b) in out.iter_mut().zip(row) {
                *o += zi * b;
            }
        }
        Grid::from_vec(self.width, self.height, out)
    }

    /// Image-space direction of a latent-space direction.
    pub fn image_direction(&self, direction: &[f64]) -> Result<RealMap> {
        if direction.len() != self.dim() {
            return Err(Error::len(self.dim(), direction.len()));
        }
        let mut out = vec![0.0; self.mean.len()];
        for (row, &c) in self.basis.iter().zip(direction) {
            for (o, b) in out.iter_mut().zip(row) {
                *o += c * b;
            }
        }
        Grid::from_vec(self.width, self.height, out)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        for v in [FORMAT_VERSION, self.dim() as u32, self.width as u32, self.height as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in self.mean.iter().chain(self.basis.iter().flatten()) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("latent model", "bad magic"));
        }
        let mut word = || -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = word()?;
        if version != FORMAT_VERSION {
            return Err(Error::format("latent model", format!("unsupported version {version}")));
        }
        let (d, w, h) = (word()? as usize, word()? as usize, word()? as usize);
        let p = w * h;
        let mut buf = vec![0u8; 8 * p * (d + 1)];
        input.read_exact(&mut buf)?;
        let mut values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mean: Vec<f64> = values.by_ref().take(p).collect();
        let basis = (0..d).map(|_| values.by_ref().take(p).collect()).collect();
        Self::from_parts(w, h, mean, basis)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl SemanticAutoencoder for LatentModel {
    fn latent_dim(&self) -> usize {
        self.dim()
    }

    fn image_dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn encode(&self, img: &Image) -> Result<Latent> {
        self.check_image(img)?;
        let centered: Vec<f64> = img.pixels().iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(Latent(
            self.basis
                .iter()
                .map(|row| row.iter().zip(&centered).map(|(b, c)| b * c).sum())
                .collect(),
        ))
    }

    fn decode(&self, z: &Latent) -> Result<Image> {
        Ok(Image::from_clamped(self.synthesize(z)?))
    }
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Two passes of modified Gram-Schmidt.
fn orthonormalize(rows: &mut [Vec<f64>]) -> Result<()> {
    for _ in 0..2 {
        for i in 0..rows.len() {
            let (done, rest) = rows.split_at_mut(i);
            let row = &mut rest[0];
            for prev in done.iter() {
                let proj: f64 = prev.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                row.iter_mut().zip(prev).for_each(|(r, p)| *r -= proj * p);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::InsufficientRank {
                    index: i,
                    eigenvalue: 0.0,
                });
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(())
}

/// Flips the row so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(row: &mut [f64]) {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        row.iter_mut().for_each(|v| *v = -*v);
    }
}
