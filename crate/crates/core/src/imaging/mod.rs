//! 2D raster primitives: intensity images, binary masks, instance labelings,
//! and the operations the segmentation pipeline builds on.

mod components;
mod morphology;
pub mod pnm;
mod ssim;
mod threshold;

pub use components::{connected_components, filter_small_components, Connectivity};
pub use morphology::{dilate, erode, morphology, MorphOp};
pub use ssim::{ssim, SSIM_WINDOW};
pub use threshold::{mean_threshold, otsu_thresholds, OTSU_BINS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2D grid of arbitrary cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::len(width * height, data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Unconstrained real-valued map (residuals, unclamped syntheses).
pub type RealMap = Grid<f64>;

/// Intensity image with every pixel finite and inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid<f64>", into = "Grid<f64>")]
pub struct Image(Grid<f64>);

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        Self::try_from(Grid::from_vec(width, height, pixels)?)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Clamps every value into `[0, 1]`; NaN becomes 0.
    pub fn from_clamped(map: RealMap) -> Self {
        Image(map.map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::try_from(Grid::from_fn(width, height, f))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.0.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        *self.0.get(x, y)
    }

    pub fn into_map(self) -> RealMap {
        self.0
    }

    /// Rounds to the 16-bit grid used by the PGM serialization.
    pub fn quantize_u16(&self) -> Image {
        Image(self.0.map(|&v| (v * 65535.0).round() / 65535.0))
    }
}

impl TryFrom<Grid<f64>> for Image {
    type Error = Error;

    fn try_from(grid: Grid<f64>) -> Result<Self> {
        if let Some(bad) = grid.data.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Image(grid))
    }
}

impl From<Image> for Grid<f64> {
    fn from(img: Image) -> Self {
        img.0
    }
}

/// Boolean pixel mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask(Grid<bool>);

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask(Grid::filled(width, height, false))
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask(Grid::filled(width, height, true))
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        Ok(BinaryMask(Grid::from_vec(width, height, bits)?))
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> bool) -> Self {
        BinaryMask(Grid::from_fn(width, height, f))
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        *self.0.get(x, y)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.0.set(x, y, value)
    }

    pub fn count(&self) -> usize {
        self.0.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.0.data.iter().any(|&b| b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.0.ensure_same_dims(&other.0)?;
        let data = self.0.data.iter().zip(&other.0.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(BinaryMask(Grid::from_vec(self.width(), self.height(), data)?))
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn overlap_count(&self, other: &BinaryMask) -> Result<usize> {
        Ok(self.intersection(other)?.count())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        Ok(self.difference(other)?.count() == 0)
    }

    /// Row-major indices of set pixels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.data.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// Instance labeling; 0 is background, objects are numbered `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceLabeling {
    labels: Grid<u32>,
    count: u32,
}

impl InstanceLabeling {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            labels: Grid::filled(width, height, 0),
            count: 0,
        }
    }

    /// Builds a labeling from raw labels, checking that values are contiguous.
    pub fn from_labels(labels: Grid<u32>) -> Result<Self> {
        let count = labels.data.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; count as usize + 1];
        for &l in &labels.data {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().skip(1).position(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "labels not contiguous: {} missing (max {count})",
                missing + 1
            )));
        }
        Ok(Self { labels, count })
    }

    pub(crate) fn from_parts(labels: Grid<u32>, count: u32) -> Self {
        Self { labels, count }
    }

    /// Labels each mask in order as instance `i + 1`. Later masks win on overlap.
    pub fn from_masks(width: usize, height: usize, masks: &[BinaryMask]) -> Result<Self> {
        let mut labels = Grid::filled(width, height, 0u32);
        for (i, m) in masks.iter().enumerate() {
            labels.ensure_same_dims(&m.0)?;
            for idx in m.indices() {
                labels.data[idx] = i as u32 + 1;
            }
        }
        Self::from_labels(labels)
    }

    pub fn labels(&self) -> &Grid<u32> {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count as usize
    }

    pub fn width(&self) -> usize {
        self.labels.width
    }

    pub fn height(&self) -> usize {
        self.labels.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn instance_mask(&self, label: u32) -> BinaryMask {
        BinaryMask(self.labels.map(|&l| l == label))
    }

    pub fn instance_masks(&self) -> Vec<BinaryMask> {
        (1..=self.count).map(|l| self.instance_mask(l)).collect()
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask(self.labels.map(|&l| l != 0))
    }

    /// Pixel count per label, index 0 = background.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count as usize + 1];
        for &l in &self.labels.data {
            sizes[l as usize] += 1;
        }
        sizes
    }
}
