//! Bayesian image segmentation with a Potts prior and a per-region
//! polynomial likelihood, sampled by Swendsen-Wang cut cluster moves or by
//! single-site Gibbs.
//!
//! Labels are stored zero-based (`0..L`).

mod model;
mod sampler;

pub use model::{
    enumerate_posterior, poly_fit, posterior_logdensity, potts_logprior, region_loglik,
    PosteriorModel, RegionMode, RegionModelConfig,
};
pub use sampler::{
    edge_affinity, form_clusters, gibbs_site_step, segment, swcut_step, sweeps_to_agreement,
    AffinityParams, AgreementTracker, Cluster, ClusterPick, EdgeAffinityMap, InitKind, SamplerKind,
    SegmentConfig, SegmentResult, Segmenter, SiteMove, SwMove, ALPHA_TOLERANCE,
};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::statespace::lattice_edges;

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image must have at least one pixel".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Numeric(format!(
                "pixel {i} intensity {} is outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// 8-bit samples scaled by `1 / maxval`.
    pub fn from_samples(width: usize, height: usize, samples: &[u8], maxval: u8) -> Result<Self> {
        if maxval == 0 {
            return Err(Error::Numeric("maxval must be positive".into()));
        }
        let pixels = samples
            .iter()
            .map(|&s| (s as f64 / maxval as f64).min(1.0))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.pixels[i]
    }

    pub fn to_samples(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p * 255.0).round() as u8)
            .collect()
    }
}

/// Per-pixel label field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    num_labels: usize,
}

impl Labeling {
    pub fn new(width: usize, height: usize, labels: Vec<usize>, num_labels: usize) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} lattice",
                labels.len()
            )));
        }
        if num_labels == 0 {
            return Err(Error::config(
                "segmentation.labels",
                "need at least one label",
            ));
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_labels) {
            return Err(Error::Domain {
                state: labels[i],
                size: num_labels,
            });
        }
        Ok(Self {
            width,
            height,
            labels,
            num_labels,
        })
    }

    pub fn uniform(width: usize, height: usize, label: usize, num_labels: usize) -> Result<Self> {
        Self::new(width, height, vec![label; width * height], num_labels)
    }

    /// Decode an enumeration index (pixel `i` is digit `i` in base `L`).
    pub fn from_index(width: usize, height: usize, num_labels: usize, mut index: usize) -> Self {
        let labels = (0..width * height)
            .map(|_| {
                let l = index % num_labels;
                index /= num_labels;
                l
            })
            .collect();
        Self {
            width,
            height,
            labels,
            num_labels,
        }
    }

    pub fn index(&self) -> usize {
        self.labels
            .iter()
            .rev()
            .fold(0, |acc, &l| acc * self.num_labels + l)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, label: usize) {
        debug_assert!(label < self.num_labels);
        self.labels[i] = label;
    }

    pub fn matches(&self, image: &Image) -> bool {
        self.width == image.width && self.height == image.height
    }

    /// Pixels with a 4-neighbor of a different label.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.labels.len()];
        for (i, j) in lattice_edges(self.width, self.height) {
            if self.labels[i] != self.labels[j] {
                mask[i] = true;
                mask[j] = true;
            }
        }
        mask
    }

    /// Fraction of pixels that agree with `other` under the best label permutation.
    pub fn agreement(&self, other: &Labeling) -> f64 {
        let mut tracker = AgreementTracker::new(other, self);
        tracker.fraction()
    }
}

/// 4-neighborhood lattice with per-pixel adjacency `(neighbor, edge index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    width: usize,
    height: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Lattice {
    pub fn new(width: usize, height: usize) -> Self {
        let edges = lattice_edges(width, height);
        let mut adjacency = vec![Vec::with_capacity(4); width * height];
        for (e, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push((j, e));
            adjacency[j].push((i, e));
        }
        Self {
            width,
            height,
            edges,
            adjacency,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sites(&self) -> usize {
        self.width * self.height
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }
}

/// Synthetic two-region scene: a centered disc of intensity `high` on a
/// background of intensity `low`, plus clamped Gaussian noise.
pub fn two_region_image(
    width: usize,
    height: usize,
    low: f64,
    high: f64,
    noise: f64,
    rng: &mut dyn RngCore,
) -> Result<(Image, Labeling)> {
    if !(noise >= 0.0) {
        return Err(Error::config(
            "segmentation.image.synthetic.noise",
            "must be non-negative",
        ));
    }
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let radius = width.min(height) as f64 / 3.0;
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let mut truth = Vec::with_capacity(width * height);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let inside = (x as f64 - cx).hypot(y as f64 - cy) <= radius;
            truth.push(inside as usize);
            let base = if inside { high } else { low };
            let eps = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
            pixels.push((base + eps).clamp(0.0, 1.0));
        }
    }
    Ok((
        Image::new(width, height, pixels)?,
        Labeling::new(width, height, truth, 2)?,
    ))
}

/// Labels by intensity rank: `L` quantile bins, darkest first.
pub fn quantile_labeling(image: &Image, num_labels: usize) -> Result<Labeling> {
    let n = image.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| image.get(a).total_cmp(&image.get(b)).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * num_labels / n;
    }
    Labeling::new(image.width, image.height, labels, num_labels)
}

pub fn random_labeling(
    width: usize,
    height: usize,
    num_labels: usize,
    rng: &mut dyn RngCore,
) -> Result<Labeling> {
    let labels = (0..width * height)
        .map(|_| rng.gen_range(0..num_labels))
        .collect();
    Labeling::new(width, height, labels, num_labels)
}
