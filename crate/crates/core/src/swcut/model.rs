use serde::{Deserialize, Serialize};

use super::{Image, Labeling, Lattice};
use crate::error::{Error, Result};
use crate::statespace::FiniteDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Region `l` has known mean intensity `means[l]`.
    FixedMeans,
    /// Each region is fitted by a polynomial of degree `order` in the pixel
    /// coordinates; the likelihood is evaluated at the fitted coefficients.
    PolyFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionModelConfig {
    pub mode: RegionMode,
    #[serde(default)]
    pub order: usize,
    pub sigma: f64,
    #[serde(default)]
    pub means: Vec<f64>,
}

impl RegionModelConfig {
    pub fn fixed_means(means: Vec<f64>, sigma: f64) -> Self {
        Self {
            mode: RegionMode::FixedMeans,
            order: 0,
            sigma,
            means,
        }
    }

    pub fn poly_fit(order: usize, sigma: f64) -> Self {
        Self {
            mode: RegionMode::PolyFit,
            order,
            sigma,
            means: Vec::new(),
        }
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(
                "segmentation.region.sigma",
                "must be positive",
            ));
        }
        match self.mode {
            RegionMode::FixedMeans => {
                if self.means.len() != num_labels {
                    return Err(Error::config(
                        "segmentation.region.means",
                        format!("need {num_labels} means, got {}", self.means.len()),
                    ));
                }
                if let Some(i) = self.means.iter().position(|m| !m.is_finite()) {
                    return Err(Error::config(
                        format!("segmentation.region.means[{i}]"),
                        "must be finite",
                    ));
                }
            }
            RegionMode::PolyFit => {
                if self.order > 2 {
                    return Err(Error::config(
                        "segmentation.region.order",
                        "order must be 0, 1 or 2",
                    ));
                }
            }
        }
        Ok(())
    }

    fn log_norm(&self) -> f64 {
        (self.sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }
}

/// `beta * #{edges with equal labels}`.
pub fn potts_logprior(w: &Labeling, beta: f64) -> f64 {
    let lat = Lattice::new(w.width(), w.height());
    beta * lat
        .edges()
        .iter()
        .filter(|&&(i, j)| w.get(i) == w.get(j))
        .count() as f64
}

/// Coordinates scaled to `[-1, 1]` on each axis (0 on a degenerate axis).
fn scaled_coords(image: &Image, i: usize) -> (f64, f64) {
    let scale = |c: usize, n: usize| {
        if n > 1 {
            2.0 * c as f64 / (n - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    (
        scale(i % image.width(), image.width()),
        scale(i / image.width(), image.height()),
    )
}

fn design_row(order: usize, (u, v): (f64, f64)) -> Vec<f64> {
    match order {
        0 => vec![1.0],
        1 => vec![1.0, u, v],
        _ => vec![1.0, u, v, u * u, u * v, v * v],
    }
}

/// Solve the symmetric system `a x = b` by partial-pivot elimination.
/// Returns `None` when a pivot collapses relative to the diagonal scale.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
    for col in 0..k {
        let p = (col..k).max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))?;
        if a[p * k + col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        if p != col {
            for j in 0..k {
                a.swap(col * k + j, p * k + j);
            }
            b.swap(col, p);
        }
        for r in (col + 1)..k {
            let f = a[r * k + col] / a[col * k + col];
            for j in col..k {
                a[r * k + j] -= f * a[col * k + j];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = ((r + 1)..k).map(|j| a[r * k + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * k + r];
    }
    Some(x)
}

/// Least-squares polynomial fit of the given pixels via normal equations.
/// Returns `(coefficients, residuals)`, or `None` when the region has fewer
/// pixels than coefficients or the design is rank deficient.
pub fn poly_fit(image: &Image, pixels: &[usize], order: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = design_row(order, (0.0, 0.0)).len();
    if pixels.len() < k {
        return None;
    }
    let mut xtx = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    for &i in pixels {
        let row = design_row(order, scaled_coords(image, i));
        for a in 0..k {
            xty[a] += row[a] * image.get(i);
            for b in 0..k {
                xtx[a * k + b] += row[a] * row[b];
            }
        }
    }
    let coef = solve(xtx, xty)?;
    let residuals = pixels
        .iter()
        .map(|&i| {
            let row = design_row(order, scaled_coords(image, i));
            image.get(i) - row.iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>()
        })
        .collect();
    Some((coef, residuals))
}

fn region_term(image: &Image, pixels: &[usize], cfg: &RegionModelConfig) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    let residuals = match poly_fit(image, pixels, cfg.order) {
        Some((_, r)) => r,
        None => {
            log::debug!(
                "region of {} pixels cannot support an order-{} fit; using its mean",
                pixels.len(),
                cfg.order
            );
            let mean = pixels.iter().map(|&i| image.get(i)).sum::<f64>() / pixels.len() as f64;
            pixels.iter().map(|&i| image.get(i) - mean).collect()
        }
    };
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    -ss / (2.0 * cfg.sigma * cfg.sigma) - pixels.len() as f64 * cfg.log_norm()
}

/// Gaussian log-likelihood of the image given the labeling.
pub fn region_loglik(image: &Image, w: &Labeling, cfg: &RegionModelConfig) -> Result<f64> {
    if !w.matches(image) {
        return Err(Error::Shape("labeling and image differ in size".into()));
    }
    cfg.validate(w.num_labels())?;
    Ok(match cfg.mode {
        RegionMode::FixedMeans => {
            (0..image.len())
                .map(|i| {
                    let r = image.get(i) - cfg.means[w.get(i)];
                    -r * r / (2.0 * cfg.sigma * cfg.sigma)
                })
                .sum::<f64>()
                - image.len() as f64 * cfg.log_norm()
        }
        RegionMode::PolyFit => (0..w.num_labels())
            .map(|l| {
                let pixels: Vec<usize> = (0..image.len()).filter(|&i| w.get(i) == l).collect();
                region_term(image, &pixels, cfg)
            })
            .sum(),
    })
}

pub fn posterior_logdensity(
    image: &Image,
    w: &Labeling,
    beta: f64,
    cfg: &RegionModelConfig,
) -> Result<f64> {
    Ok(potts_logprior(w, beta) + region_loglik(image, w, cfg)?)
}

/// Posterior `p(W | I)` with incremental relabeling deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorModel {
    pub beta: f64,
    pub region: RegionModelConfig,
    pub num_labels: usize,
}

impl PosteriorModel {
    pub fn new(beta: f64, region: RegionModelConfig, num_labels: usize) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::config(
                "segmentation.beta",
                "must be finite and non-negative",
            ));
        }
        if num_labels < 1 {
            return Err(Error::config(
                "segmentation.labels",
                "need at least one label",
            ));
        }
        region.validate(num_labels)?;
        Ok(Self {
            beta,
            region,
            num_labels,
        })
    }

    pub fn log_density(&self, image: &Image, w: &Labeling) -> Result<f64> {
        posterior_logdensity(image, w, self.beta, &self.region)
    }

    #[inline]
    fn pixel_loglik(&self, image: &Image, i: usize, label: usize) -> f64 {
        let r = image.get(i) - self.region.means[label];
        -r * r / (2.0 * self.region.sigma * self.region.sigma)
    }

    /// Likelihood change of relabeling every pixel in `cluster` (all
    /// currently labeled `from`) to each candidate label.
    pub(crate) fn likelihood_deltas(
        &self,
        image: &Image,
        w: &Labeling,
        cluster: &[usize],
        in_cluster: &[bool],
        from: usize,
        out: &mut [f64],
    ) {
        match self.region.mode {
            RegionMode::FixedMeans => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = if c == from {
                        0.0
                    } else {
                        cluster
                            .iter()
                            .map(|&i| {
                                self.pixel_loglik(image, i, c) - self.pixel_loglik(image, i, from)
                            })
                            .sum()
                    };
                }
            }
            RegionMode::PolyFit => {
                let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.num_labels];
                for i in 0..image.len() {
                    if !in_cluster[i] {
                        members[w.get(i)].push(i);
                    }
                }
                let base: Vec<f64> = (0..self.num_labels)
                    .map(|l| {
                        let mut px = members[l].clone();
                        if l == from {
                            px.extend_from_slice(cluster);
                        }
                        region_term(image, &px, &self.region)
                    })
                    .collect();
                let from_without = region_term(image, &members[from], &self.region);
                for (c, o) in out.iter_mut().enumerate() {
                    *o = if c == from {
                        0.0
                    } else {
                        let mut px = members[c].clone();
                        px.extend_from_slice(cluster);
                        region_term(image, &px, &self.region) + from_without - base[c] - base[from]
                    };
                }
            }
        }
    }
}

/// Exact normalized posterior over all `L^N` labelings, indexed as in
/// [`Labeling::index`].
pub fn enumerate_posterior(
    image: &Image,
    num_labels: usize,
    beta: f64,
    cfg: &RegionModelConfig,
    cap: usize,
) -> Result<FiniteDistribution> {
    let model = PosteriorModel::new(beta, cfg.clone(), num_labels)?;
    let count = num_labels
        .checked_pow(image.len() as u32)
        .filter(|&c| c <= cap)
        .ok_or_else(|| {
            Error::Capability(format!(
                "{num_labels}^{} labelings exceed the enumeration cap",
                image.len()
            ))
        })?;
    let logw = (0..count)
        .map(|idx| {
            model.log_density(
                image,
                &Labeling::from_index(image.width(), image.height(), num_labels, idx),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    FiniteDistribution::from_log_weights((0..count).collect(), &logw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::DEFAULT_ENUMERATION_CAP;

    fn img(w: usize, h: usize, p: &[f64]) -> Image {
        Image::new(w, h, p.to_vec()).unwrap()
    }

    #[test]
    fn potts_prior_examples() {
        let same = Labeling::uniform(2, 2, 0, 2).unwrap();
        assert_eq!(potts_logprior(&same, 0.5), 2.0);
        let checker = Labeling::new(2, 2, vec![0, 1, 1, 0], 2).unwrap();
        assert_eq!(potts_logprior(&checker, 0.5), 0.0);
        let w = Labeling::new(3, 2, vec![0, 1, 2, 2, 1, 0], 3).unwrap();
        let permuted =
            Labeling::new(3, 2, w.labels().iter().map(|l| (l + 1) % 3).collect(), 3).unwrap();
        assert_eq!(potts_logprior(&w, 1.3), potts_logprior(&permuted, 1.3));
    }

    #[test]
    fn fixed_means_quadratic_term() {
        let image = img(2, 1, &[0.2, 0.4]);
        let w = Labeling::uniform(2, 1, 0, 1).unwrap();
        let cfg = RegionModelConfig::fixed_means(vec![0.3], 0.1);
        let ll = region_loglik(&image, &w, &cfg).unwrap();
        let quad = ll + 2.0 * (0.1 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((quad - -1.0).abs() < 1e-12);
    }

    #[test]
    fn order_zero_fit_is_mean() {
        let image = img(3, 2, &[0.1, 0.5, 0.3, 0.9, 0.2, 0.4]);
        let (coef, _) = poly_fit(&image, &[0, 2, 3, 5], 0).unwrap();
        assert!((coef[0] - (0.1 + 0.3 + 0.9 + 0.4) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let p: Vec<f64> = (0..20).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let image = img(5, 4, &p);
        let pixels: Vec<usize> = (0..20).collect();
        for order in 0..=2 {
            let (_, res) = poly_fit(&image, &pixels, order).unwrap();
            for col in 0..design_row(order, (0.0, 0.0)).len() {
                let dot: f64 = pixels
                    .iter()
                    .zip(&res)
                    .map(|(&i, r)| design_row(order, scaled_coords(&image, i))[col] * r)
                    .sum();
                assert!(dot.abs() < 1e-8, "order {order} column {col}: {dot}");
            }
        }
    }

    #[test]
    fn small_region_falls_back_to_mean() {
        let image = img(3, 1, &[0.1, 0.5, 0.3]);
        assert!(poly_fit(&image, &[0, 1], 1).is_none());
        let cfg = RegionModelConfig::poly_fit(1, 0.2);
        let w = Labeling::new(3, 1, vec![0, 0, 1], 2).unwrap();
        assert!(region_loglik(&image, &w, &cfg).unwrap().is_finite());
    }

    #[test]
    fn flat_posterior() {
        let image = img(2, 2, &[0.1, 0.7, 0.3, 0.9]);
        let cfg = RegionModelConfig::fixed_means(vec![0.5, 0.5], 0.3);
        let a = posterior_logdensity(
            &image,
            &Labeling::new(2, 2, vec![0, 1, 1, 0], 2).unwrap(),
            0.0,
            &cfg,
        )
        .unwrap();
        let b = posterior_logdensity(&image, &Labeling::uniform(2, 2, 1, 2).unwrap(), 0.0, &cfg)
            .unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn translation_invariance() {
        let image = img(2, 2, &[0.1, 0.7, 0.3, 0.5]);
        let shifted = img(2, 2, &[0.3, 0.9, 0.5, 0.7]);
        let w = Labeling::new(2, 2, vec![0, 1, 0, 1], 2).unwrap();
        let a = posterior_logdensity(
            &image,
            &w,
            0.4,
            &RegionModelConfig::fixed_means(vec![0.2, 0.6], 0.2),
        )
        .unwrap();
        let b = posterior_logdensity(
            &shifted,
            &w,
            0.4,
            &RegionModelConfig::fixed_means(vec![0.4, 0.8], 0.2),
        )
        .unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn enumeration_examples() {
        let cfg = RegionModelConfig::fixed_means(vec![0.3, 0.7], 0.2);
        let one = img(1, 1, &[0.4]);
        let d = enumerate_posterior(&one, 2, 5.0, &cfg, DEFAULT_ENUMERATION_CAP).unwrap();
        let l0 = (-(0.1f64).powi(2) / 0.08).exp();
        let l1 = (-(0.3f64).powi(2) / 0.08).exp();
        assert!((d.probs()[0] - l0 / (l0 + l1)).abs() < 1e-12);

        let flat = RegionModelConfig::fixed_means(vec![0.5, 0.5, 0.5], 0.2);
        let d = enumerate_posterior(
            &img(2, 2, &[0.1, 0.2, 0.3, 0.4]),
            3,
            0.0,
            &flat,
            DEFAULT_ENUMERATION_CAP,
        )
        .unwrap();
        assert_eq!(d.len(), 81);
        assert!(d.probs().iter().all(|p| (p - 1.0 / 81.0).abs() < 1e-14));

        let d = enumerate_posterior(&img(3, 3, &[0.2; 9]), 2, 0.7, &cfg, DEFAULT_ENUMERATION_CAP)
            .unwrap();
        assert_eq!(d.len(), 512);
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(matches!(
            enumerate_posterior(&img(3, 3, &[0.2; 9]), 2, 0.7, &cfg, 100),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn likelihood_deltas_match_full_recompute() {
        let p = [
            0.1, 0.8, 0.75, 0.2, 0.9, 0.3, 0.15, 0.6, 0.85, 0.4, 0.35, 0.7,
        ];
        let image = img(4, 3, &p);
        let w = Labeling::new(4, 3, vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 2, 2, 1], 3).unwrap();
        let cluster = [1usize, 2];
        let mut in_cluster = vec![false; 12];
        cluster.iter().for_each(|&i| in_cluster[i] = true);
        for region in [
            RegionModelConfig::fixed_means(vec![0.2, 0.5, 0.8], 0.25),
            RegionModelConfig::poly_fit(1, 0.25),
            RegionModelConfig::poly_fit(0, 0.25),
        ] {
            let m = PosteriorModel::new(0.0, region.clone(), 3).unwrap();
            let mut deltas = vec![0.0; 3];
            m.likelihood_deltas(&image, &w, &cluster, &in_cluster, 1, &mut deltas);
            let base = region_loglik(&image, &w, &region).unwrap();
            for c in 0..3 {
                let mut w2 = w.clone();
                cluster.iter().for_each(|&i| w2.set(i, c));
                let full = region_loglik(&image, &w2, &region).unwrap() - base;
                assert!((deltas[c] - full).abs() < 1e-9, "{region:?} c={c}");
            }
        }
    }
}
