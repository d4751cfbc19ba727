use petgraph::unionfind::UnionFind;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::model::{PosteriorModel, RegionModelConfig};
use super::{quantile_labeling, random_labeling, Image, Labeling, Lattice};
use crate::error::{Error, Result};
use crate::kernels::sample_weights;
use crate::rng::{stream, Domain};

/// Largest tolerated `|alpha - 1|` for a cluster move.
pub const ALPHA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffinityParams {
    pub p_max: f64,
    pub p_min: f64,
    pub scale: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            p_max: 0.9,
            p_min: 0.01,
            scale: 0.1,
        }
    }
}

impl AffinityParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.p_min && self.p_min <= self.p_max && self.p_max < 1.0) {
            return Err(Error::config(
                "segmentation.affinity",
                format!(
                    "need 0 < p_min <= p_max < 1, got p_min={} p_max={}",
                    self.p_min, self.p_max
                ),
            ));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::config(
                "segmentation.affinity.scale",
                "must be positive",
            ));
        }
        Ok(())
    }

    pub fn probability(&self, contrast: f64) -> f64 {
        (self.p_max * (-contrast / self.scale).exp()).clamp(self.p_min, self.p_max)
    }
}

/// Per-edge bond probabilities, in [`Lattice::edges`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAffinityMap {
    params: AffinityParams,
    probs: Vec<f64>,
    log_off: Vec<f64>,
}

impl EdgeAffinityMap {
    pub fn params(&self) -> AffinityParams {
        self.params
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, edge: usize) -> f64 {
        self.probs[edge]
    }

    /// `ln(1 - p_e)`.
    #[inline]
    pub fn log_off(&self, edge: usize) -> f64 {
        self.log_off[edge]
    }
}

pub fn edge_affinity(image: &Image, params: AffinityParams) -> Result<EdgeAffinityMap> {
    params.validate()?;
    let lat = Lattice::new(image.width(), image.height());
    let probs: Vec<f64> = lat
        .edges()
        .iter()
        .map(|&(i, j)| params.probability((image.get(i) - image.get(j)).abs()))
        .collect();
    let log_off = probs.iter().map(|p| (-p).ln_1p()).collect();
    Ok(EdgeAffinityMap {
        params,
        probs,
        log_off,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub pixels: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterPick {
    /// Uniform over the cluster list.
    #[default]
    Uniform,
    /// The cluster containing a uniformly drawn pixel.
    PixelWeighted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Swcut,
    Gibbs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Quantile,
    Random,
}

fn cluster_ids(
    w: &Labeling,
    lat: &Lattice,
    aff: &EdgeAffinityMap,
    rng: &mut dyn RngCore,
) -> (Vec<usize>, usize) {
    let n = lat.sites();
    let mut uf = UnionFind::<usize>::new(n);
    for (e, &(i, j)) in lat.edges().iter().enumerate() {
        if w.get(i) == w.get(j) && rng.gen::<f64>() < aff.prob(e) {
            uf.union(i, j);
        }
    }
    let mut id_of_root = vec![usize::MAX; n];
    let mut ids = vec![0; n];
    let mut count = 0;
    for (i, id) in ids.iter_mut().enumerate() {
        let r = uf.find_mut(i);
        if id_of_root[r] == usize::MAX {
            id_of_root[r] = count;
            count += 1;
        }
        *id = id_of_root[r];
    }
    (ids, count)
}

/// Bond same-label edges with probability `p_e` and return the connected
/// components, ordered by their smallest pixel index.
pub fn form_clusters(
    w: &Labeling,
    aff: &EdgeAffinityMap,
    rng: &mut dyn RngCore,
) -> Result<Vec<Cluster>> {
    let lat = Lattice::new(w.width(), w.height());
    if aff.probs.len() != lat.edges().len() {
        return Err(Error::Shape(
            "affinity map does not match the labeling".into(),
        ));
    }
    let (ids, count) = cluster_ids(w, &lat, aff, rng);
    let mut clusters: Vec<Cluster> = Vec::with_capacity(count);
    for (i, &id) in ids.iter().enumerate() {
        if id == clusters.len() {
            clusters.push(Cluster {
                pixels: Vec::new(),
                label: w.get(i),
            });
        }
        clusters[id].pixels.push(i);
    }
    Ok(clusters)
}

/// Result of one cluster move.
#[derive(Debug, Clone, PartialEq)]
pub struct SwMove {
    pub cluster: Vec<usize>,
    pub from: usize,
    pub to: usize,
    pub alpha: f64,
    pub clusters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteMove {
    pub pixel: usize,
    pub from: usize,
    pub to: usize,
}

/// Single-chain segmentation sampler holding the current labeling and its
/// log posterior.
#[derive(Debug, Clone)]
pub struct Segmenter<'a> {
    image: &'a Image,
    lattice: Lattice,
    model: PosteriorModel,
    affinity: EdgeAffinityMap,
    pick: ClusterPick,
    labels: Labeling,
    logpost: f64,
    max_alpha_deviation: f64,
    in_cluster: Vec<bool>,
}

impl<'a> Segmenter<'a> {
    pub fn new(
        image: &'a Image,
        model: PosteriorModel,
        affinity: AffinityParams,
        pick: ClusterPick,
        initial: Labeling,
    ) -> Result<Self> {
        if !initial.matches(image) {
            return Err(Error::Shape(
                "initial labeling and image differ in size".into(),
            ));
        }
        if initial.num_labels() != model.num_labels {
            return Err(Error::Shape(format!(
                "initial labeling has {} labels, model has {}",
                initial.num_labels(),
                model.num_labels
            )));
        }
        let logpost = model.log_density(image, &initial)?;
        Ok(Self {
            image,
            lattice: Lattice::new(image.width(), image.height()),
            affinity: edge_affinity(image, affinity)?,
            model,
            pick,
            labels: initial,
            logpost,
            max_alpha_deviation: 0.0,
            in_cluster: vec![false; image.len()],
        })
    }

    pub fn labels(&self) -> &Labeling {
        &self.labels
    }

    pub fn into_labels(self) -> Labeling {
        self.labels
    }

    pub fn log_posterior(&self) -> f64 {
        self.logpost
    }

    pub fn affinity(&self) -> &EdgeAffinityMap {
        &self.affinity
    }

    pub fn max_alpha_deviation(&self) -> f64 {
        self.max_alpha_deviation
    }

    /// Log of the relabeling weights `w(c)` for the marked cluster, all of
    /// whose pixels carry `from`, together with the posterior deltas.
    fn relabel_weights(&self, cluster: &[usize], from: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.model.num_labels;
        let mut logcut = vec![0.0; l];
        let mut agree = vec![0.0; l];
        for &i in cluster {
            for &(j, e) in self.lattice.neighbors(i) {
                if !self.in_cluster[j] {
                    let c = self.labels.get(j);
                    logcut[c] += self.affinity.log_off(e);
                    agree[c] += 1.0;
                }
            }
        }
        let mut delta = vec![0.0; l];
        self.model.likelihood_deltas(
            self.image,
            &self.labels,
            cluster,
            &self.in_cluster,
            from,
            &mut delta,
        );
        for c in 0..l {
            delta[c] += self.model.beta * (agree[c] - agree[from]);
        }
        let logw = (0..l).map(|c| logcut[c] + delta[c]).collect();
        (logw, logcut, delta)
    }

    fn relabel(&mut self, pixels: &[usize], to: usize) {
        for &i in pixels {
            self.labels.set(i, to);
        }
    }

    pub fn swcut_step(&mut self, rng: &mut dyn RngCore) -> Result<SwMove> {
        let (ids, count) = cluster_ids(&self.labels, &self.lattice, &self.affinity, rng);
        let chosen = match self.pick {
            ClusterPick::Uniform => rng.gen_range(0..count),
            ClusterPick::PixelWeighted => ids[rng.gen_range(0..ids.len())],
        };
        let cluster: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == chosen).collect();
        let from = self.labels.get(cluster[0]);
        for &i in &cluster {
            self.in_cluster[i] = true;
        }

        let (logw, logcut, delta) = self.relabel_weights(&cluster, from);
        let to = sample_weights(&normalized(&logw), rng)?;
        let mut alpha = 1.0;
        if to != from {
            let forward = log_normalized(&logw)[to];
            self.relabel(&cluster, to);
            let (logw_rev, _, _) = self.relabel_weights(&cluster, to);
            let backward = log_normalized(&logw_rev)[from];
            let log_alpha = (logcut[to] - logcut[from]) + (backward - forward) + delta[to];
            alpha = log_alpha.min(0.0).exp();
            let deviation = (alpha - 1.0).abs();
            self.max_alpha_deviation = self.max_alpha_deviation.max(deviation);
            if deviation > ALPHA_TOLERANCE {
                self.relabel(&cluster, from);
                for &i in &cluster {
                    self.in_cluster[i] = false;
                }
                return Err(Error::Numeric(format!(
                    "cluster move acceptance {alpha} deviates from 1 by {deviation:e}"
                )));
            }
            self.logpost += delta[to];
        }
        for &i in &cluster {
            self.in_cluster[i] = false;
        }
        Ok(SwMove {
            cluster,
            from,
            to,
            alpha,
            clusters: count,
        })
    }

    /// Full conditional of `pixel`'s label given the rest, normalized.
    pub fn site_conditional(&mut self, pixel: usize) -> Vec<f64> {
        normalized(&self.site_log_weights(pixel))
    }

    fn site_log_weights(&mut self, pixel: usize) -> Vec<f64> {
        let from = self.labels.get(pixel);
        let l = self.model.num_labels;
        let mut agree = vec![0.0; l];
        for &(j, _) in self.lattice.neighbors(pixel) {
            agree[self.labels.get(j)] += 1.0;
        }
        let mut delta = vec![0.0; l];
        self.in_cluster[pixel] = true;
        self.model.likelihood_deltas(
            self.image,
            &self.labels,
            &[pixel],
            &self.in_cluster,
            from,
            &mut delta,
        );
        self.in_cluster[pixel] = false;
        (0..l)
            .map(|c| delta[c] + self.model.beta * (agree[c] - agree[from]))
            .collect()
    }

    pub fn gibbs_step(&mut self, rng: &mut dyn RngCore) -> Result<SiteMove> {
        let pixel = rng.gen_range(0..self.labels.labels().len());
        let from = self.labels.get(pixel);
        let logw = self.site_log_weights(pixel);
        let to = sample_weights(&normalized(&logw), rng)?;
        self.labels.set(pixel, to);
        self.logpost += logw[to];
        Ok(SiteMove { pixel, from, to })
    }
}

fn log_normalized(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = m + logw.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    logw.iter().map(|x| x - z).collect()
}

fn normalized(logw: &[f64]) -> Vec<f64> {
    log_normalized(logw).into_iter().map(f64::exp).collect()
}

/// One cluster move on `w`, returning the new labeling.
pub fn swcut_step(
    image: &Image,
    w: &Labeling,
    affinity: AffinityParams,
    model: &PosteriorModel,
    pick: ClusterPick,
    rng: &mut dyn RngCore,
) -> Result<(Labeling, SwMove)> {
    let mut s = Segmenter::new(image, model.clone(), affinity, pick, w.clone())?;
    let mv = s.swcut_step(rng)?;
    Ok((s.into_labels(), mv))
}

/// One random-scan Gibbs update on `w`.
pub fn gibbs_site_step(
    image: &Image,
    w: &Labeling,
    model: &PosteriorModel,
    rng: &mut dyn RngCore,
) -> Result<Labeling> {
    let mut s = Segmenter::new(
        image,
        model.clone(),
        AffinityParams::default(),
        ClusterPick::Uniform,
        w.clone(),
    )?;
    s.gibbs_step(rng)?;
    Ok(s.into_labels())
}

fn default_beta() -> f64 {
    1.0
}

fn default_labels() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_labels")]
    pub labels: usize,
    #[serde(default)]
    pub affinity: AffinityParams,
    pub region: RegionModelConfig,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub cluster_pick: ClusterPick,
}

impl SegmentConfig {
    pub fn new(beta: f64, labels: usize, region: RegionModelConfig) -> Self {
        Self {
            beta,
            labels,
            affinity: AffinityParams::default(),
            region,
            sampler: SamplerKind::default(),
            init: InitKind::default(),
            cluster_pick: ClusterPick::default(),
        }
    }

    pub fn model(&self) -> Result<PosteriorModel> {
        PosteriorModel::new(self.beta, self.region.clone(), self.labels)
    }

    pub fn validate(&self) -> Result<()> {
        self.affinity.validate()?;
        self.model().map(|_| ())
    }

    pub fn initial_labeling(&self, image: &Image, seed: u64) -> Result<Labeling> {
        match self.init {
            InitKind::Quantile => quantile_labeling(image, self.labels),
            InitKind::Random => random_labeling(
                image.width(),
                image.height(),
                self.labels,
                &mut stream(seed, Domain::Segment, 1),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResult {
    pub labeling: Labeling,
    /// Negative log posterior after each step.
    pub energy: Vec<f64>,
    pub max_alpha_deviation: f64,
}

/// Run `sweeps * width * height` steps of the configured sampler.
pub fn segment(
    image: &Image,
    cfg: &SegmentConfig,
    sweeps: usize,
    seed: u64,
) -> Result<SegmentResult> {
    cfg.validate()?;
    let initial = cfg.initial_labeling(image, seed)?;
    let mut s = Segmenter::new(image, cfg.model()?, cfg.affinity, cfg.cluster_pick, initial)?;
    let mut rng = stream(seed, Domain::Segment, 0);
    let steps = sweeps * image.len();
    let mut energy = Vec::with_capacity(steps);
    for _ in 0..steps {
        match cfg.sampler {
            SamplerKind::Swcut => {
                s.swcut_step(&mut rng)?;
            }
            SamplerKind::Gibbs => {
                s.gibbs_step(&mut rng)?;
            }
        }
        energy.push(-s.log_posterior());
    }
    Ok(SegmentResult {
        max_alpha_deviation: s.max_alpha_deviation(),
        labeling: s.into_labels(),
        energy,
    })
}

/// Incrementally maintained agreement with a reference labeling, maximized
/// over label permutations.
#[derive(Debug, Clone)]
pub struct AgreementTracker {
    size: usize,
    confusion: Vec<usize>,
    total: usize,
    truth: Vec<usize>,
    perms: Vec<Vec<usize>>,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

impl AgreementTracker {
    pub fn new(truth: &Labeling, current: &Labeling) -> Self {
        let size = truth.num_labels().max(current.num_labels());
        let mut confusion = vec![0; size * size];
        for (t, c) in truth.labels().iter().zip(current.labels()) {
            confusion[t * size + c] += 1;
        }
        Self {
            size,
            confusion,
            total: truth.labels().len(),
            truth: truth.labels().to_vec(),
            perms: permutations(size),
        }
    }

    pub fn relabel(&mut self, pixels: &[usize], from: usize, to: usize) {
        for &i in pixels {
            let t = self.truth[i];
            self.confusion[t * self.size + from] -= 1;
            self.confusion[t * self.size + to] += 1;
        }
    }

    pub fn fraction(&mut self) -> f64 {
        let k = self.size;
        let best = self
            .perms
            .iter()
            .map(|p| (0..k).map(|t| self.confusion[t * k + p[t]]).sum::<usize>())
            .max()
            .unwrap_or(0);
        best as f64 / self.total as f64
    }
}

/// Steps (in sweep units, `steps / (width * height)`) until the chain first
/// agrees with `truth` on at least `threshold` of the pixels, or `None` if
/// that does not happen within `max_sweeps`.
pub fn sweeps_to_agreement(
    image: &Image,
    cfg: &SegmentConfig,
    truth: &Labeling,
    threshold: f64,
    max_sweeps: usize,
    seed: u64,
) -> Result<Option<f64>> {
    cfg.validate()?;
    let initial = cfg.initial_labeling(image, seed)?;
    let mut tracker = AgreementTracker::new(truth, &initial);
    if tracker.fraction() >= threshold {
        return Ok(Some(0.0));
    }
    let mut s = Segmenter::new(image, cfg.model()?, cfg.affinity, cfg.cluster_pick, initial)?;
    let mut rng = stream(seed, Domain::Segment, 0);
    let n = image.len();
    for step in 1..=max_sweeps * n {
        let changed = match cfg.sampler {
            SamplerKind::Swcut => {
                let mv = s.swcut_step(&mut rng)?;
                if mv.from != mv.to {
                    tracker.relabel(&mv.cluster, mv.from, mv.to);
                    true
                } else {
                    false
                }
            }
            SamplerKind::Gibbs => {
                let mv = s.gibbs_step(&mut rng)?;
                if mv.from != mv.to {
                    tracker.relabel(&[mv.pixel], mv.from, mv.to);
                    true
                } else {
                    false
                }
            }
        };
        if changed && tracker.fraction() >= threshold {
            return Ok(Some(step as f64 / n as f64));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn flat_model(beta: f64, labels: usize) -> PosteriorModel {
        PosteriorModel::new(
            beta,
            RegionModelConfig::fixed_means(vec![0.5; labels], 0.2),
            labels,
        )
        .unwrap()
    }

    #[test]
    fn affinity_examples() {
        let p = AffinityParams {
            p_max: 0.9,
            p_min: 0.01,
            scale: 0.1,
        };
        assert_eq!(p.probability(0.0), 0.9);
        assert!((p.probability(0.1) - 0.9 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((p.probability(0.1) - 0.3311).abs() < 1e-4);
        assert_eq!(p.probability(50.0), 0.01);
        assert!(AffinityParams { p_max: 1.0, ..p }.validate().is_err());
        assert!(AffinityParams { p_min: 0.95, ..p }.validate().is_err());
        assert!(AffinityParams { scale: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn cluster_limits() {
        let img = Image::new(3, 3, vec![0.5; 9]).unwrap();
        let mut rng = stream(1, Domain::Segment, 0);
        let tight = edge_affinity(
            &img,
            AffinityParams {
                p_max: 1.0 - 1e-16,
                p_min: 1.0 - 1e-16,
                scale: 1.0,
            },
        )
        .unwrap();
        let uniform = Labeling::uniform(3, 3, 0, 2).unwrap();
        assert_eq!(form_clusters(&uniform, &tight, &mut rng).unwrap().len(), 1);

        let loose = edge_affinity(
            &img,
            AffinityParams {
                p_max: 1e-300,
                p_min: 1e-300,
                scale: 1.0,
            },
        )
        .unwrap();
        assert_eq!(form_clusters(&uniform, &loose, &mut rng).unwrap().len(), 9);

        let img = Image::new(2, 2, vec![0.5; 4]).unwrap();
        let tight = edge_affinity(
            &img,
            AffinityParams {
                p_max: 1.0 - 1e-16,
                p_min: 1.0 - 1e-16,
                scale: 1.0,
            },
        )
        .unwrap();
        let rows = Labeling::new(2, 2, vec![0, 0, 1, 1], 2).unwrap();
        let clusters = form_clusters(&rows, &tight, &mut rng).unwrap();
        assert_eq!(
            clusters,
            vec![
                Cluster {
                    pixels: vec![0, 1],
                    label: 0
                },
                Cluster {
                    pixels: vec![2, 3],
                    label: 1
                }
            ]
        );
    }

    #[test]
    fn clusters_are_pure() {
        let img = Image::new(4, 4, (0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
        let aff = edge_affinity(
            &img,
            AffinityParams {
                p_max: 0.95,
                p_min: 0.3,
                scale: 1.0,
            },
        )
        .unwrap();
        let mut rng = stream(2, Domain::Segment, 0);
        let w = random_labeling(4, 4, 3, &mut rng).unwrap();
        for _ in 0..50 {
            let clusters = form_clusters(&w, &aff, &mut rng).unwrap();
            assert_eq!(clusters.iter().map(|c| c.pixels.len()).sum::<usize>(), 16);
            for c in &clusters {
                assert!(c.pixels.iter().all(|&i| w.get(i) == c.label));
            }
        }
    }

    #[test]
    fn symmetric_weights_give_uniform_label() {
        let img = Image::new(1, 1, vec![0.5]).unwrap();
        let model = flat_model(0.7, 2);
        let mut rng = stream(3, Domain::Segment, 0);
        let mut hits = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let (w, mv) = swcut_step(
                &img,
                &Labeling::uniform(1, 1, 0, 2).unwrap(),
                AffinityParams::default(),
                &model,
                ClusterPick::Uniform,
                &mut rng,
            )
            .unwrap();
            assert_eq!(mv.alpha, 1.0);
            hits += w.get(0);
        }
        let frac = hits as f64 / trials as f64;
        assert!(
            (frac - 0.5).abs() < 4.0 * (0.25 / trials as f64).sqrt(),
            "{frac}"
        );
    }

    #[test]
    fn gibbs_conditional_example() {
        // pixel 1 has neighbors 0, 2 (label 0) and 4 (label 1)
        let img = Image::new(3, 2, vec![0.5; 6]).unwrap();
        let w = Labeling::new(3, 2, vec![0, 1, 0, 1, 1, 1], 2).unwrap();
        let mut s = Segmenter::new(
            &img,
            flat_model(1.0, 2),
            AffinityParams::default(),
            ClusterPick::Uniform,
            w,
        )
        .unwrap();
        let p = s.site_conditional(1);
        let e = std::f64::consts::E;
        assert!((p[0] - e * e / (e * e + e)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn zero_beta_flat_gibbs_is_uniform() {
        let img = Image::new(1, 1, vec![0.3]).unwrap();
        let model = flat_model(0.0, 3);
        let mut rng = stream(4, Domain::Segment, 0);
        let mut counts = [0usize; 3];
        let mut w = Labeling::uniform(1, 1, 0, 3).unwrap();
        for _ in 0..30_000 {
            w = gibbs_site_step(&img, &w, &model, &mut rng).unwrap();
            counts[w.get(0)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015);
        }
    }

    #[test]
    fn incremental_logpost_tracks_full_value() {
        let p: Vec<f64> = (0..20).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let img = Image::new(5, 4, p).unwrap();
        for region in [
            RegionModelConfig::fixed_means(vec![0.2, 0.5, 0.8], 0.3),
            RegionModelConfig::poly_fit(1, 0.3),
        ] {
            let model = PosteriorModel::new(0.8, region, 3).unwrap();
            let mut rng = stream(5, Domain::Segment, 0);
            let init = random_labeling(5, 4, 3, &mut rng).unwrap();
            let aff = AffinityParams {
                p_max: 0.8,
                p_min: 0.05,
                scale: 0.3,
            };
            let mut s =
                Segmenter::new(&img, model.clone(), aff, ClusterPick::PixelWeighted, init).unwrap();
            for k in 0..400 {
                if k % 2 == 0 {
                    s.swcut_step(&mut rng).unwrap();
                } else {
                    s.gibbs_step(&mut rng).unwrap();
                }
            }
            let full = model.log_density(&img, s.labels()).unwrap();
            assert!((s.log_posterior() - full).abs() < 1e-8);
            assert!(s.max_alpha_deviation() <= ALPHA_TOLERANCE);
        }
    }

    #[test]
    fn zero_sweeps_returns_initial() {
        let img = Image::new(4, 1, vec![0.9, 0.1, 0.8, 0.2]).unwrap();
        let cfg = SegmentConfig::new(1.0, 2, RegionModelConfig::fixed_means(vec![0.2, 0.8], 0.1));
        let out = segment(&img, &cfg, 0, 9).unwrap();
        assert_eq!(out.labeling, quantile_labeling(&img, 2).unwrap());
        assert!(out.energy.is_empty());
    }

    #[test]
    fn agreement_is_permutation_invariant() {
        let a = Labeling::new(2, 2, vec![0, 0, 1, 1], 2).unwrap();
        let b = Labeling::new(2, 2, vec![1, 1, 0, 0], 2).unwrap();
        assert_eq!(a.agreement(&b), 1.0);
        let c = Labeling::new(2, 2, vec![1, 1, 0, 1], 2).unwrap();
        assert_eq!(a.agreement(&c), 0.75);
        let mut t = AgreementTracker::new(&a, &c);
        t.relabel(&[3], 1, 0);
        assert_eq!(t.fraction(), 1.0);
        assert_eq!(permutations(3).len(), 6);
    }
}
