//! State spaces, energy functions and tempered/truncated level densities.
//!
//! States are plain indices `0..N`. Grid and table models precompute their
//! energies; Potts lattices decode the index into a labeling on demand, so a
//! lattice too large to enumerate can still be stepped through.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 20;

/// Absolute tolerance on the total mass of a [`FiniteDistribution`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Fixed-size symmetric proposal sets. Slot `j` of state `x` either names a
/// neighbor or is `None` (an out-of-range proposal, rejected by the caller).
pub trait Neighborhood {
    fn size(&self) -> usize;
    fn neighbor(&self, state: usize, slot: usize) -> Option<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PottsLattice {
    pub width: usize,
    pub height: usize,
    pub labels: usize,
}

impl PottsLattice {
    pub fn sites(&self) -> usize {
        self.width * self.height
    }

    /// Site `i` carries digit `i` of the base-`labels` expansion of the index.
    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sites());
        for _ in 0..self.sites() {
            out.push(index % self.labels);
            index /= self.labels;
        }
        out
    }

    pub fn encode(&self, labels: &[usize]) -> usize {
        labels.iter().rev().fold(0, |acc, &l| acc * self.labels + l)
    }

    pub fn label_at(&self, index: usize, site: usize) -> usize {
        (index / self.labels.pow(site as u32)) % self.labels
    }

    pub fn with_label(&self, index: usize, site: usize, label: usize) -> usize {
        let place = self.labels.pow(site as u32);
        let old = (index / place) % self.labels;
        index - old * place + label * place
    }

    /// Horizontal then vertical lattice edges, 4-neighborhood, no wraparound.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        lattice_edges(self.width, self.height)
    }
}

pub(crate) fn lattice_edges(width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for y in 0..height {
        for x in 0..width.saturating_sub(1) {
            let i = y * width + x;
            edges.push((i, i + 1));
        }
    }
    for y in 0..height.saturating_sub(1) {
        for x in 0..width {
            let i = y * width + x;
            edges.push((i, i + width));
        }
    }
    edges
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateSpace {
    /// `n` states on a path; the local neighborhood is `±1` in index.
    Table { n: usize },
    /// Uniform 1-D grid of `points` nodes spanning `[lo, hi]`.
    Grid1d { points: usize, lo: f64, hi: f64 },
    /// `nx × ny` grid, row-major (`index = iy * nx + ix`), 4-neighborhood.
    Grid2d { nx: usize, ny: usize },
    /// Labelings of a `width × height` lattice with `labels` values per site.
    Potts(PottsLattice),
}

impl StateSpace {
    pub fn state_count(&self) -> Option<usize> {
        match *self {
            StateSpace::Table { n } => Some(n),
            StateSpace::Grid1d { points, .. } => Some(points),
            StateSpace::Grid2d { nx, ny } => nx.checked_mul(ny),
            StateSpace::Potts(lat) => lat.labels.checked_pow(lat.sites() as u32),
        }
    }

    /// Grid coordinate of a 1-D grid node.
    pub fn coordinate(&self, state: usize) -> Option<f64> {
        match *self {
            StateSpace::Grid1d { points, lo, hi } => {
                Some(lo + (hi - lo) * state as f64 / (points - 1) as f64)
            }
            _ => None,
        }
    }
}

impl Neighborhood for StateSpace {
    fn size(&self) -> usize {
        match *self {
            StateSpace::Table { .. } | StateSpace::Grid1d { .. } => 2,
            StateSpace::Grid2d { .. } => 4,
            StateSpace::Potts(lat) => lat.sites() * (lat.labels - 1),
        }
    }

    fn neighbor(&self, state: usize, slot: usize) -> Option<usize> {
        match *self {
            StateSpace::Table { n: count } | StateSpace::Grid1d { points: count, .. } => match slot
            {
                0 => state.checked_sub(1),
                _ => (state + 1 < count).then_some(state + 1),
            },
            StateSpace::Grid2d { nx, ny } => {
                let (ix, iy) = (state % nx, state / nx);
                match slot {
                    0 => (ix > 0).then(|| state - 1),
                    1 => (ix + 1 < nx).then(|| state + 1),
                    2 => (iy > 0).then(|| state - nx),
                    _ => (iy + 1 < ny).then(|| state + nx),
                }
            }
            StateSpace::Potts(lat) => {
                let site = slot / (lat.labels - 1);
                let shift = slot % (lat.labels - 1) + 1;
                let old = lat.label_at(state, site);
                Some(lat.with_label(state, site, (old + shift) % lat.labels))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum EnergySource {
    Table(Vec<f64>),
    Potts {
        beta: f64,
        edges: Vec<(usize, usize)>,
    },
}

/// An energy function `h(x) = -log(unnormalized target)` on a state space.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    space: StateSpace,
    source: EnergySource,
    count: usize,
    enumerable: bool,
}

impl EnergyModel {
    /// Model over a table or grid with one precomputed energy per state.
    pub fn from_energies(space: StateSpace, energies: Vec<f64>, cap: usize) -> Result<Self> {
        let count = space
            .state_count()
            .ok_or_else(|| Error::config("model", "state count overflows"))?;
        if matches!(space, StateSpace::Potts(_)) {
            return Err(Error::config(
                "model",
                "Potts lattices compute their own energy",
            ));
        }
        if count == 0 {
            return Err(Error::config("model", "state space is empty"));
        }
        if energies.len() != count {
            return Err(Error::Shape(format!(
                "{} energies for {} states",
                energies.len(),
                count
            )));
        }
        if let Some(i) = energies.iter().position(|e| !e.is_finite()) {
            return Err(Error::config(
                format!("model.energy[{i}]"),
                "energy is not finite",
            ));
        }
        Ok(Self {
            space,
            source: EnergySource::Table(energies),
            count,
            enumerable: count <= cap,
        })
    }

    /// Table model with unnormalized weights (`h = -ln w`), on a path topology.
    pub fn table(weights: &[f64]) -> Result<Self> {
        let energies = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                if w > 0.0 && w.is_finite() {
                    Ok(-w.ln())
                } else {
                    Err(Error::config(
                        format!("model.weights[{i}]"),
                        "weight must be positive",
                    ))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_energies(StateSpace::Table { n: weights.len() }, energies, usize::MAX)
    }

    /// Table model given energies directly.
    pub fn table_energies(energies: Vec<f64>) -> Result<Self> {
        Self::from_energies(
            StateSpace::Table { n: energies.len() },
            energies,
            usize::MAX,
        )
    }

    pub fn grid_1d(
        points: usize,
        bounds: (f64, f64),
        cap: usize,
        h: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if points < 2 {
            return Err(Error::config("model.points", "need at least 2 grid points"));
        }
        let (lo, hi) = bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config("model.bounds", "bounds must satisfy lo < hi"));
        }
        let space = StateSpace::Grid1d { points, lo, hi };
        let energies = (0..points)
            .map(|i| h(space.coordinate(i).expect("1-D grid")))
            .collect();
        Self::from_energies(space, energies, cap)
    }

    pub fn grid_2d(
        nx: usize,
        ny: usize,
        x_bounds: (f64, f64),
        y_bounds: (f64, f64),
        cap: usize,
        h: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::config(
                "model.points",
                "need at least 2 grid points per axis",
            ));
        }
        let coord =
            |i: usize, n: usize, (lo, hi): (f64, f64)| lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let energies = (0..nx * ny)
            .map(|s| h(coord(s % nx, nx, x_bounds), coord(s / nx, ny, y_bounds)))
            .collect();
        Self::from_energies(StateSpace::Grid2d { nx, ny }, energies, cap)
    }

    /// `h(x) = depth * (x^2 - 1)^2` on a uniform grid.
    pub fn double_well_grid(
        points: usize,
        bounds: (f64, f64),
        depth: f64,
        cap: usize,
    ) -> Result<Self> {
        if !(depth > 0.0) {
            return Err(Error::config("model.depth", "depth must be positive"));
        }
        Self::grid_1d(points, bounds, cap, |x| depth * (x * x - 1.0).powi(2))
    }

    /// `h(x) = -log sum_k w_k N(x; mu_k, sd_k)` on a uniform grid.
    pub fn gaussian_mixture_grid(
        means: &[f64],
        sds: &[f64],
        weights: &[f64],
        points: usize,
        bounds: (f64, f64),
        cap: usize,
    ) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::config("model.means", "need at least one component"));
        }
        if sds.len() != means.len() {
            return Err(Error::config("model.sds", "length must match model.means"));
        }
        if weights.len() != means.len() {
            return Err(Error::config(
                "model.weights",
                "length must match model.means",
            ));
        }
        if let Some(i) = sds.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::config(
                format!("model.sds[{i}]"),
                "standard deviation must be positive",
            ));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0)) {
            return Err(Error::config(
                format!("model.weights[{i}]"),
                "weight must be positive",
            ));
        }
        let ln_norm = 0.5 * (2.0 * std::f64::consts::PI).ln();
        Self::grid_1d(points, bounds, cap, |x| {
            let terms: Vec<f64> = means
                .iter()
                .zip(sds)
                .zip(weights)
                .map(|((m, s), w)| w.ln() - s.ln() - ln_norm - 0.5 * ((x - m) / s).powi(2))
                .collect();
            -log_sum_exp(&terms)
        })
    }

    /// Potts prior on a lattice: `h(W) = -beta * #{agreeing edges}`.
    pub fn potts_grid(
        width: usize,
        height: usize,
        labels: usize,
        beta: f64,
        cap: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config(
                "model.width",
                "lattice must have at least one site",
            ));
        }
        if labels < 2 {
            return Err(Error::config("model.labels", "need at least 2 labels"));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::config(
                "model.beta",
                "beta must be finite and non-negative",
            ));
        }
        let lat = PottsLattice {
            width,
            height,
            labels,
        };
        let space = StateSpace::Potts(lat);
        let count = space
            .state_count()
            .ok_or_else(|| Error::config("model", "labeling count overflows the state index"))?;
        Ok(Self {
            space,
            source: EnergySource::Potts {
                beta,
                edges: lat.edges(),
            },
            count,
            enumerable: count <= cap,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn state_count(&self) -> usize {
        self.count
    }

    pub fn enumerable(&self) -> bool {
        self.enumerable
    }

    pub fn energy(&self, state: usize) -> Result<f64> {
        if state >= self.count {
            return Err(Error::Domain {
                state,
                size: self.count,
            });
        }
        Ok(match &self.source {
            EnergySource::Table(e) => e[state],
            EnergySource::Potts { beta, edges } => {
                let StateSpace::Potts(lat) = self.space else {
                    unreachable!()
                };
                let w = lat.decode(state);
                let agree = edges.iter().filter(|&&(i, j)| w[i] == w[j]).count();
                -beta * agree as f64
            }
        })
    }

    /// Precomputed energy table, when the model has one.
    pub fn energies(&self) -> Option<&[f64]> {
        match &self.source {
            EnergySource::Table(e) => Some(e),
            EnergySource::Potts { .. } => None,
        }
    }

    pub fn level_logdensity(&self, level: &LadderLevel, state: usize) -> Result<f64> {
        Ok(level.logdensity(self.energy(state)?))
    }

    pub fn require_enumerable(&self) -> Result<()> {
        if self.enumerable {
            Ok(())
        } else {
            Err(Error::Capability(format!(
                "model with {} states exceeds the enumeration cap",
                self.count
            )))
        }
    }

    /// All energies of an enumerable model.
    pub fn energy_vector(&self) -> Result<Vec<f64>> {
        self.require_enumerable()?;
        match &self.source {
            EnergySource::Table(e) => Ok(e.clone()),
            EnergySource::Potts { .. } => (0..self.count).map(|s| self.energy(s)).collect(),
        }
    }
}

/// Builtin model descriptors as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Table {
        weights: Vec<f64>,
    },
    DoubleWellGrid {
        points: usize,
        bounds: (f64, f64),
        #[serde(default = "default_depth")]
        depth: f64,
    },
    GaussianMixtureGrid {
        means: Vec<f64>,
        sds: Vec<f64>,
        weights: Vec<f64>,
        points: usize,
        bounds: (f64, f64),
    },
    PottsGrid {
        width: usize,
        height: usize,
        labels: usize,
        beta: f64,
    },
}

fn default_depth() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn build(&self, cap: usize) -> Result<EnergyModel> {
        match self {
            ModelSpec::Table { weights } => {
                let mut m = EnergyModel::table(weights)?;
                m.enumerable = m.count <= cap;
                Ok(m)
            }
            ModelSpec::DoubleWellGrid {
                points,
                bounds,
                depth,
            } => EnergyModel::double_well_grid(*points, *bounds, *depth, cap),
            ModelSpec::GaussianMixtureGrid {
                means,
                sds,
                weights,
                points,
                bounds,
            } => EnergyModel::gaussian_mixture_grid(means, sds, weights, *points, *bounds, cap),
            ModelSpec::PottsGrid {
                width,
                height,
                labels,
                beta,
            } => EnergyModel::potts_grid(*width, *height, *labels, *beta, cap),
        }
    }
}

/// One rung of the ladder: `log q_i(x) = -max(h(x), H_i) / T_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub index: usize,
    pub temperature: f64,
    /// Energy floor; `-inf` disables truncation.
    pub truncation: f64,
}

impl LadderLevel {
    pub fn target() -> Self {
        Self {
            index: 0,
            temperature: 1.0,
            truncation: f64::NEG_INFINITY,
        }
    }

    pub fn new(index: usize, temperature: f64, truncation: f64) -> Self {
        Self {
            index,
            temperature,
            truncation,
        }
    }

    #[inline]
    pub fn logdensity(&self, energy: f64) -> f64 {
        -energy.max(self.truncation) / self.temperature
    }
}

/// Validated ladder of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    levels: Vec<LadderLevel>,
}

impl Ladder {
    pub fn new(levels: Vec<LadderLevel>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::config("ladder.temperatures", "ladder has no levels"))?;
        if first.temperature != 1.0 {
            return Err(Error::config(
                "ladder.temperatures[0]",
                "level 0 must have temperature 1",
            ));
        }
        if first.truncation != f64::NEG_INFINITY {
            return Err(Error::config(
                "ladder.truncations[0]",
                "level 0 must be untruncated",
            ));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.index != i {
                return Err(Error::config(
                    format!("ladder.levels[{i}]"),
                    "level indices must be 0..K",
                ));
            }
            if !(l.temperature >= 1.0) || !l.temperature.is_finite() {
                return Err(Error::config(
                    format!("ladder.temperatures[{i}]"),
                    "temperature must be finite and at least 1",
                ));
            }
            if l.truncation.is_nan() || l.truncation == f64::INFINITY {
                return Err(Error::config(
                    format!("ladder.truncations[{i}]"),
                    "truncation must be below +inf",
                ));
            }
        }
        for (i, pair) in levels.windows(2).enumerate() {
            if !(pair[1].temperature > pair[0].temperature) {
                return Err(Error::config(
                    format!("ladder.temperatures[{}]", i + 1),
                    "temperatures must be strictly increasing",
                ));
            }
            if pair[1].truncation < pair[0].truncation {
                return Err(Error::config(
                    format!("ladder.truncations[{}]", i + 1),
                    "truncations must be non-decreasing",
                ));
            }
        }
        Ok(Self { levels })
    }

    /// `T_i = ratio^i`, `H_i = h_min + i * delta_h` for `i >= 1`.
    pub fn geometric(count: usize, ratio: f64, h_min: f64, delta_h: f64) -> Result<Self> {
        let levels = (0..count)
            .map(|i| {
                if i == 0 {
                    LadderLevel::target()
                } else {
                    LadderLevel::new(i, ratio.powi(i as i32), h_min + i as f64 * delta_h)
                }
            })
            .collect();
        Self::new(levels)
    }

    pub fn levels(&self) -> &[LadderLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Truncation energies of levels `1..K`, the default ring boundaries.
    pub fn truncation_boundaries(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.levels[1..]
            .iter()
            .map(|l| l.truncation)
            .filter(|h| h.is_finite())
            .collect();
        b.dedup();
        b
    }
}

/// Exact probability vector over an ordered list of state indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    states: Vec<usize>,
    probs: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(states: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if states.len() != probs.len() {
            return Err(Error::Shape(format!(
                "{} states but {} probabilities",
                states.len(),
                probs.len()
            )));
        }
        if states.is_empty() {
            return Err(Error::Shape("empty distribution".into()));
        }
        if let Some(i) = probs.iter().position(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Numeric(format!("probability {i} is {}", probs[i])));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Numeric(format!("probabilities sum to {total}")));
        }
        Ok(Self { states, probs })
    }

    /// Dense distribution over `0..probs.len()`.
    pub fn dense(probs: Vec<f64>) -> Result<Self> {
        Self::new((0..probs.len()).collect(), probs)
    }

    /// Normalize unnormalized nonnegative weights.
    pub fn from_weights(states: Vec<usize>, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numeric(format!("weights sum to {total}")));
        }
        Self::new(states, weights.iter().map(|w| w / total).collect())
    }

    /// Normalize log-weights with the max exponent subtracted first.
    pub fn from_log_weights(states: Vec<usize>, log_weights: &[f64]) -> Result<Self> {
        let lse = log_sum_exp(log_weights);
        if !lse.is_finite() {
            return Err(Error::Numeric(format!("log normalizer is {lse}")));
        }
        let mut probs: Vec<f64> = log_weights.iter().map(|l| (l - lse).exp()).collect();
        // exp rounding can leave the total a few ulps off one.
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(states, probs)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::dense(vec![1.0 / n as f64; n])
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// True when the states are exactly `0..len`.
    pub fn is_dense(&self) -> bool {
        self.states.iter().enumerate().all(|(i, &s)| i == s)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.states.iter().copied().zip(self.probs.iter().copied())
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn enumerate_distribution(
    model: &EnergyModel,
    level: &LadderLevel,
) -> Result<FiniteDistribution> {
    let energies = model.energy_vector()?;
    let logw: Vec<f64> = energies.iter().map(|&e| level.logdensity(e)).collect();
    FiniteDistribution::from_log_weights((0..model.state_count()).collect(), &logw)
}

/// Restrict `dist` to states with energy in `[lo, hi)` and renormalize.
pub fn truncate_to_ring(
    dist: &FiniteDistribution,
    model: &EnergyModel,
    lo: f64,
    hi: f64,
) -> Result<FiniteDistribution> {
    let mut states = Vec::new();
    let mut weights = Vec::new();
    for (s, p) in dist.iter() {
        let e = model.energy(s)?;
        if lo <= e && e < hi {
            states.push(s);
            weights.push(p);
        }
    }
    if states.is_empty() {
        return Err(Error::EmptyRing { lo, hi });
    }
    if states.len() == dist.len() {
        return Ok(dist.clone());
    }
    FiniteDistribution::from_weights(states, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn table_energy_is_negative_log_weight() {
        let m = EnergyModel::table(&[1.0, 1.0 / 3.0]).unwrap();
        assert!(close(m.energy(1).unwrap(), 3f64.ln(), 1e-15));
        assert_eq!(m.energy(1).unwrap(), m.energy(1).unwrap());
        assert_eq!(m.energy(2), Err(Error::Domain { state: 2, size: 2 }));
    }

    #[test]
    fn double_well_zero_at_one() {
        let m =
            EnergyModel::double_well_grid(41, (-2.0, 2.0), 1.0, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(m.space().coordinate(30), Some(1.0));
        assert_eq!(m.energy(30).unwrap(), 0.0);
    }

    #[test]
    fn level_logdensity_examples() {
        assert_eq!(LadderLevel::new(1, 2.0, 1.0).logdensity(2.0), -1.0);
        assert_eq!(LadderLevel::new(1, 2.0, 0.0).logdensity(-1.0), 0.0);
        assert_eq!(LadderLevel::target().logdensity(0.7), -0.7);
    }

    #[test]
    fn enumerate_two_states() {
        let m = EnergyModel::table_energies(vec![0.0, 3f64.ln()]).unwrap();
        let d = enumerate_distribution(&m, &LadderLevel::target()).unwrap();
        assert!(close(d.probs()[0], 0.75, 1e-15));
        assert!(close(d.probs()[1], 0.25, 1e-15));
    }

    #[test]
    fn enumerate_uniform_energies() {
        let m = EnergyModel::table_energies(vec![2.5; 7]).unwrap();
        let d = enumerate_distribution(&m, &LadderLevel::new(1, 3.0, 0.0)).unwrap();
        assert!(d.probs().iter().all(|p| close(*p, 1.0 / 7.0, 1e-15)));
    }

    #[test]
    fn double_well_enumeration_is_symmetric() {
        let m =
            EnergyModel::double_well_grid(41, (-2.0, 2.0), 1.0, DEFAULT_ENUMERATION_CAP).unwrap();
        let d = enumerate_distribution(&m, &LadderLevel::target()).unwrap();
        for i in 0..41 {
            assert!(close(d.probs()[i], d.probs()[40 - i], 1e-15));
        }
        // bimodal: the wells at x = +-1 beat the barrier at x = 0
        assert!(d.probs()[10] > d.probs()[20] && d.probs()[30] > d.probs()[20]);
    }

    #[test]
    fn enumerate_requires_enumerable() {
        let m = EnergyModel::potts_grid(5, 5, 2, 0.5, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!(!m.enumerable());
        assert!(matches!(
            enumerate_distribution(&m, &LadderLevel::target()),
            Err(Error::Capability(_))
        ));
        // still steppable
        assert!(m.energy(12345).is_ok());
    }

    #[test]
    fn log_domain_survives_huge_energy_gaps() {
        let m = EnergyModel::table_energies(vec![0.0, 800.0, 1600.0]).unwrap();
        let d = enumerate_distribution(&m, &LadderLevel::target()).unwrap();
        assert_eq!(d.probs()[0], 1.0);
        assert!(d.probs().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn truncate_examples() {
        let m = EnergyModel::table_energies(vec![0.5, 1.7]).unwrap();
        let d = FiniteDistribution::dense(vec![0.6, 0.4]).unwrap();
        assert_eq!(
            truncate_to_ring(&d, &m, f64::NEG_INFINITY, f64::INFINITY).unwrap(),
            d
        );
        let r = truncate_to_ring(&d, &m, 0.0, 1.0).unwrap();
        assert_eq!(r.states(), &[0]);
        assert_eq!(r.probs(), &[1.0]);

        let m4 = EnergyModel::table_energies(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let u = FiniteDistribution::uniform(4).unwrap();
        let r = truncate_to_ring(&u, &m4, 1.0, 3.0).unwrap();
        assert_eq!(r.states(), &[1, 2]);
        assert!(r.probs().iter().all(|p| close(*p, 0.5, 1e-15)));
        assert!(matches!(
            truncate_to_ring(&u, &m4, 5.0, 6.0),
            Err(Error::EmptyRing { .. })
        ));
    }

    #[test]
    fn builtin_models() {
        let t = ModelSpec::Table {
            weights: vec![3.0, 1.0],
        }
        .build(DEFAULT_ENUMERATION_CAP)
        .unwrap();
        let d = enumerate_distribution(&t, &LadderLevel::target()).unwrap();
        assert!(close(d.probs()[0], 0.75, 1e-15));

        let p = ModelSpec::PottsGrid {
            width: 2,
            height: 2,
            labels: 2,
            beta: 0.3,
        }
        .build(DEFAULT_ENUMERATION_CAP)
        .unwrap();
        assert!(p.enumerable());
        assert_eq!(p.state_count(), 16);

        let g = ModelSpec::GaussianMixtureGrid {
            means: vec![-1.5, 1.5],
            sds: vec![0.4, 0.4],
            weights: vec![1.0, 1.0],
            points: 31,
            bounds: (-3.0, 3.0),
        }
        .build(DEFAULT_ENUMERATION_CAP)
        .unwrap();
        let d = enumerate_distribution(&g, &LadderLevel::target()).unwrap();
        for i in 0..31 {
            assert!(close(d.probs()[i], d.probs()[30 - i], 1e-12));
        }
    }

    #[test]
    fn builtin_model_errors() {
        let bad = ModelSpec::GaussianMixtureGrid {
            means: vec![0.0],
            sds: vec![-1.0],
            weights: vec![1.0],
            points: 10,
            bounds: (-1.0, 1.0),
        };
        assert!(
            matches!(bad.build(DEFAULT_ENUMERATION_CAP), Err(Error::Config { key, .. }) if key == "model.sds[0]")
        );
        assert!(ModelSpec::PottsGrid {
            width: 2,
            height: 2,
            labels: 1,
            beta: 1.0
        }
        .build(10)
        .is_err());
        assert!(ModelSpec::DoubleWellGrid {
            points: 1,
            bounds: (-1.0, 1.0),
            depth: 1.0
        }
        .build(10)
        .is_err());
        let big = ModelSpec::Table {
            weights: vec![1.0; 8],
        }
        .build(4)
        .unwrap();
        assert!(!big.enumerable());
    }

    #[test]
    fn potts_encoding_roundtrip() {
        let lat = PottsLattice {
            width: 3,
            height: 2,
            labels: 3,
        };
        for idx in [0usize, 1, 17, 400, 728] {
            let w = lat.decode(idx);
            assert_eq!(lat.encode(&w), idx);
            for s in 0..lat.sites() {
                assert_eq!(lat.label_at(idx, s), w[s]);
            }
        }
        assert_eq!(lat.edges().len(), 2 * 2 + 3);
    }

    #[test]
    fn neighborhoods_are_symmetric() {
        let spaces = [
            StateSpace::Table { n: 5 },
            StateSpace::Grid2d { nx: 3, ny: 4 },
            StateSpace::Potts(PottsLattice {
                width: 2,
                height: 2,
                labels: 3,
            }),
        ];
        for space in spaces {
            let n = space.state_count().unwrap();
            for x in 0..n {
                for slot in 0..space.size() {
                    if let Some(y) = space.neighbor(x, slot) {
                        assert_ne!(x, y);
                        assert!((0..space.size()).any(|s| space.neighbor(y, s) == Some(x)));
                    }
                }
            }
        }
    }

    #[test]
    fn ladder_validation() {
        assert!(Ladder::geometric(3, 2.0, 0.0, 1.0).is_ok());
        let bad = Ladder::new(vec![LadderLevel::target(), LadderLevel::new(1, 0.5, 0.0)]);
        assert!(matches!(bad, Err(Error::Config { key, .. }) if key == "ladder.temperatures[1]"));
        let bad = Ladder::new(vec![
            LadderLevel::target(),
            LadderLevel::new(1, 2.0, 3.0),
            LadderLevel::new(2, 4.0, 1.0),
        ]);
        assert!(matches!(bad, Err(Error::Config { key, .. }) if key == "ladder.truncations[2]"));
        let l = Ladder::geometric(3, 2.0, 0.0, 1.0).unwrap();
        assert_eq!(l.truncation_boundaries(), vec![1.0, 2.0]);
    }
}
