//! Exact eigenanalysis of reversible kernels, the independence-sampler gap
//! check, ratio extremes, coarsening and total-variation distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{MarkovKernel, Mis, TransitionMatrix};
use crate::statespace::FiniteDistribution;

/// Largest kernel the dense eigensolver accepts.
pub const MAX_EIGEN_STATES: usize = 2048;

/// Reversibility tolerance for [`eigen_spectrum`].
pub const REVERSIBILITY_TOLERANCE: f64 = 1e-10;

/// Tolerance for deciding that a bound equals the second eigenvalue.
pub const BOUND_MATCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchedBound {
    /// `1 - min pi/q`
    Printed,
    /// `1 - min q/pi`
    Alternate,
    Both,
    Neither,
}

impl MatchedBound {
    pub fn classify(lambda2: f64, printed: f64, alternate: f64, tolerance: f64) -> Self {
        let p = (lambda2 - printed).abs() <= tolerance;
        let a = (lambda2 - alternate).abs() <= tolerance;
        match (p, a) {
            (true, true) => MatchedBound::Both,
            (true, false) => MatchedBound::Printed,
            (false, true) => MatchedBound::Alternate,
            (false, false) => MatchedBound::Neither,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MatchedBound::Printed => "printed",
            MatchedBound::Alternate => "alternate",
            MatchedBound::Both => "both",
            MatchedBound::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Descending; the first entry is 1 for a stochastic kernel.
    pub eigenvalues: Vec<f64>,
    /// Second-largest (signed) eigenvalue; absent for a one-state space.
    pub lambda2: Option<f64>,
    pub gap: Option<f64>,
    pub ratio_min_pi_over_q: Option<f64>,
    pub ratio_max_pi_over_q: Option<f64>,
    pub bound_printed: Option<f64>,
    pub bound_alternate: Option<f64>,
    pub matched_bound: Option<MatchedBound>,
}

impl SpectralReport {
    fn from_eigenvalues(eigenvalues: Vec<f64>) -> Self {
        let lambda2 = eigenvalues.get(1).copied();
        Self {
            eigenvalues,
            lambda2,
            gap: lambda2.map(|l| 1.0 - l),
            ratio_min_pi_over_q: None,
            ratio_max_pi_over_q: None,
            bound_printed: None,
            bound_alternate: None,
            matched_bound: None,
        }
    }
}

/// Dense symmetric matrix eigendecomposition by cyclic Jacobi rotations.
///
/// `a` is row-major `n × n` and must be symmetric. Returns the eigenvalues
/// (unsorted) and the row-major matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    const MAX_SWEEPS: usize = 100;
    if a.len() != n * n {
        return Err(Error::Shape(format!(
            "{} entries for a {n}x{n} matrix",
            a.len()
        )));
    }
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            let vals = (0..n).map(|i| a[i * n + i]).collect();
            return Ok((vals, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J, touching rows/columns p and q only
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Numeric("Jacobi iteration did not converge".into()))
}

/// `S = D^{1/2} K D^{-1/2}` with `D = diag(pi)`, symmetrized.
pub fn symmetrize(k: &TransitionMatrix, pi: &[f64]) -> Vec<f64> {
    let n = k.n();
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let mut s = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            s[x * n + y] = sq[x] * k.get(x, y) / sq[y];
        }
    }
    for x in 0..n {
        for y in (x + 1)..n {
            let m = 0.5 * (s[x * n + y] + s[y * n + x]);
            s[x * n + y] = m;
            s[y * n + x] = m;
        }
    }
    s
}

/// Full spectrum of a kernel reversible with respect to `pi`.
pub fn eigen_spectrum(k: &TransitionMatrix, pi: &FiniteDistribution) -> Result<SpectralReport> {
    let n = k.n();
    if pi.len() != n {
        return Err(Error::Shape(format!(
            "{n}-state kernel with a {}-state distribution",
            pi.len()
        )));
    }
    if n > MAX_EIGEN_STATES {
        return Err(Error::Capability(format!(
            "{n} states exceed the dense eigensolver cap"
        )));
    }
    if let Some(x) = pi.probs().iter().position(|p| !(*p > 0.0)) {
        return Err(Error::Support { state: x });
    }
    let (x, y, violation) = k.reversibility_violation(pi.probs());
    if violation > REVERSIBILITY_TOLERANCE {
        return Err(Error::Reversibility { x, y, violation });
    }
    let (mut vals, _) = symmetric_eigen(&symmetrize(k, pi.probs()), n)?;
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(SpectralReport::from_eigenvalues(vals))
}

/// `(min_x pi(x)/q(x), max_x pi(x)/q(x))`.
pub fn ratio_extremes(pi: &FiniteDistribution, q: &FiniteDistribution) -> Result<(f64, f64)> {
    if pi.len() != q.len() {
        return Err(Error::Shape(format!("{} vs {} states", pi.len(), q.len())));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, (p, qx)) in pi.probs().iter().zip(q.probs()).enumerate() {
        if *qx == 0.0 {
            if *p > 0.0 {
                return Err(Error::Support { state: x });
            }
            continue;
        }
        let r = p / qx;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

/// Exact spectral report of the independence sampler with proposal `q`,
/// with both candidate closed forms for its second eigenvalue.
pub fn mis_gap_report(pi: &FiniteDistribution, q: &FiniteDistribution) -> Result<SpectralReport> {
    let (rmin, rmax) = ratio_extremes(pi, q)?;
    let kernel = Mis::from_distributions(pi, q.clone())?;
    let mut report = eigen_spectrum(&kernel.exact_matrix()?, pi)?;
    let printed = 1.0 - rmin;
    let alternate = 1.0 - 1.0 / rmax;
    report.ratio_min_pi_over_q = Some(rmin);
    report.ratio_max_pi_over_q = Some(rmax);
    report.bound_printed = Some(printed);
    report.bound_alternate = Some(alternate);
    report.matched_bound = report
        .lambda2
        .map(|l2| MatchedBound::classify(l2, printed, alternate, BOUND_MATCH_TOLERANCE));
    Ok(report)
}

/// Surjection from fine states onto coarse cells `0..M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    map: Vec<usize>,
    cells: usize,
}

impl Partition {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let cells = map.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; cells];
        map.iter().for_each(|&c| seen[c] = true);
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::config(
                "partition",
                format!("cell {c} has no fine states"),
            ));
        }
        Ok(Self { map, cells })
    }

    /// Consecutive blocks of `cell_size` states (the last block may be shorter).
    pub fn contiguous(n: usize, cell_size: usize) -> Result<Self> {
        if cell_size == 0 {
            return Err(Error::config("spectral.cell_size", "must be at least 1"));
        }
        Self::new((0..n).map(|i| i / cell_size).collect())
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn fine_len(&self) -> usize {
        self.map.len()
    }

    pub fn cell_of(&self, fine: usize) -> usize {
        self.map[fine]
    }
}

pub fn coarsen(dist: &FiniteDistribution, part: &Partition) -> Result<FiniteDistribution> {
    if dist.len() != part.fine_len() {
        return Err(Error::Shape(format!(
            "partition covers {} states, distribution has {}",
            part.fine_len(),
            dist.len()
        )));
    }
    let mut probs = vec![0.0; part.cells()];
    for (i, p) in dist.probs().iter().enumerate() {
        probs[part.cell_of(i)] += p;
    }
    FiniteDistribution::dense(probs)
}

/// `0.5 * sum |p - q|`.
pub fn tv_distance(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    tv_distance_slices(p.probs(), q.probs())
}

pub fn tv_distance_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("{} vs {} states", p.len(), q.len())));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Stationary distribution of an irreducible kernel by solving
/// `pi (K - I) = 0`, `sum pi = 1` with partial-pivot elimination.
pub fn stationary_distribution(k: &TransitionMatrix) -> Result<FiniteDistribution> {
    let n = k.n();
    // A = (K - I)^T with the last equation replaced by the normalization
    let mut a = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            a[y * n + x] = k.get(x, y) - if x == y { 1.0 } else { 0.0 };
        }
    }
    for x in 0..n {
        a[(n - 1) * n + x] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("nonempty");
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numeric(
                "kernel is reducible; stationary law is not unique".into(),
            ));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        for row in (col + 1)..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for j in col..n {
                    a[row * n + j] -= f * a[col * n + j];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|j| a[row * n + j] * x[j]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    // clip rounding noise below zero, then renormalize
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = x.iter().sum();
    FiniteDistribution::dense(x.into_iter().map(|v| v / total).collect())
}
