//! Optimal ε-approximate piecewise-linear segmentation of a dataset's
//! CDF, and the derived (global, local) hardness metric.
//!
//! A set of CDF points (key, rank) admits a single linear model with
//! max vertical residual ≤ ε iff its convex hull fits inside a sheared
//! box of height 2ε. The hull is maintained incrementally (points
//! arrive in key order), so the greedy longest-feasible-prefix sweep
//! runs in near-linear time. Greedy is optimal here because any
//! subsequence of a feasible segment is feasible.

use crate::dataset::Dataset;

/// Slack added to the 2ε feasibility comparison to absorb floating
/// point rounding on large key domains.
pub const FEASIBILITY_SLACK: f64 = 1e-6;

/// The two ε values that define the hardness plane.
pub const EPSILON_GLOBAL: u64 = 4096;
pub const EPSILON_LOCAL: u64 = 32;

/// y = slope * key + intercept, mapping keys to (fractional) ranks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearModel {
    #[inline]
    pub fn predict(&self, key: u64) -> f64 {
        self.slope * key as f64 + self.intercept
    }

    /// Ordinary least squares over (key, rank) pairs. Two or fewer
    /// points get an exact fit.
    pub fn least_squares(points: impl Iterator<Item = (f64, f64)> + Clone) -> LinearModel {
        let n = points.clone().count();
        match n {
            0 => LinearModel { slope: 1.0, intercept: 0.0 },
            1 => {
                let (x, y) = points.clone().next().unwrap();
                LinearModel { slope: 1.0, intercept: y - x }
            }
            _ => {
                let nf = n as f64;
                let mean_x = points.clone().map(|(x, _)| x).sum::<f64>() / nf;
                let mean_y = points.clone().map(|(_, y)| y).sum::<f64>() / nf;
                let mut sxx = 0.0;
                let mut sxy = 0.0;
                for (x, y) in points {
                    sxx += (x - mean_x) * (x - mean_x);
                    sxy += (x - mean_x) * (y - mean_y);
                }
                if sxx == 0.0 {
                    LinearModel { slope: 1.0, intercept: mean_y - mean_x }
                } else {
                    let slope = sxy / sxx;
                    LinearModel { slope, intercept: mean_y - slope * mean_x }
                }
            }
        }
    }
}

/// One maximal ε-feasible run of CDF points.
#[derive(Debug, Clone)]
pub struct PlaSegment {
    pub start_rank: u64,
    pub count: u64,
    pub model: LinearModel,
}

/// Minimal segmentation of a dataset at a fixed ε.
#[derive(Debug, Clone)]
pub struct PlaSegmentation {
    pub epsilon: u64,
    pub segments: Vec<PlaSegment>,
}

/// Optimal PLA segment counts at ε = 4096 (global) and ε = 32 (local).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct HardnessProfile {
    pub global_h: u64,
    pub local_h: u64,
}

/// Incremental convex hull over CDF points, answering "does some line
/// fit every point seen so far within ±ε?".
///
/// Coordinates are stored relative to the first point so cross
/// products stay well inside f64's exact-integer range.
#[derive(Debug, Clone)]
pub struct HullFitter {
    origin: Option<(f64, f64)>,
    lower: Vec<(f64, f64)>,
    upper: Vec<(f64, f64)>,
    len: usize,
}

#[inline]
fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

impl HullFitter {
    pub fn new() -> Self {
        HullFitter { origin: None, lower: Vec::new(), upper: Vec::new(), len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends a point; keys must arrive strictly increasing.
    pub fn push(&mut self, key: u64, rank: u64) {
        let (ox, oy) = *self.origin.get_or_insert((key as f64, rank as f64));
        let p = (key as f64 - ox, rank as f64 - oy);
        // lower hull: slopes increasing left to right
        while self.lower.len() >= 2
            && cross(self.lower[self.lower.len() - 2], self.lower[self.lower.len() - 1], p) <= 0.0
        {
            self.lower.pop();
        }
        self.lower.push(p);
        // upper hull: slopes decreasing left to right
        while self.upper.len() >= 2
            && cross(self.upper[self.upper.len() - 2], self.upper[self.upper.len() - 1], p) >= 0.0
        {
            self.upper.pop();
        }
        self.upper.push(p);
        self.len += 1;
    }

    /// max over points of (y - m x), attained on the upper hull.
    fn max_shear(&self, m: f64) -> f64 {
        Self::extreme(&self.upper, m, true)
    }

    /// min over points of (y - m x), attained on the lower hull.
    fn min_shear(&self, m: f64) -> f64 {
        Self::extreme(&self.lower, m, false)
    }

    fn extreme(chain: &[(f64, f64)], m: f64, maximize: bool) -> f64 {
        debug_assert!(!chain.is_empty());
        let val = |p: (f64, f64)| p.1 - m * p.0;
        // The sheared value along a convex chain is unimodal; binary
        // search the vertex where adjacent edge slopes bracket m.
        let (mut lo, mut hi) = (0usize, chain.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let a = val(chain[mid]);
            let b = val(chain[mid + 1]);
            let going_up = if maximize { b > a } else { b < a };
            if going_up {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if maximize {
            val(chain[lo]).max(val(chain[hi]))
        } else {
            val(chain[lo]).min(val(chain[hi]))
        }
    }

    /// Minimal vertical extent of the hull over all supporting slopes,
    /// plus the slope and intercept band achieving it.
    fn min_vertical_extent(&self) -> (f64, f64, f64, f64) {
        if self.len <= 2 {
            // one point: any line through it; two points: their line
            let m = if self.len == 2 {
                let a = self.lower[0];
                let b = *self.lower.last().unwrap();
                if b.0 > a.0 { (b.1 - a.1) / (b.0 - a.0) } else { 1.0 }
            } else {
                1.0
            };
            let c = self.lower.first().map(|p| p.1 - m * p.0).unwrap_or(0.0);
            return (0.0, m, c, c);
        }
        // W(m) = max_shear(m) - min_shear(m) is convex piecewise
        // linear; its minimum lies at an edge slope of one of the
        // chains.
        let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
        let mut consider = |m: f64| {
            let hi = self.max_shear(m);
            let lo = self.min_shear(m);
            let w = hi - lo;
            if w < best.0 {
                best = (w, m, hi, lo);
            }
        };
        for w in self.lower.windows(2) {
            consider((w[1].1 - w[0].1) / (w[1].0 - w[0].0));
        }
        for w in self.upper.windows(2) {
            consider((w[1].1 - w[0].1) / (w[1].0 - w[0].0));
        }
        best
    }

    /// True iff some line fits every point seen so far within ±ε.
    pub fn feasible(&self, epsilon: u64) -> bool {
        if self.len <= 2 {
            return true;
        }
        let (w, _, _, _) = self.min_vertical_extent();
        w <= 2.0 * epsilon as f64 + FEASIBILITY_SLACK
    }

    /// The line through the midpoints of the extreme supporting pair;
    /// max residual is half the minimal vertical extent.
    pub fn model(&self) -> LinearModel {
        let (ox, oy) = self.origin.unwrap_or((0.0, 0.0));
        let (_, m, hi, lo) = self.min_vertical_extent();
        let c = (hi + lo) / 2.0;
        // undo the origin shift: y - oy = m (x - ox) + c
        LinearModel { slope: m, intercept: oy + c - m * ox }
    }
}

impl Default for HullFitter {
    fn default() -> Self {
        Self::new()
    }
}

/// Does some single linear model fit all points within ±ε?
/// Points must be sorted by key, strictly increasing.
pub fn segment_feasible(points: &[(u64, u64)], epsilon: u64) -> bool {
    let mut fitter = HullFitter::new();
    for &(k, r) in points {
        fitter.push(k, r);
    }
    fitter.feasible(epsilon)
}

/// Greedy longest-feasible-prefix segmentation; minimal because
/// feasibility is prefix-monotone.
pub fn optimal_pla(d: &Dataset, epsilon: u64) -> PlaSegmentation {
    let keys = d.keys();
    let fit_model = |start: u64, end: u64| {
        let mut f = HullFitter::new();
        for r in start..end {
            f.push(keys[r as usize], r);
        }
        f.model()
    };
    let mut segments = Vec::new();
    let mut fitter = HullFitter::new();
    let mut start = 0u64;
    for (rank, &key) in keys.iter().enumerate() {
        let rank = rank as u64;
        fitter.push(key, rank);
        if !fitter.feasible(epsilon) {
            segments.push(PlaSegment {
                start_rank: start,
                count: rank - start,
                model: fit_model(start, rank),
            });
            fitter = HullFitter::new();
            fitter.push(key, rank);
            start = rank;
        }
    }
    segments.push(PlaSegment {
        start_rank: start,
        count: keys.len() as u64 - start,
        model: fit_model(start, keys.len() as u64),
    });
    PlaSegmentation { epsilon, segments }
}

/// Segment counts at the two canonical ε values.
pub fn hardness_profile(d: &Dataset) -> HardnessProfile {
    HardnessProfile {
        global_h: optimal_pla(d, EPSILON_GLOBAL).segments.len() as u64,
        local_h: optimal_pla(d, EPSILON_LOCAL).segments.len() as u64,
    }
}

/// Mean squared rank residual of a single least-squares line over the
/// whole CDF. An alternative global non-linearity measure.
pub fn mse_hardness(d: &Dataset) -> f64 {
    let keys = d.keys();
    let model = LinearModel::least_squares(
        keys.iter().enumerate().map(|(r, &k)| (k as f64, r as f64)),
    );
    keys.iter()
        .enumerate()
        .map(|(r, &k)| {
            let e = model.predict(k) - r as f64;
            e * e
        })
        .sum::<f64>()
        / keys.len() as f64
}
