//! Bounded-switching constraint for a single switch held at 0 before the
//! horizon: shift counting, vertex enumeration, and separation of the
//! alternating inequalities
//!
//! ```text
//! Σ_{j=1}^{m} (−1)^{j+1} w_{i_j} ≤ ⌊σ_max / 2⌋,
//! ```
//!
//! over increasing indices `2 ≤ i_1 < … < i_m ≤ M` (one-based) with
//! `m > σ_max` and `m − σ_max` odd.

use crate::error::{Error, Result};
use crate::timegrid::Projection;

/// Tolerance for clipping separation inputs into `[0, 1]`.
pub const BOX_TOLERANCE: f64 = 1e-9;

/// Maximum number of switchings `σ_max` allowed per switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchingBudget {
    sigma_max: usize,
}

impl SwitchingBudget {
    pub fn new(sigma_max: usize) -> Result<Self> {
        if sigma_max == 0 {
            return Err(Error::InvalidParameter("sigma_max must be positive".into()));
        }
        Ok(Self { sigma_max })
    }

    pub fn sigma_max(&self) -> usize {
        self.sigma_max
    }

    /// Right-hand side `⌊σ_max / 2⌋` of every alternating inequality.
    pub fn rhs(&self) -> f64 {
        (self.sigma_max / 2) as f64
    }

    /// Whether `m` indices form an admissible alternating inequality.
    pub fn admits_length(&self, m: usize) -> bool {
        m > self.sigma_max && (m - self.sigma_max) % 2 == 1
    }
}

/// Number of value changes in `(0, w_1, …, w_M)` for a binary pattern.
pub fn shift_count(w: &[f64]) -> Result<usize> {
    let mut prev = 0.0;
    let mut shifts = 0;
    for (index, &value) in w.iter().enumerate() {
        if value != 0.0 && value != 1.0 {
            return Err(Error::NonBinary { index, value });
        }
        if value != prev {
            shifts += 1;
        }
        prev = value;
    }
    Ok(shifts)
}

/// All binary patterns of length `m` with at most `σ_max` shifts.
pub fn enumerate_vertices(m: usize, budget: SwitchingBudget) -> Result<Vec<Vec<f64>>> {
    if m > 20 {
        return Err(Error::TooLarge(format!("vertex enumeration needs M <= 20, got {m}")));
    }
    let mut out = Vec::new();
    for bits in 0u32..(1u32 << m) {
        let w: Vec<f64> = (0..m).map(|i| f64::from((bits >> i) & 1)).collect();
        if shift_count(&w)? <= budget.sigma_max {
            out.push(w);
        }
    }
    Ok(out)
}

/// An alternating inequality on a projected vector: `+1` on the first,
/// third, … and `−1` on the second, fourth, … of `indices` (zero-based).
#[derive(Debug, Clone, PartialEq)]
pub struct AlternatingCut {
    pub indices: Vec<usize>,
    pub rhs: f64,
}

impl AlternatingCut {
    pub fn lhs(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .enumerate()
            .map(|(k, &i)| if k % 2 == 0 { w[i] } else { -w[i] })
            .sum()
    }

    pub fn violation(&self, w: &[f64]) -> f64 {
        self.lhs(w) - self.rhs
    }

    /// Dense coefficient vector of length `m`.
    pub fn coefficients(&self, m: usize) -> Vec<f64> {
        let mut a = vec![0.0; m];
        for (k, &i) in self.indices.iter().enumerate() {
            a[i] = if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        a
    }
}

/// Valid inequality `aᵀ Π(u) ≤ b` with `a ∈ [−1, 1]^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CuttingPlane {
    pub projection: Projection,
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl CuttingPlane {
    pub fn new(projection: Projection, coeffs: Vec<f64>, rhs: f64) -> Result<Self> {
        if coeffs.len() != projection.dim() {
            return Err(Error::DimensionMismatch { expected: projection.dim(), got: coeffs.len() });
        }
        if coeffs.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::InvalidParameter("cut coefficients must lie in [-1, 1]".into()));
        }
        Ok(Self { projection, coeffs, rhs })
    }

    /// Lifts a single-switch alternating cut on switch `switch` to the
    /// `n·N`-dimensional projected space.
    pub fn from_alternating(projection: Projection, switch: usize, cut: &AlternatingCut) -> Result<Self> {
        let n = projection.partition().num_intervals();
        let mut coeffs = vec![0.0; projection.dim()];
        for (k, a) in cut.coefficients(n).into_iter().enumerate() {
            coeffs[switch * n + k] = a;
        }
        Self::new(projection, coeffs, cut.rhs)
    }

    pub fn violation(&self, projected: &[f64]) -> f64 {
        crate::linalg::dot(&self.coeffs, projected) - self.rhs
    }
}

fn clip_to_box(w: &[f64]) -> Result<Vec<f64>> {
    w.iter()
        .enumerate()
        .map(|(index, &value)| {
            if !(-BOX_TOLERANCE..=1.0 + BOX_TOLERANCE).contains(&value) || value.is_nan() {
                Err(Error::OutOfBox { index, value })
            } else {
                Ok(value.clamp(0.0, 1.0))
            }
        })
        .collect()
}

/// Most violated alternating inequality for `w`, by dynamic programming over
/// positions in `O(M · σ_max)`. Returns `None` when no inequality is violated.
///
/// States track the number `m` of chosen indices exactly up to `σ_max + 1`
/// and by parity beyond; the sign of the next chosen entry is fixed by the
/// parity of `m`.
pub fn separate(w: &[f64], budget: SwitchingBudget) -> Result<Option<(AlternatingCut, f64)>> {
    let w = clip_to_box(w)?;
    let sigma = budget.sigma_max;
    let states = sigma + 3;
    let accept = sigma + 1;
    let next_state = |s: usize| if s == sigma + 2 { sigma + 1 } else { s + 1 };
    let sign = |s: usize| if s.is_multiple_of(2) { 1.0 } else { -1.0 };

    // best[s] = (value, back-pointer into `picks`)
    let mut best: Vec<Option<(f64, Option<usize>)>> = vec![None; states];
    best[0] = Some((0.0, None));
    // picks: (position, previous pick)
    let mut picks: Vec<(usize, Option<usize>)> = Vec::new();

    for (pos, &value) in w.iter().enumerate().skip(1) {
        let snapshot = best.clone();
        for s in 0..states {
            let Some((v, link)) = snapshot[s] else { continue };
            let t = next_state(s);
            let candidate = v + sign(s) * value;
            if best[t].is_none_or(|(bv, _)| candidate > bv) {
                picks.push((pos, link));
                best[t] = Some((candidate, Some(picks.len() - 1)));
            }
        }
    }

    let Some((value, mut link)) = best[accept] else { return Ok(None) };
    let violation = value - budget.rhs();
    if violation <= 0.0 {
        return Ok(None);
    }
    let mut indices = Vec::new();
    while let Some(k) = link {
        indices.push(picks[k].0);
        link = picks[k].1;
    }
    indices.reverse();
    Ok(Some((AlternatingCut { indices, rhs: budget.rhs() }, violation)))
}

/// Exhaustive counterpart of [`separate`] over all index subsets.
pub fn separate_bruteforce(w: &[f64], budget: SwitchingBudget) -> Result<Option<(AlternatingCut, f64)>> {
    let m = w.len();
    if m > 18 {
        return Err(Error::TooLarge(format!("brute-force separation needs M <= 18, got {m}")));
    }
    let w = clip_to_box(w)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    if m >= 2 {
        for mask in 1u32..(1u32 << (m - 1)) {
            let indices: Vec<usize> = (0..m - 1).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect();
            if !budget.admits_length(indices.len()) {
                continue;
            }
            let value: f64 = indices
                .iter()
                .enumerate()
                .map(|(k, &i)| if k % 2 == 0 { w[i] } else { -w[i] })
                .sum();
            if best.as_ref().is_none_or(|(_, bv)| value > *bv) {
                best = Some((indices, value));
            }
        }
    }
    Ok(best.and_then(|(indices, value)| {
        let violation = value - budget.rhs();
        (violation > 0.0).then(|| (AlternatingCut { indices, rhs: budget.rhs() }, violation))
    }))
}

/// Separates every switch block of a projected vector `w ∈ R^{n·N}` and
/// returns the most violated cut as `(switch, cut, violation)`.
pub fn separate_switches(
    w: &[f64],
    switches: usize,
    budget: SwitchingBudget,
) -> Result<Option<(usize, AlternatingCut, f64)>> {
    if switches == 0 || !w.len().is_multiple_of(switches) {
        return Err(Error::DimensionMismatch { expected: switches, got: w.len() });
    }
    let n = w.len() / switches;
    let mut best: Option<(usize, AlternatingCut, f64)> = None;
    for j in 0..switches {
        if let Some((cut, v)) = separate(&w[j * n..(j + 1) * n], budget)? {
            if best.as_ref().is_none_or(|b| v > b.2) {
                best = Some((j, cut, v));
            }
        }
    }
    Ok(best)
}
