//! Which keys can win the attention argmax?
//!
//! Attention scores are linear in the key, so a key that is a convex
//! combination of the other keys can never score strictly higher than all of
//! them: for any query `v`, `v . h_i = sum_j l_j v . h_j <= max_j v . h_j`.
//! Conversely a key outside the hull of the others is strictly separated from
//! it by some hyperplane, and the normal of that hyperplane is a query that
//! selects it.
//!
//! Membership is decided with a phase-1 feasibility LP over convex weights.
//! Keys sitting on the boundary of the hull, and exact duplicates, are
//! therefore unselectable: a tie is not a strict argmax.

mod io;
mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use io::{
    load_keyset, load_report, parse_keyset, save_keyset, save_report, write_keyset_csv,
};
pub use sweep::{monte_carlo_sweep, monte_carlo_sweep_with, HeatmapGrid};

use crate::geometry::{layernorm, LayerNormVariant};
use crate::linalg::{dot, max_abs_diff, norm, Mat};
use crate::lp::{self, StandardForm};
use crate::par::{map_range, Exec};
use crate::{Error, Result};

/// Hull-membership tolerance on the phase-1 residual.
pub const DEFAULT_TOL: f64 = 1e-7;

/// An ordered set of `n` keys in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySet {
    keys: Mat,
}

impl KeySet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptySet);
        };
        let d = first.len();
        if d == 0 {
            return Err(Error::Precondition("keys must have dimension >= 1".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("key {i} has a non-finite entry")));
            }
        }
        Ok(KeySet {
            keys: Mat::from_rows(&rows),
        })
    }

    pub fn from_mat(keys: Mat) -> Result<Self> {
        if keys.rows() == 0 {
            return Err(Error::EmptySet);
        }
        if keys.cols() == 0 {
            return Err(Error::Precondition("keys must have dimension >= 1".into()));
        }
        if !keys.is_finite() {
            return Err(Error::NonFinite("key set has a non-finite entry".into()));
        }
        Ok(KeySet { keys })
    }

    pub fn n(&self) -> usize {
        self.keys.rows()
    }

    pub fn d(&self) -> usize {
        self.keys.cols()
    }

    pub fn key(&self, i: usize) -> &[f64] {
        self.keys.row(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.keys.iter_rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.keys
    }

    /// Applies a LayerNorm variant to every key.
    pub fn normalized(&self, variant: LayerNormVariant) -> Result<KeySet> {
        let rows = self
            .iter()
            .map(|k| layernorm(k, variant))
            .collect::<Result<Vec<_>>>()?;
        KeySet::new(rows)
    }

    /// Keeps the first of every group of keys that agree to within `tol` in
    /// every coordinate.
    pub fn dedup(&self, tol: f64) -> KeySet {
        let mut kept: Vec<Vec<f64>> = Vec::with_capacity(self.n());
        for k in self.iter() {
            if !kept.iter().any(|q| max_abs_diff(q, k) <= tol) {
                kept.push(k.to_vec());
            }
        }
        KeySet {
            keys: Mat::from_rows(&kept),
        }
    }
}

/// How a verdict was reached.
#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    /// The key is reproduced by these convex weights over the other keys (in
    /// order, skipping the target). `residual` is the largest coordinate
    /// error of the reconstruction, including the sum-to-one row.
    ConvexCombination { weights: Vec<f64>, residual: f64 },
    /// A cheap query direction already puts the key strictly on top, with a
    /// margin far above the LP tolerance.
    Separated { direction: Vec<f64>, margin: f64 },
    /// The phase-1 LP could not reach the key: `residual` is the minimum L1
    /// violation and `farkas` the dual certificate `(w, c)` with
    /// `w . h_j + c <= 0` for the others and `w . h_i + c = residual`.
    OutsideHull { residual: f64, farkas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyVerdict {
    pub index: usize,
    pub selectable: bool,
    /// Set when the phase-1 residual lies within two orders of magnitude of
    /// the tolerance on either side.
    pub low_confidence: bool,
    pub evidence: Evidence,
}

impl KeyVerdict {
    pub fn certificate(&self) -> Option<&[f64]> {
        match &self.evidence {
            Evidence::ConvexCombination { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

fn check_index(keys: &KeySet, index: usize) -> Result<()> {
    if index >= keys.n() {
        return Err(Error::IndexOutOfRange {
            index,
            len: keys.n(),
        });
    }
    Ok(())
}

/// Query directions that commonly expose hull vertices: away from the
/// centroid of the other keys, and the key itself.
fn candidate_directions(keys: &KeySet, index: usize) -> Vec<Vec<f64>> {
    let n = keys.n();
    let d = keys.d();
    let target = keys.key(index);
    let mut centroid = vec![0.0; d];
    for (j, k) in keys.iter().enumerate() {
        if j != index {
            for (c, v) in centroid.iter_mut().zip(k) {
                *c += v / (n - 1) as f64;
            }
        }
    }
    let away: Vec<f64> = target.iter().zip(&centroid).map(|(a, b)| a - b).collect();
    [away, target.to_vec()]
        .into_iter()
        .filter_map(|c| {
            let len = norm(&c);
            (len > 1e-300).then(|| c.iter().map(|v| v / len).collect())
        })
        .collect()
}

/// Accepts only margins large enough that the phase-1 residual must exceed
/// `tol`, so the LP verdict cannot differ.
fn quick_separation(keys: &KeySet, index: usize, tol: f64) -> Option<(Vec<f64>, f64)> {
    let target = keys.key(index);
    for u in candidate_directions(keys, index) {
        let own = dot(&u, target);
        let mut best_other = f64::NEG_INFINITY;
        let mut scale = own.abs().max(1.0);
        for (j, k) in keys.iter().enumerate() {
            if j != index {
                let s = dot(&u, k);
                best_other = best_other.max(s);
                scale = scale.max(s.abs());
            }
        }
        let margin = own - best_other;
        // Any x >= 0 leaves phase-1 residual >= margin / max(1, |u . h|).
        if margin > 10.0 * tol * scale {
            return Some((u, margin));
        }
    }
    None
}

/// A candidate direction whose margin stays positive after subtracting a
/// worst-case rounding bound on the dot products. Such a direction proves
/// strict selectability even when the key is within `tol` of the hull.
fn verified_separation(keys: &KeySet, index: usize) -> Option<(Vec<f64>, f64)> {
    let d = keys.d();
    let target = keys.key(index);
    let gamma = (d + 2) as f64 * f64::EPSILON * 1.01;
    let abs_dot = |u: &[f64], h: &[f64]| u.iter().zip(h).map(|(a, b)| (a * b).abs()).sum::<f64>();
    for u in candidate_directions(keys, index) {
        let own = dot(&u, target);
        let own_abs = abs_dot(&u, target);
        let mut margin = f64::INFINITY;
        let mut ok = true;
        for (j, k) in keys.iter().enumerate() {
            if j == index {
                continue;
            }
            let gap = own - dot(&u, k);
            let bound = gamma * (own_abs + abs_dot(&u, k)) + f64::MIN_POSITIVE;
            if !(gap > bound) {
                ok = false;
                break;
            }
            margin = margin.min(gap);
        }
        if ok {
            return Some((u, margin));
        }
    }
    None
}

fn hull_lp(keys: &KeySet, index: usize) -> StandardForm {
    let n = keys.n();
    let d = keys.d();
    let mut lp = StandardForm::new(d + 1, n - 1);
    let mut col = 0;
    for (j, k) in keys.iter().enumerate() {
        if j == index {
            continue;
        }
        for (r, &v) in k.iter().enumerate() {
            lp.set(r, col, v);
        }
        lp.set(d, col, 1.0);
        col += 1;
    }
    lp.b[..d].copy_from_slice(keys.key(index));
    lp.b[d] = 1.0;
    lp
}

fn reconstruction_residual(keys: &KeySet, index: usize, weights: &[f64]) -> f64 {
    let d = keys.d();
    let mut recon = vec![0.0; d];
    let mut total = 0.0;
    let mut w = weights.iter();
    for (j, k) in keys.iter().enumerate() {
        if j == index {
            continue;
        }
        let l = *w.next().expect("one weight per other key");
        total += l;
        for (r, v) in recon.iter_mut().zip(k) {
            *r += l * v;
        }
    }
    max_abs_diff(&recon, keys.key(index)).max((total - 1.0).abs())
}

/// Decides whether `keys[index]` can receive the strictly highest score for
/// some query, by the phase-1 hull-membership LP. A key the LP places inside
/// the hull within `tol` is still reported selectable if a verified strictly
/// separating direction exists.
pub fn is_selectable(keys: &KeySet, index: usize, tol: f64) -> Result<KeyVerdict> {
    check_index(keys, index)?;
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {tol}")));
    }
    if keys.n() == 1 {
        return Ok(KeyVerdict {
            index,
            selectable: true,
            low_confidence: false,
            evidence: Evidence::Separated {
                direction: keys.key(0).to_vec(),
                margin: f64::INFINITY,
            },
        });
    }
    if let Some((direction, margin)) = quick_separation(keys, index, tol) {
        return Ok(KeyVerdict {
            index,
            selectable: true,
            low_confidence: false,
            evidence: Evidence::Separated { direction, margin },
        });
    }
    let verdict = hull_verdict(keys, index, tol);
    if !verdict.selectable {
        // Within `tol` of the hull, yet provably outside it: strict
        // separation wins and the verdict is marked low-confidence.
        if let Some((direction, margin)) = verified_separation(keys, index) {
            return Ok(KeyVerdict {
                index,
                selectable: true,
                low_confidence: true,
                evidence: Evidence::Separated { direction, margin },
            });
        }
    }
    Ok(verdict)
}

/// The LP route alone, without the quick separation pre-check.
pub fn hull_verdict(keys: &KeySet, index: usize, tol: f64) -> KeyVerdict {
    let lp = hull_lp(keys, index);
    let sol = lp::phase1(&lp);
    let low_confidence = sol.residual > tol * 1e-2 && sol.residual <= tol * 1e2;
    if sol.residual <= tol {
        let weights: Vec<f64> = sol.x.iter().map(|v| v.max(0.0)).collect();
        let residual = reconstruction_residual(keys, index, &weights);
        KeyVerdict {
            index,
            selectable: false,
            low_confidence,
            evidence: Evidence::ConvexCombination { weights, residual },
        }
    } else {
        KeyVerdict {
            index,
            selectable: true,
            low_confidence,
            evidence: Evidence::OutsideHull {
                residual: sol.residual,
                farkas: sol.farkas,
            },
        }
    }
}

/// A query direction with `||v||_inf <= 1` maximizing
/// `v . h_index - max_{j != index} v . h_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub direction: Vec<f64>,
    pub margin: f64,
}

/// Solves the margin-maximization LP for `keys[index]`. Returns `None` when
/// the best margin is not positive, i.e. the key is unselectable.
pub fn separating_direction(keys: &KeySet, index: usize) -> Result<Option<Separation>> {
    check_index(keys, index)?;
    let n = keys.n();
    let d = keys.d();
    if n == 1 {
        let mut direction = vec![0.0; d];
        direction[0] = 1.0;
        return Ok(Some(Separation {
            direction,
            margin: f64::INFINITY,
        }));
    }
    // Columns: p (d), q (d), t, slack per other key (n-1), box slacks (2d).
    let others = n - 1;
    let t_col = 2 * d;
    let slack0 = t_col + 1;
    let box0 = slack0 + others;
    let cols = box0 + 2 * d;
    let rows = others + 2 * d;
    let mut lp = StandardForm::new(rows, cols);
    let target = keys.key(index);
    let mut r = 0;
    for (j, k) in keys.iter().enumerate() {
        if j == index {
            continue;
        }
        // (p - q) . (h_j - h_i) + t + s_j = 0
        for c in 0..d {
            let diff = k[c] - target[c];
            lp.set(r, c, diff);
            lp.set(r, d + c, -diff);
        }
        lp.set(r, t_col, 1.0);
        lp.set(r, slack0 + r, 1.0);
        r += 1;
    }
    for c in 0..2 * d {
        lp.set(others + c, c, 1.0);
        lp.set(others + c, box0 + c, 1.0);
        lp.b[others + c] = 1.0;
    }
    lp.c[t_col] = -1.0;
    match lp::solve(&lp, 1e-9) {
        lp::Outcome::Optimal { x, .. } => {
            let direction: Vec<f64> = (0..d).map(|c| x[c] - x[d + c]).collect();
            // Measure the margin directly rather than trusting `t`.
            let own = dot(&direction, target);
            let best = keys
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != index)
                .map(|(_, k)| dot(&direction, k))
                .fold(f64::NEG_INFINITY, f64::max);
            let margin = own - best;
            Ok((margin > 0.0).then_some(Separation { direction, margin }))
        }
        // t is bounded by the box and t = 0 is always feasible.
        other => unreachable!("margin LP cannot be {other:?}"),
    }
}

/// Per-key verdicts for a whole set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectabilityReport {
    pub n: usize,
    pub d: usize,
    pub verdicts: Vec<bool>,
    pub fraction_unselectable: f64,
    /// Convex weights over the other keys, for every unselectable index.
    pub certificates: BTreeMap<usize, Vec<f64>>,
    #[serde(default)]
    pub low_confidence: Vec<usize>,
}

impl SelectabilityReport {
    pub fn unselectable(&self) -> impl Iterator<Item = usize> + '_ {
        self.verdicts
            .iter()
            .enumerate()
            .filter(|(_, &s)| !s)
            .map(|(i, _)| i)
    }

    pub fn unselectable_count(&self) -> usize {
        self.verdicts.iter().filter(|&&s| !s).count()
    }
}

pub fn analyze(keys: &KeySet, tol: f64) -> Result<SelectabilityReport> {
    analyze_with(keys, tol, Exec::Serial)
}

pub fn analyze_with(keys: &KeySet, tol: f64, exec: Exec) -> Result<SelectabilityReport> {
    let verdicts = map_range(exec, keys.n(), |i| is_selectable(keys, i, tol))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = keys.n();
    let mut certificates = BTreeMap::new();
    let mut low_confidence = Vec::new();
    for v in &verdicts {
        if let Some(w) = v.certificate() {
            certificates.insert(v.index, w.to_vec());
        }
        if v.low_confidence {
            low_confidence.push(v.index);
        }
    }
    let bad = verdicts.iter().filter(|v| !v.selectable).count();
    Ok(SelectabilityReport {
        n,
        d: keys.d(),
        verdicts: verdicts.iter().map(|v| v.selectable).collect(),
        fraction_unselectable: bad as f64 / n as f64,
        certificates,
        low_confidence,
    })
}
