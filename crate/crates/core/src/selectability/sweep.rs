use rand_distr::{Distribution, StandardNormal};

use super::{analyze, KeySet, DEFAULT_TOL};
use crate::geometry::LayerNormVariant;
use crate::linalg::Mat;
use crate::par::{map_range, Exec};
use crate::rng::{stream, tag};
use crate::Result;

/// Mean unselectable fraction for every `(n, d)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub n_values: Vec<usize>,
    pub d_values: Vec<usize>,
    /// Row-major over `n_values x d_values`.
    pub cells: Vec<f64>,
    pub trials_per_cell: usize,
    pub master_seed: u64,
    pub layernorm: bool,
}

impl HeatmapGrid {
    pub fn cell(&self, n: usize, d: usize) -> Option<f64> {
        let i = self.n_values.iter().position(|&v| v == n)?;
        let j = self.d_values.iter().position(|&v| v == d)?;
        Some(self.cells[i * self.d_values.len() + j])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let nd = self.d_values.len();
        self.cells
            .iter()
            .enumerate()
            .map(move |(k, &f)| (self.n_values[k / nd], self.d_values[k % nd], f))
    }

    /// `n,d,fraction` with one row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,d,fraction\n");
        for (n, d, f) in self.iter() {
            out.push_str(&format!("{n},{d},{f:?}\n"));
        }
        out
    }
}

/// The standard-normal key set for one trial. Raw and layernormed sweeps
/// with the same master seed see the same draws.
pub(crate) fn trial_keys(master_seed: u64, n: usize, d: usize, trial: usize) -> KeySet {
    let mut rng = stream(master_seed, &[tag::SWEEP, n as u64, d as u64, trial as u64]);
    let keys = Mat::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    KeySet::from_mat(keys).expect("gaussian draws are finite")
}

fn trial_fraction(keys: &KeySet, apply_layernorm: bool) -> Result<f64> {
    let keys = if apply_layernorm {
        keys.normalized(LayerNormVariant::FULL)?
    } else {
        keys.clone()
    };
    // Selectability is a property of distinct key vectors; in d = 2 every
    // layernormed key is one of exactly two points.
    let distinct = keys.dedup(DEFAULT_TOL);
    Ok(analyze(&distinct, DEFAULT_TOL)?.fraction_unselectable)
}

pub fn monte_carlo_sweep(
    n_values: &[usize],
    d_values: &[usize],
    trials_per_cell: usize,
    master_seed: u64,
    apply_layernorm: bool,
) -> Result<HeatmapGrid> {
    monte_carlo_sweep_with(
        n_values,
        d_values,
        trials_per_cell,
        master_seed,
        apply_layernorm,
        Exec::Parallel,
    )
}

pub fn monte_carlo_sweep_with(
    n_values: &[usize],
    d_values: &[usize],
    trials_per_cell: usize,
    master_seed: u64,
    apply_layernorm: bool,
    exec: Exec,
) -> Result<HeatmapGrid> {
    let trials = trials_per_cell.max(1);
    let nd = d_values.len();
    let cells = n_values.len() * nd;
    let fractions = map_range(exec, cells * trials, |task| {
        let cell = task / trials;
        let trial = task % trials;
        let n = n_values[cell / nd];
        let d = d_values[cell % nd];
        if n == 0 || d == 0 {
            return Ok(0.0);
        }
        trial_fraction(&trial_keys(master_seed, n, d, trial), apply_layernorm)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let cells = fractions
        .chunks(trials)
        .map(|c| c.iter().sum::<f64>() / trials as f64)
        .collect();
    Ok(HeatmapGrid {
        n_values: n_values.to_vec(),
        d_values: d_values.to_vec(),
        cells,
        trials_per_cell: trials,
        master_seed,
        layernorm: apply_layernorm,
    })
}
