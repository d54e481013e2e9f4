use serde::{Deserialize, Serialize};

use crate::attnet::AttnModel;
use crate::geometry::LayerNormVariant;
use crate::par::{map_range, Exec};
use crate::selectability::{analyze, KeySet, DEFAULT_TOL};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScan {
    pub layer: usize,
    pub fraction_unselectable_before_scaling: f64,
    pub fraction_after_full_ln: f64,
    /// Key sets analyzed (one per evaluation sequence, or one for a dump).
    pub sequences: usize,
    /// Distinct keys analyzed across all sets.
    pub keys: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyscanReport {
    pub source: String,
    pub layers: Vec<LayerScan>,
}

/// Fractions for one key set: as given, and after Full LN.
fn scan_set(keys: &KeySet) -> Result<(f64, f64, usize)> {
    let before = keys.dedup(DEFAULT_TOL);
    let after = keys.normalized(LayerNormVariant::FULL)?.dedup(DEFAULT_TOL);
    Ok((
        analyze(&before, DEFAULT_TOL)?.fraction_unselectable,
        analyze(&after, DEFAULT_TOL)?.fraction_unselectable,
        before.n(),
    ))
}

/// Analyzes a raw key dump as-is and after Full LN.
pub fn run_keyscan_keys(keys: &KeySet, source: &str) -> Result<KeyscanReport> {
    let (before, after, n) = scan_set(keys)?;
    Ok(KeyscanReport {
        source: source.to_string(),
        layers: vec![LayerScan {
            layer: 0,
            fraction_unselectable_before_scaling: before,
            fraction_after_full_ln: after,
            sequences: 1,
            keys: n,
        }],
    })
}

/// Runs the model on each sequence and analyzes the vectors entering its
/// attention layer; fractions are averaged over sequences.
pub fn run_keyscan_model(
    model: &AttnModel,
    sequences: &[Vec<usize>],
    source: &str,
    exec: Exec,
) -> Result<KeyscanReport> {
    let per_seq = map_range(exec, sequences.len(), |i| {
        let trace = model.forward(&sequences[i])?;
        scan_set(&trace.extract_keys())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let count = per_seq.len().max(1) as f64;
    let (mut before, mut after, mut keys) = (0.0, 0.0, 0usize);
    for (b, a, n) in per_seq {
        before += b;
        after += a;
        keys += n;
    }
    Ok(KeyscanReport {
        source: source.to_string(),
        layers: vec![LayerScan {
            layer: 0,
            fraction_unselectable_before_scaling: before / count,
            fraction_after_full_ln: after / count,
            sequences: sequences.len(),
            keys,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_dump_is_caught_before_ln_only() {
        let keys = KeySet::new(vec![
            vec![1.0, 0.0, 3.0],
            vec![3.0, 2.0, -1.0],
            vec![2.0, 1.0, 1.0],
            vec![0.0, 5.0, 0.0],
        ])
        .unwrap();
        let r = run_keyscan_keys(&keys, "dump").unwrap();
        assert_eq!(r.layers[0].fraction_unselectable_before_scaling, 0.25);
        assert_eq!(r.layers[0].fraction_after_full_ln, 0.0);
    }
}
