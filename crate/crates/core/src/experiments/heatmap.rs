use super::config::HeatmapConfig;
use crate::par::Exec;
use crate::selectability::{monte_carlo_sweep_with, HeatmapGrid};
use crate::Result;

/// One sweep over the configured grid, on raw or layernormed keys.
pub fn run_heatmap(config: &HeatmapConfig, apply_layernorm: bool, exec: Exec) -> Result<HeatmapGrid> {
    config.validate()?;
    monte_carlo_sweep_with(
        &config.n_values,
        &config.d_values,
        config.trials,
        config.master_seed,
        apply_layernorm,
        exec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_and_layernormed_grids() {
        let cfg = HeatmapConfig {
            n_values: vec![3, 20, 100],
            d_values: vec![2, 3],
            trials: 10,
            master_seed: 9,
            ..Default::default()
        };
        let raw = run_heatmap(&cfg, false, Exec::Serial).unwrap();
        let ln = run_heatmap(&cfg, true, Exec::Serial).unwrap();
        assert_eq!(raw.cell(3, 2), Some(0.0));
        assert!(raw.cell(100, 2).unwrap() > 0.5);
        assert!(ln.cells.iter().all(|&f| f == 0.0));
        assert!(!raw.layernorm && ln.layernorm);
    }
}
