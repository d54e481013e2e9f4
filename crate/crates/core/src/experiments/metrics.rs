use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub variant: String,
    pub seed: usize,
    pub step: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub mean_query_angle_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<MetricRecord>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "variant,seed,step,train_loss,test_accuracy,mean_query_angle_deg";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{:?},{:?},{:?}\n",
                r.variant, r.seed, r.step, r.train_loss, r.test_accuracy, r.mean_query_angle_deg
            ));
        }
        out
    }

    pub fn run(&self, variant: &str, seed: usize) -> impl Iterator<Item = &MetricRecord> {
        let variant = variant.to_string();
        self.records
            .iter()
            .filter(move |r| r.variant == variant && r.seed == seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: usize,
    /// First recorded step whose train loss is at or below the threshold.
    pub steps_to_threshold: Option<usize>,
    /// First recorded step whose test accuracy reaches the threshold.
    pub steps_to_accuracy: Option<usize>,
    pub initial_angle_deg: f64,
    pub final_angle_deg: f64,
    pub final_train_loss: f64,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
}

impl RunSummary {
    pub fn from_records(
        variant: &str,
        seed: usize,
        records: &[MetricRecord],
        loss_threshold: f64,
        accuracy_threshold: f64,
    ) -> Self {
        let first = records.first();
        let last = records.last();
        RunSummary {
            variant: variant.to_string(),
            seed,
            steps_to_threshold: records
                .iter()
                .find(|r| r.train_loss <= loss_threshold)
                .map(|r| r.step),
            steps_to_accuracy: records
                .iter()
                .find(|r| r.test_accuracy >= accuracy_threshold)
                .map(|r| r.step),
            initial_angle_deg: first.map_or(f64::NAN, |r| r.mean_query_angle_deg),
            final_angle_deg: last.map_or(f64::NAN, |r| r.mean_query_angle_deg),
            final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
            final_test_accuracy: last.map_or(f64::NAN, |r| r.test_accuracy),
            best_test_accuracy: records.iter().map(|r| r.test_accuracy).fold(0.0, f64::max),
        }
    }
}

/// The `steps_to_threshold` table, written as the summary JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub loss_threshold: f64,
    pub accuracy_threshold: f64,
    pub runs: Vec<RunSummary>,
}

impl Summary {
    pub fn run(&self, variant: &str, seed: usize) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MajorityOutcome {
    pub log: MetricsLog,
    pub summary: Summary,
}
