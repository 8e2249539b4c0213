use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdError};
use crate::types::ImagePair;

/// A pipeline that reports wall-clock time per stage for one pair.
pub trait ProfiledPipeline {
    fn stage_names(&self) -> Vec<String>;
    fn run_timed(&self, pair: &ImagePair) -> Result<Vec<Duration>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub name: String,
    /// Seconds.
    pub mean: f64,
    /// Sample standard deviation, seconds.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub pairs: usize,
    pub stages: Vec<StageLatency>,
    pub total: StageLatency,
}

fn mean_std(name: &str, xs: &[f64]) -> StageLatency {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    StageLatency {
        name: name.to_string(),
        mean,
        std: var.sqrt(),
    }
}

/// Run every pair sequentially and summarize each stage and the per-pair
/// total as mean ± sample std.
pub fn latency_profile(pipeline: &dyn ProfiledPipeline, pairs: &[ImagePair]) -> Result<LatencyReport> {
    if pairs.len() < 2 {
        return Err(ScdError::InvalidConfig(
            "latency profiling needs at least two pairs".into(),
        ));
    }
    let names = pipeline.stage_names();
    let mut samples = vec![Vec::with_capacity(pairs.len()); names.len()];
    let mut totals = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let times = pipeline.run_timed(pair)?;
        if times.len() != names.len() {
            return Err(ScdError::Shape(format!(
                "pipeline reported {} stage times for {} stages",
                times.len(),
                names.len()
            )));
        }
        let secs: Vec<f64> = times.iter().map(Duration::as_secs_f64).collect();
        totals.push(secs.iter().sum());
        for (s, v) in samples.iter_mut().zip(secs) {
            s.push(v);
        }
    }
    Ok(LatencyReport {
        pairs: pairs.len(),
        stages: names.iter().zip(&samples).map(|(n, s)| mean_std(n, s)).collect(),
        total: mean_std("total", &totals),
    })
}

/// Time a closure.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

impl LatencyReport {
    pub fn to_table(&self) -> String {
        let fmt = |s: &StageLatency| format!("{:.3} ± {:.3}", s.mean, s.std);
        let width = self
            .stages
            .iter()
            .map(|s| s.name.len())
            .chain(["Component".len(), "Total".len()])
            .max()
            .unwrap_or(0);
        let mut out = format!("{:<width$}  Latency (s/pair)\n", "Component");
        for s in &self.stages {
            out.push_str(&format!("{:<width$}  {}\n", s.name, fmt(s)));
        }
        out.push_str(&format!("{:<width$}  {}\n", "Total", fmt(&self.total)));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,mean_s,std_s\n");
        for s in self.stages.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&format!("{},{:.6},{:.6}\n", s.name, s.mean, s.std));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::textured_background;

    struct Sleeper(Vec<f64>);

    impl ProfiledPipeline for Sleeper {
        fn stage_names(&self) -> Vec<String> {
            (0..self.0.len()).map(|i| format!("s{i}")).collect()
        }

        fn run_timed(&self, _pair: &ImagePair) -> Result<Vec<Duration>> {
            Ok(self
                .0
                .iter()
                .map(|&s| timed(|| std::thread::sleep(Duration::from_secs_f64(s))).1)
                .collect())
        }
    }

    fn pairs(n: usize) -> Vec<ImagePair> {
        let t = chrono::Utc::now();
        (0..n)
            .map(|i| {
                ImagePair::new(
                    format!("p{i}"),
                    textured_background(8, 0),
                    textured_background(8, 1),
                    t,
                    t,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn scripted_sleeps_are_recovered() {
        let scripted = [0.10, 0.02, 0.01];
        let r = latency_profile(&Sleeper(scripted.to_vec()), &pairs(4)).unwrap();
        // Sleeps never end early but may overrun on a loaded machine.
        for (s, want) in r.stages.iter().zip(scripted) {
            assert!(
                s.mean >= want && s.mean - want < 0.05,
                "{} mean {} vs {want}",
                s.name,
                s.mean
            );
        }
        assert!(
            r.total.mean >= 0.13 && r.total.mean - 0.13 < 0.1,
            "total {}",
            r.total.mean
        );
        assert!(r.to_table().contains("Total"));
    }

    #[test]
    fn single_stage_total_is_that_stage() {
        let r = latency_profile(&Sleeper(vec![0.01]), &pairs(3)).unwrap();
        assert!((r.total.mean - r.stages[0].mean).abs() < 1e-12);
    }

    #[test]
    fn sample_std_oracle() {
        let s = mean_std("x", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(latency_profile(&Sleeper(vec![0.0]), &pairs(1)).is_err());
    }
}
