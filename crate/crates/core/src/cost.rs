//! Context-switch accounting, the linear cost and time models, and the
//! permutation simulation of an SRS annotation order.

use std::collections::HashMap;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomSource;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no samples to bootstrap")]
    EmptySamples,
    #[error("baseline time must be positive")]
    ZeroBaseline,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub n_t: usize,
    pub n_sw: usize,
    pub n_nosw: usize,
}

/// Counts transitions between consecutive items; a transition is a switch
/// when the two cluster keys differ. The first item opens no transition.
pub fn count_switches<T: PartialEq>(sequence: &[T]) -> TransitionCounts {
    let n_sw = sequence.windows(2).filter(|w| w[0] != w[1]).count();
    TransitionCounts {
        n_t: sequence.len(),
        n_sw,
        n_nosw: sequence.len().saturating_sub(1) - n_sw,
    }
}

/// Per-triple costs without (`c_t`) and with (`c_s`) a context switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub c_t: f64,
    pub c_s: f64,
}

impl CostParams {
    pub fn new(c_t: f64, c_s: f64) -> Result<Self, CostError> {
        if !(c_t >= 0.0) || !(c_s >= c_t) {
            return Err(CostError::InvalidParameter(format!(
                "need 0 <= c_t <= c_s, got {c_t}, {c_s}"
            )));
        }
        Ok(Self { c_t, c_s })
    }
}

pub fn cost(counts: &TransitionCounts, params: &CostParams) -> f64 {
    params.c_t * (counts.n_t - counts.n_sw) as f64 + params.c_s * counts.n_sw as f64
}

/// Mean seconds per triple without a switch, and the extra seconds a switch
/// adds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub t_base_s: f64,
    pub delta_switch_s: f64,
}

impl TimeModel {
    pub fn new(t_base_s: f64, delta_switch_s: f64) -> Result<Self, CostError> {
        if !(t_base_s >= 0.0) || !(delta_switch_s >= 0.0) {
            return Err(CostError::InvalidParameter(format!(
                "times must be non-negative, got {t_base_s}, {delta_switch_s}"
            )));
        }
        Ok(Self {
            t_base_s,
            delta_switch_s,
        })
    }

    /// The time model as a cost model: `c_t = t_base`, `c_s = t_base + Δ`.
    pub fn as_cost_params(&self) -> CostParams {
        CostParams {
            c_t: self.t_base_s,
            c_s: self.t_base_s + self.delta_switch_s,
        }
    }

    pub fn slowdown(&self) -> f64 {
        (self.t_base_s + self.delta_switch_s) / self.t_base_s
    }

    pub fn seconds(&self, n_t: f64, n_sw: f64) -> f64 {
        n_t * self.t_base_s + n_sw * self.delta_switch_s
    }
}

/// `n_t · t_base + n_sw · Δt_switch`, in minutes.
pub fn time_minutes(counts: &TransitionCounts, model: &TimeModel) -> f64 {
    model.seconds(counts.n_t as f64, counts.n_sw as f64) / 60.0
}

pub const DEFAULT_OUTLIER_CAP_S: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedTiming {
    pub model: TimeModel,
    pub slowdown: f64,
    pub switch_triples: usize,
    pub noswitch_triples: usize,
    /// Observations dropped for exceeding the outlier cap.
    pub excluded: usize,
}

/// Estimates `t_base` and `Δt_switch` from `(cluster key, elapsed seconds)`
/// observations in annotation order. A triple is a switch triple when its
/// cluster differs from the previous one; the first triple counts as a
/// switch. Observations above `outlier_cap` seconds are dropped.
pub fn derive_params<K: PartialEq>(
    observations: &[(K, f64)],
    outlier_cap: Option<f64>,
) -> Result<DerivedTiming, CostError> {
    let cap = outlier_cap.unwrap_or(f64::INFINITY);
    let (mut sw_sum, mut sw_n, mut no_sum, mut no_n, mut excluded) = (0.0, 0usize, 0.0, 0usize, 0usize);
    for (i, (key, secs)) in observations.iter().enumerate() {
        let switch = i == 0 || observations[i - 1].0 != *key;
        if !(*secs >= 0.0) || *secs > cap {
            excluded += 1;
            continue;
        }
        if switch {
            sw_sum += secs;
            sw_n += 1;
        } else {
            no_sum += secs;
            no_n += 1;
        }
    }
    if no_n == 0 {
        return Err(CostError::InsufficientData("no no-switch transitions observed".into()));
    }
    if sw_n == 0 {
        return Err(CostError::InsufficientData("no context switches observed".into()));
    }
    let t_base = no_sum / no_n as f64;
    let delta = sw_sum / sw_n as f64 - t_base;
    let model = TimeModel {
        t_base_s: t_base,
        delta_switch_s: delta,
    };
    Ok(DerivedTiming {
        slowdown: model.slowdown(),
        model,
        switch_triples: sw_n,
        noswitch_triples: no_n,
        excluded,
    })
}

/// Transition counts for `n_perms` uniform random orderings of `labels`.
///
/// Permutation `i` is shuffled with stream `i + 1` of `seed`, so results do
/// not depend on how the work is split across threads.
pub fn simulate_srs<K: Eq + Hash>(labels: &[K], n_perms: usize, seed: u64) -> Vec<TransitionCounts> {
    let mut ids: HashMap<&K, u32> = HashMap::new();
    let coded: Vec<u32> = labels
        .iter()
        .map(|k| {
            let next = ids.len() as u32;
            *ids.entry(k).or_insert(next)
        })
        .collect();
    (0..n_perms)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::stream(seed, i as u64 + 1);
            let mut perm = coded.clone();
            perm.shuffle(&mut rng);
            count_switches(&perm)
        })
        .collect()
}

/// Expected no-switch transitions in a uniform permutation:
/// `Σ_j n_j (n_j − 1) / n_t`.
pub fn expected_noswitches(cluster_sizes: &[usize]) -> f64 {
    let n_t: usize = cluster_sizes.iter().sum();
    if n_t == 0 {
        return 0.0;
    }
    cluster_sizes
        .iter()
        .map(|&n| (n * n.saturating_sub(1)) as f64)
        .sum::<f64>()
        / n_t as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// Grand mean of the resample means.
    pub mean: f64,
    /// 2.5th and 97.5th percentiles of the resample means.
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn bootstrap_mean(samples: &[f64], n_boot: usize, rng: &mut RandomSource) -> Result<BootstrapSummary, CostError> {
    if samples.is_empty() {
        return Err(CostError::EmptySamples);
    }
    if n_boot == 0 {
        return Err(CostError::InvalidParameter("n_boot must be at least 1".into()));
    }
    let n = samples.len();
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| samples[rng.below(n as u64) as usize]).sum::<f64>() / n as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / n_boot as f64;
    means.sort_by(f64::total_cmp);
    Ok(BootstrapSummary {
        mean,
        ci_low: percentile(&means, 0.025),
        ci_high: percentile(&means, 0.975),
    })
}

/// Linear interpolation between closest ranks on sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub ratio: f64,
    pub savings: f64,
    /// The design took longer than the baseline.
    pub slower_than_baseline: bool,
}

pub fn efficiency_report(time_design: f64, time_baseline: f64) -> Result<Efficiency, CostError> {
    if !(time_baseline > 0.0) {
        return Err(CostError::ZeroBaseline);
    }
    Ok(Efficiency {
        ratio: time_design / time_baseline,
        savings: time_baseline - time_design,
        slower_than_baseline: time_design > time_baseline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionCi {
    pub switches: [f64; 2],
    pub noswitches: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n_perms: usize,
    pub n_boot: usize,
    pub seed: u64,
    pub n_t: usize,
    pub observed_switches: usize,
    pub mean_switches: f64,
    pub mean_noswitches: f64,
    pub ci: TransitionCi,
    pub t_base_s: f64,
    pub delta_switch_s: f64,
    pub modeled_time_design_min: f64,
    pub modeled_time_baseline_min: f64,
    pub ratio: f64,
    pub savings_min: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Compares the observed annotation order against simulated SRS orders of
/// the same triples. `sequence` holds the cluster key of each annotated
/// triple in annotation order.
///
/// Bootstrap resampling uses stream 0 of `seed`.
pub fn compare_with_srs<K: Eq + Hash>(
    sequence: &[K],
    n_perms: usize,
    n_boot: usize,
    seed: u64,
    model: &TimeModel,
) -> Result<(SimulationReport, Vec<TransitionCounts>), CostError> {
    if n_perms == 0 {
        return Err(CostError::InvalidParameter("n_perms must be at least 1".into()));
    }
    if sequence.is_empty() {
        return Err(CostError::InsufficientData("no annotated triples".into()));
    }
    let observed = count_switches(sequence);
    let raw = simulate_srs(sequence, n_perms, seed);
    let mut rng = RandomSource::stream(seed, 0);
    let sw: Vec<f64> = raw.iter().map(|c| c.n_sw as f64).collect();
    let nosw: Vec<f64> = raw.iter().map(|c| c.n_nosw as f64).collect();
    let sw_boot = bootstrap_mean(&sw, n_boot, &mut rng)?;
    let nosw_boot = bootstrap_mean(&nosw, n_boot, &mut rng)?;
    let design_min = time_minutes(&observed, model);
    let baseline_min = model.seconds(observed.n_t as f64, sw_boot.mean) / 60.0;
    let eff = efficiency_report(design_min, baseline_min)?;
    let report = SimulationReport {
        n_perms,
        n_boot,
        seed,
        n_t: observed.n_t,
        observed_switches: observed.n_sw,
        mean_switches: sw_boot.mean,
        mean_noswitches: nosw_boot.mean,
        ci: TransitionCi {
            switches: [sw_boot.ci_low, sw_boot.ci_high],
            noswitches: [nosw_boot.ci_low, nosw_boot.ci_high],
        },
        t_base_s: model.t_base_s,
        delta_switch_s: model.delta_switch_s,
        modeled_time_design_min: round2(design_min),
        modeled_time_baseline_min: round2(baseline_min),
        ratio: eff.ratio,
        savings_min: round2(eff.savings),
    };
    Ok((report, raw))
}

/// CSV of the raw per-permutation counts.
pub fn distribution_csv(raw: &[TransitionCounts]) -> String {
    let mut out = String::from("perm,n_t,n_sw,n_nosw\n");
    for (i, c) in raw.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{}\n", c.n_t, c.n_sw, c.n_nosw));
    }
    out
}
