//! Simulated annotation campaigns against a known ground truth.

use crate::corpus::Corpus;
use crate::estimation::{EstimateReport, EstimatorConfig, UnitAccumulator};
use crate::rng::RandomSource;
use crate::sampling::{next_unit, SamplerState, SamplingDesign, SamplingError};

/// When a simulated campaign stops drawing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop once the estimate has converged.
    Converged,
    /// Stop after this many units.
    Units(usize),
    /// Stop once every positive-weight stratum has at least one unit.
    AllStrataCovered,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub report: EstimateReport,
    pub units: usize,
    pub triples: usize,
    /// The corpus was exhausted before the stop rule fired.
    pub exhausted: bool,
}

/// Runs one campaign: draws units under `design`, judges every sampled
/// triple with `truth`, and refreshes the estimate after each unit.
pub fn run_campaign<F>(
    corpus: &Corpus,
    design: &SamplingDesign,
    config: &EstimatorConfig,
    stop: StopRule,
    rng: &mut RandomSource,
    mut truth: F,
) -> Result<CampaignOutcome, SamplingError>
where
    F: FnMut(&str) -> bool,
{
    let strata: Vec<(String, usize)> = corpus.strata().iter().map(|s| (s.name.clone(), s.size)).collect();
    let mut acc = UnitAccumulator::new(design.kind, &strata);
    let mut state = SamplerState::new(corpus, design.kind);
    let mut triples = 0;
    let mut indicators = Vec::new();
    let mut covered = vec![false; strata.len()];
    let mut exhausted = false;
    loop {
        let unit = match next_unit(corpus, &mut state, design, rng) {
            Ok(u) => u,
            Err(SamplingError::CorpusExhausted) => {
                exhausted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        indicators.clear();
        indicators.extend(unit.triple_ids.iter().map(|id| truth(id) as u8));
        triples += indicators.len();
        acc.add_unit(unit.stratum, &indicators)
            .map_err(|e| SamplingError::InvalidDesign(e.to_string()))?;
        covered[unit.stratum] = true;
        let done = match stop {
            StopRule::Units(k) => acc.n_units() >= k,
            StopRule::AllStrataCovered => strata.iter().zip(&covered).all(|(s, &c)| c || s.1 == 0),
            StopRule::Converged => acc.report(config).converged,
        };
        if done {
            break;
        }
    }
    Ok(CampaignOutcome {
        report: acc.report(config),
        units: acc.n_units(),
        triples,
        exhausted,
    })
}
