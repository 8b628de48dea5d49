//! Cold-start data curation over a logged response corpus.
//!
//! For each data source, the median response lengths at the extreme pass
//! rates anchor a per-problem target length interpolated linearly in the pass
//! rate: easy problems (pass rate 1) target short responses, hard ones
//! (pass rate 0) target long responses. Problems are binned into equal-width
//! pass-rate brackets; within each bracket the response closest to its
//! problem's target is chosen, and brackets are subsampled to a common quota
//! so the curated set is uniform across difficulty.
//!
//! The curator consumes pre-logged pass rates and response lengths only; it
//! never generates or tokenizes text.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// One logged response: an id and its token length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseEntry {
    pub response_id: String,
    pub text_len: u64,
}

/// One problem with its pass rate and candidate responses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemEntry {
    pub problem_id: String,
    pub source: String,
    pub pass_rate: f64,
    pub responses: Vec<ResponseEntry>,
}

/// Median response lengths at pass rate 0 and 1 for one source.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SourceAnchors {
    pub l0: f64,
    pub l1: f64,
}

/// One curated selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CuratedEntry {
    pub problem_id: String,
    pub source: String,
    pub pass_rate: f64,
    pub bracket: usize,
    pub response_id: String,
    pub length: u64,
    pub target: f64,
}

/// Curated corpus plus per-source anchors and bracket diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CuratedCorpus {
    pub entries: Vec<CuratedEntry>,
    pub anchors: BTreeMap<String, SourceAnchors>,
    /// Sources dropped for missing an extreme bracket, with the reason.
    pub rejected_sources: Vec<(String, String)>,
    /// Brackets that ended up empty.
    pub empty_brackets: Vec<usize>,
    pub brackets: usize,
}

/// Per-bracket summary row for the curation CSV.
#[derive(Debug, Clone, Serialize)]
pub struct BracketSummary {
    pub bracket: usize,
    pub count: usize,
    pub mean_chosen_length: f64,
    pub mean_target: f64,
}

/// Lower-middle median: deterministic and integer-valued on integer lengths.
fn lower_median(mut lengths: Vec<u64>) -> Option<f64> {
    if lengths.is_empty() {
        return None;
    }
    lengths.sort_unstable();
    Some(lengths[(lengths.len() - 1) / 2] as f64)
}

/// Compute per-source anchors; sources missing an extreme pass-rate bracket
/// are rejected with a diagnostic.
pub fn length_anchors(
    problems: &[ProblemEntry],
) -> (BTreeMap<String, SourceAnchors>, Vec<(String, String)>) {
    let mut by_source: BTreeMap<String, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for p in problems {
        let entry = by_source.entry(p.source.clone()).or_default();
        if p.pass_rate == 0.0 {
            entry.0.extend(p.responses.iter().map(|r| r.text_len));
        } else if p.pass_rate == 1.0 {
            entry.1.extend(p.responses.iter().map(|r| r.text_len));
        }
    }
    let mut anchors = BTreeMap::new();
    let mut rejected = Vec::new();
    for (source, (hard, easy)) in by_source {
        match (lower_median(hard), lower_median(easy)) {
            (Some(l0), Some(l1)) => {
                anchors.insert(source, SourceAnchors { l0, l1 });
            }
            (None, _) => rejected.push((source, "no responses at pass rate 0".to_string())),
            (_, None) => rejected.push((source, "no responses at pass rate 1".to_string())),
        }
    }
    (anchors, rejected)
}

/// Linear interpolation between the extreme-bracket anchors.
pub fn target_length(p: f64, l0: f64, l1: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("pass rate {p} outside [0, 1]")));
    }
    if !(l0 > 0.0 && l1 > 0.0) {
        return Err(Error::InvalidArgument("anchors must be positive".into()));
    }
    Ok((1.0 - p) * l0 + p * l1)
}

fn bracket_of(p: f64, brackets: usize) -> usize {
    ((p * brackets as f64).floor() as usize).min(brackets - 1)
}

/// Pick the response closest to the target; ties prefer the shorter
/// response, then the lexicographically first id.
fn choose_response<'a>(responses: &'a [ResponseEntry], target: f64) -> Option<&'a ResponseEntry> {
    responses.iter().min_by(|a, b| {
        let da = (a.text_len as f64 - target).abs();
        let db = (b.text_len as f64 - target).abs();
        da.partial_cmp(&db)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.text_len.cmp(&b.text_len))
            .then(a.response_id.cmp(&b.response_id))
    })
}

/// Curate the corpus: bracket by pass rate, choose the distance-optimal
/// response per problem, and cap each bracket at the quota with seeded
/// subsampling. Reruns with the same seed reproduce the corpus exactly.
pub fn select_responses(
    problems: &[ProblemEntry],
    brackets: usize,
    per_bracket_quota: usize,
    seed: u64,
) -> Result<CuratedCorpus> {
    if brackets < 2 {
        return Err(Error::InvalidArgument("need at least 2 brackets".into()));
    }
    if per_bracket_quota == 0 {
        return Err(Error::InvalidArgument("quota must be positive".into()));
    }
    let (anchors, rejected) = length_anchors(problems);

    let mut per_bracket: BTreeMap<usize, Vec<CuratedEntry>> = BTreeMap::new();
    for p in problems {
        let Some(anchor) = anchors.get(&p.source) else {
            continue;
        };
        if !(0.0..=1.0).contains(&p.pass_rate) {
            return Err(Error::InvalidArgument(format!(
                "problem {} has pass rate {}",
                p.problem_id, p.pass_rate
            )));
        }
        if p.responses.is_empty() {
            continue;
        }
        let target = target_length(p.pass_rate, anchor.l0, anchor.l1)?;
        let chosen = choose_response(&p.responses, target).expect("nonempty responses");
        let bracket = bracket_of(p.pass_rate, brackets);
        per_bracket.entry(bracket).or_default().push(CuratedEntry {
            problem_id: p.problem_id.clone(),
            source: p.source.clone(),
            pass_rate: p.pass_rate,
            bracket,
            response_id: chosen.response_id.clone(),
            length: chosen.text_len,
            target,
        });
    }

    let mut entries = Vec::new();
    let mut empty = Vec::new();
    for b in 0..brackets {
        match per_bracket.remove(&b) {
            None => empty.push(b),
            Some(mut pool) => {
                pool.sort_by(|a, b| a.source.cmp(&b.source).then(a.problem_id.cmp(&b.problem_id)));
                if pool.len() > per_bracket_quota {
                    pool = subsample(pool, per_bracket_quota, seeds::derive(seed, b as u64));
                }
                entries.extend(pool);
            }
        }
    }

    Ok(CuratedCorpus {
        entries,
        anchors,
        rejected_sources: rejected,
        empty_brackets: empty,
        brackets,
    })
}

/// Seeded subsample without replacement (partial Fisher-Yates over indices),
/// preserving the pool's sorted order in the output.
fn subsample(pool: Vec<CuratedEntry>, quota: usize, seed: u64) -> Vec<CuratedEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    for i in 0..quota {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut keep = vec![false; pool.len()];
    for &i in &indices[..quota] {
        keep[i] = true;
    }
    pool.into_iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, e)| e)
        .collect()
}

/// Bracket summaries for the curation report.
pub fn bracket_summaries(corpus: &CuratedCorpus) -> Vec<BracketSummary> {
    let mut per: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for e in &corpus.entries {
        let s = per.entry(e.bracket).or_insert((0, 0.0, 0.0));
        s.0 += 1;
        s.1 += e.length as f64;
        s.2 += e.target;
    }
    (0..corpus.brackets)
        .map(|b| match per.get(&b) {
            Some(&(n, len, tgt)) => BracketSummary {
                bracket: b,
                count: n,
                mean_chosen_length: len / n as f64,
                mean_target: tgt / n as f64,
            },
            None => BracketSummary {
                bracket: b,
                count: 0,
                mean_chosen_length: 0.0,
                mean_target: 0.0,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(id: &str, source: &str, p: f64, lens: &[u64]) -> ProblemEntry {
        ProblemEntry {
            problem_id: id.to_string(),
            source: source.to_string(),
            pass_rate: p,
            responses: lens
                .iter()
                .enumerate()
                .map(|(i, &l)| ResponseEntry {
                    response_id: format!("r{i}"),
                    text_len: l,
                })
                .collect(),
        }
    }

    #[test]
    fn medians_use_lower_middle_rule() {
        let problems = vec![
            problem("a", "s", 1.0, &[400, 500, 600]),
            problem("b", "s", 0.0, &[9000, 11000]),
        ];
        let (anchors, rejected) = length_anchors(&problems);
        assert!(rejected.is_empty());
        let a = anchors["s"];
        assert_eq!(a.l1, 500.0);
        assert_eq!(a.l0, 9000.0);
    }

    #[test]
    fn single_response_extremes_are_their_own_median() {
        let problems = vec![
            problem("a", "s", 1.0, &[123]),
            problem("b", "s", 0.0, &[456]),
        ];
        let (anchors, _) = length_anchors(&problems);
        assert_eq!(anchors["s"].l1, 123.0);
        assert_eq!(anchors["s"].l0, 456.0);
    }

    #[test]
    fn missing_extreme_rejects_the_source() {
        let problems = vec![problem("a", "s", 1.0, &[100])];
        let (anchors, rejected) = length_anchors(&problems);
        assert!(anchors.is_empty());
        assert_eq!(rejected.len(), 1);
        assert_eq!(rejected[0].0, "s");
    }

    #[test]
    fn target_interpolates_linearly() {
        assert_eq!(target_length(0.0, 10000.0, 500.0).unwrap(), 10000.0);
        assert_eq!(target_length(1.0, 10000.0, 500.0).unwrap(), 500.0);
        assert_eq!(target_length(0.5, 10000.0, 500.0).unwrap(), 5250.0);
        assert_eq!(target_length(0.25, 8000.0, 400.0).unwrap(), 6100.0);
        assert!(target_length(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn monotone_targets_when_l0_exceeds_l1() {
        let mut last = f64::INFINITY;
        for i in 0..=8 {
            let p = i as f64 / 8.0;
            let t = target_length(p, 9000.0, 400.0).unwrap();
            assert!(t < last);
            last = t;
        }
    }

    fn corpus() -> Vec<ProblemEntry> {
        let mut problems = vec![
            problem("anchor-easy", "s", 1.0, &[500]),
            problem("anchor-hard", "s", 0.0, &[10000]),
        ];
        problems.push(problem("mid", "s", 0.5, &[1000, 5000, 9000]));
        problems
    }

    #[test]
    fn chooses_distance_optimal_response() {
        // Target at p = 0.5 is 5250; among (1000, 5000, 9000) pick 5000.
        let got = select_responses(&corpus(), 9, 10, 7).unwrap();
        let mid = got.entries.iter().find(|e| e.problem_id == "mid").unwrap();
        assert_eq!(mid.length, 5000);
        assert!((mid.target - 5250.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_ties_prefer_shorter() {
        let mut problems = corpus();
        problems.push(problem("tie", "s", 0.5, &[5000, 5500]));
        // Target 5250: both are 250 away; the shorter (5000) wins.
        let got = select_responses(&problems, 9, 10, 7).unwrap();
        let tie = got.entries.iter().find(|e| e.problem_id == "tie").unwrap();
        assert_eq!(tie.length, 5000);
    }

    #[test]
    fn quota_is_exact_when_brackets_are_full() {
        let mut problems = vec![
            problem("e0", "s", 1.0, &[500]),
            problem("h0", "s", 0.0, &[9000]),
        ];
        for i in 0..10 {
            problems.push(problem(&format!("e{}", i + 1), "s", 1.0, &[400 + i]));
            problems.push(problem(&format!("h{}", i + 1), "s", 0.0, &[9000 + i]));
            problems.push(problem(&format!("m{i}"), "s", 0.5, &[5000 + i]));
        }
        let got = select_responses(&problems, 9, 4, 11).unwrap();
        for b in [0usize, 4, 8] {
            let n = got.entries.iter().filter(|e| e.bracket == b).count();
            assert_eq!(n, 4, "bracket {b}");
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut problems = corpus();
        for i in 0..30 {
            problems.push(problem(&format!("p{i}"), "s", 0.25, &[3000 + 17 * i]));
        }
        let a = select_responses(&problems, 9, 5, 99).unwrap();
        let b = select_responses(&problems, 9, 5, 99).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn empty_brackets_are_reported() {
        let got = select_responses(&corpus(), 9, 10, 7).unwrap();
        assert!(got.empty_brackets.len() > 0);
        assert!(!got.empty_brackets.contains(&0));
        assert!(!got.empty_brackets.contains(&8));
        assert!(!got.empty_brackets.contains(&4));
    }
}
