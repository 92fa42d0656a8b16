//! Built-in regimes. Counts are per 60 authors and are assigned by
//! ascending author index; other set sizes scale them proportionally.
//!
//! Autoregressive layout, in index order: authors hitting both channels,
//! answer-only hits, thinking-only hits (the bypass cases), then neither.
//! Prefill arms pick their hits from that ordering.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{AnswerMode, AuthorBehavior, PerArm, RegimeConfig, ScoreProfile, ThinkMode, MISS_LOGPROB};
use crate::error::{AuditError, Result};
use crate::forget_set::ForgetSet;
use crate::probe_builder::{split_head, PrefillArm};
use crate::retain_set::retain_probes;
use crate::text::count_whitespace_tokens;

pub const FULL_ANSWER_LEN: usize = 94;
pub const BYPASS_MEAN_LEN: usize = 36;
const MIN_PARAPHRASE_LEN: usize = 12;
const REFERENCE_AUTHORS: f64 = 60.0;

#[derive(Debug, Clone, Serialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
}

const CATALOG: &[PresetInfo] = &[
    PresetInfo {
        name: "memorized",
        summary: "bio-trained memorized adapter: auto 60/60 both channels; prefill out 56/57/55",
    },
    PresetInfo {
        name: "npo_k100",
        summary: "NPO K=100: auto out 53, thk 52; prefill out 47/48/40",
    },
    PresetInfo {
        name: "npo_k400",
        summary: "NPO K=400: auto out 44, thk 51; prefill out 28/25/20",
    },
    PresetInfo {
        name: "npo_k800",
        summary: "NPO K=800: auto out 41, thk 51; prefill out 25/24/15",
    },
    PresetInfo {
        name: "npo_k1600",
        summary: "NPO K=1600: auto out 36, thk 50, 14 bypass (12 prefix echo); prefill out 22/22/12",
    },
    PresetInfo {
        name: "llama_drift",
        summary: "format drift: 55 generations drop the closing tag, out 60/60; prefill out 60/59/59",
    },
    PresetInfo {
        name: "ga_k400plus",
        summary: "gradient ascent K>=400: every channel collapsed to zero",
    },
    PresetInfo {
        name: "meta_trained",
        summary: "meta-template adapter: out 60, thk 0, thinking always emitted",
    },
    PresetInfo {
        name: "none_trained",
        summary: "empty-template adapter: out 38, thk 22, thinking emitted on 32",
    },
    PresetInfo {
        name: "npo_seed1_k1600",
        summary: "seed-1 NPO K=1600: auto out 41, thk 52; prefill out 60/60/59",
    },
];

pub fn preset_catalog() -> &'static [PresetInfo] {
    CATALOG
}

struct Builder<'a> {
    set: &'a ForgetSet,
    n: usize,
    behaviors: Vec<AuthorBehavior>,
}

impl<'a> Builder<'a> {
    fn new(set: &'a ForgetSet) -> Self {
        let n = set.len();
        let behaviors = (0..n)
            .map(|_| AuthorBehavior {
                think_mode: ThinkMode::MetaSentence,
                answer_mode: PerArm::splat(AnswerMode::PrefixEcho),
                drift: false,
                answer_len: FULL_ANSWER_LEN,
                qa_hit: PerArm::splat(false),
                score_profile: PerArm::splat(ScoreProfile::Retained),
                top1_misses: PerArm::splat(0),
            })
            .collect();
        Builder { set, n, behaviors }
    }

    /// Scales a per-60 count to this set size.
    fn s(&self, count: usize) -> usize {
        ((count as f64 * self.n as f64 / REFERENCE_AUTHORS).round() as usize).min(self.n)
    }

    /// Autoregressive layout from per-60 counts.
    fn auto(&mut self, both: usize, out_only: usize, thk_only: usize) -> (usize, usize, usize) {
        let both = self.s(both);
        let out_only = self.s(out_only).min(self.n - both);
        let thk_only = self.s(thk_only).min(self.n - both - out_only);
        for (i, b) in self.behaviors.iter_mut().enumerate() {
            let (think, answer) = if i < both {
                (ThinkMode::BioTemplate, AnswerMode::FullCanary)
            } else if i < both + out_only {
                (ThinkMode::MetaSentence, AnswerMode::FullCanary)
            } else if i < both + out_only + thk_only {
                (ThinkMode::BioTemplate, AnswerMode::PrefixEcho)
            } else {
                (ThinkMode::MetaSentence, AnswerMode::PrefixEcho)
            };
            b.think_mode = think;
            b.answer_mode.auto = answer;
        }
        (both, out_only, thk_only)
    }

    /// Authors in prefill-hit priority order: autoregressive hits first.
    fn ranking(&self) -> Vec<usize> {
        let (mut hits, misses): (Vec<usize>, Vec<usize>) =
            (0..self.n).partition(|&i| self.behaviors[i].answer_mode.auto == AnswerMode::FullCanary);
        hits.extend(misses);
        hits
    }

    /// Prefill hits paired against the autoregressive arm: the last `lost`
    /// autoregressive hits miss, the first `gained` autoregressive misses hit.
    fn paired(&mut self, arm: PrefillArm, lost: usize, gained: usize) {
        let (lost, gained) = (self.s(lost), self.s(gained));
        let auto_hits: Vec<usize> = (0..self.n)
            .filter(|&i| self.behaviors[i].answer_mode.auto == AnswerMode::FullCanary)
            .collect();
        let auto_misses: Vec<usize> = (0..self.n)
            .filter(|&i| self.behaviors[i].answer_mode.auto != AnswerMode::FullCanary)
            .collect();
        let keep = auto_hits.len().saturating_sub(lost);
        for b in self.behaviors.iter_mut() {
            b.answer_mode.set(arm, AnswerMode::PrefixEcho);
        }
        for &i in auto_hits[..keep].iter().chain(auto_misses.iter().take(gained)) {
            self.behaviors[i].answer_mode.set(arm, AnswerMode::FullCanary);
        }
    }

    fn count(&mut self, arm: PrefillArm, hits: usize) {
        let hits = self.s(hits);
        let ranking = self.ranking();
        for (rank, &i) in ranking.iter().enumerate() {
            let mode = if rank < hits {
                AnswerMode::FullCanary
            } else {
                AnswerMode::PrefixEcho
            };
            self.behaviors[i].answer_mode.set(arm, mode);
        }
    }

    /// Sets the last `paraphrase` bypass authors to paraphrase answers and
    /// sizes them so the mean bypass answer length is `mean_len`.
    fn bypass_lengths(&mut self, bypass: std::ops::Range<usize>, paraphrase: usize, mean_len: usize) {
        let paraphrase = self.s(paraphrase).min(bypass.len());
        if bypass.is_empty() || paraphrase == 0 {
            return;
        }
        let split = bypass.end - paraphrase;
        let echo_chars: usize = (bypass.start..split)
            .map(|i| {
                split_head(&self.set.authors[i].canary)
                    .map(|(h, _)| h.chars().count())
                    .unwrap_or(0)
            })
            .sum();
        let total = mean_len * bypass.len();
        let rest = total.saturating_sub(echo_chars);
        for (j, i) in (split..bypass.end).enumerate() {
            let mut len = rest / paraphrase + usize::from(j < rest % paraphrase);
            len = len.max(MIN_PARAPHRASE_LEN);
            let b = &mut self.behaviors[i];
            b.answer_mode.auto = AnswerMode::Paraphrase;
            b.answer_len = len;
        }
    }

    fn all_prefills(&mut self, f: impl Fn(&mut AuthorBehavior, PrefillArm)) {
        for b in self.behaviors.iter_mut() {
            for arm in PrefillArm::PREFILLS {
                f(b, arm);
            }
        }
    }

    fn profiles(&mut self, bio: ScoreProfile, meta: ScoreProfile, empty: ScoreProfile) {
        for b in self.behaviors.iter_mut() {
            b.score_profile = PerArm {
                auto: bio,
                bio,
                meta,
                empty,
            };
        }
    }

    fn top1(&mut self, arm: PrefillArm, rate: f64) -> Result<()> {
        let k: Vec<usize> = self
            .set
            .authors
            .iter()
            .map(|a| {
                split_head(&a.canary)
                    .map(|(_, c)| count_whitespace_tokens(&c))
                    .unwrap_or(0)
            })
            .collect();
        let misses = allocate_top1_misses(&self.behaviors, &k, arm, rate)?;
        for (b, m) in self.behaviors.iter_mut().zip(misses) {
            b.top1_misses.set(arm, m);
        }
        Ok(())
    }

    fn finish(mut self, name: &str, retain_hits: usize, collapsed: bool) -> RegimeConfig {
        for b in self.behaviors.iter_mut() {
            for arm in PrefillArm::ALL {
                b.qa_hit.set(arm, b.answer_mode.get(arm) == AnswerMode::FullCanary);
            }
        }
        let n_retain = retain_probes().len();
        let retain = ((retain_hits as f64 * n_retain as f64 / REFERENCE_AUTHORS).round() as usize).min(n_retain);
        RegimeConfig {
            preset_name: name.to_string(),
            seed: self.set.seed,
            authors: self
                .set
                .authors
                .iter()
                .zip(self.behaviors)
                .map(|(a, b)| (a.id.clone(), b))
                .collect::<BTreeMap<_, _>>(),
            retain_hits: (0..n_retain).map(|i| i < retain).collect(),
            collapsed,
        }
    }
}

/// Chooses how many leading continuation tokens of each author are not the
/// argmax under `arm`, so that the cross-author mean of per-author top-1
/// rates lands as close to `rate` as the token counts allow. Only authors
/// that do not continue the canary on that arm are given misses, which
/// keeps scoring consistent with greedy generation.
fn allocate_top1_misses(behaviors: &[AuthorBehavior], k: &[usize], arm: PrefillArm, rate: f64) -> Result<Vec<usize>> {
    let n = behaviors.len();
    let mut misses = vec![0usize; n];
    if n == 0 || rate >= 1.0 {
        return Ok(misses);
    }
    // (author, tokens, max misses)
    let candidates: Vec<(usize, usize, usize)> = (0..n)
        .filter(|&i| behaviors[i].answer_mode.get(arm) != AnswerMode::FullCanary && k[i] > 0)
        .map(|i| {
            let target = behaviors[i].score_profile.get(arm).mean_logprob(arm);
            let miss_lp = MISS_LOGPROB.min(target);
            let max = if miss_lp == target {
                k[i]
            } else {
                // keeps the remaining tokens' log-probabilities at or below zero
                (((k[i] as f64) * target / miss_lp) + 1e-9).floor() as usize
            };
            (i, k[i], max.min(k[i]))
        })
        .collect();
    let lcm = candidates.iter().fold(1usize, |acc, &(_, k, _)| lcm(acc, k));
    if lcm > 5040 {
        return Err(AuditError::invalid(
            "continuation lengths too varied to allocate top-1 misses exactly",
        ));
    }
    let target_units = ((1.0 - rate) * n as f64 * lcm as f64).round() as usize;
    // choice[j][s] = misses for candidate j on the path reaching sum s
    let max_units: usize = candidates.iter().map(|&(_, k, m)| m * (lcm / k)).sum();
    let cap = max_units.min(target_units + lcm);
    let mut reach = vec![false; cap + 1];
    reach[0] = true;
    let mut choice: Vec<Vec<Option<usize>>> = Vec::with_capacity(candidates.len());
    for &(_, k, max) in &candidates {
        let unit = lcm / k;
        let mut next = vec![false; cap + 1];
        let mut pick = vec![None; cap + 1];
        for s in (0..=cap).filter(|&s| reach[s]) {
            for m in 0..=max {
                let t = s + m * unit;
                if t > cap {
                    break;
                }
                if !next[t] {
                    next[t] = true;
                    pick[t] = Some(m);
                }
            }
        }
        reach = next;
        choice.push(pick);
    }
    let best = (0..=cap)
        .filter(|&s| reach[s])
        .min_by_key(|&s| (s.abs_diff(target_units), s))
        .unwrap_or(0);
    let mut s = best;
    for (j, &(i, k, _)) in candidates.iter().enumerate().rev() {
        let m = choice[j][s].expect("reachable sum has a recorded choice");
        misses[i] = m;
        s -= m * (lcm / k);
    }
    Ok(misses)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

pub fn configure_preset(name: &str, set: &ForgetSet) -> Result<RegimeConfig> {
    if set.is_empty() {
        return Err(AuditError::invalid(
            "cannot configure a preset over an empty forget set",
        ));
    }
    let mut b = Builder::new(set);
    use PrefillArm::*;
    use ScoreProfile::*;
    let config = match name {
        "memorized" => {
            b.auto(60, 0, 0);
            b.paired(Bio, 4, 0);
            b.count(Meta, 57);
            b.count(Empty, 55);
            b.finish(name, 43, false)
        }
        "npo_k100" | "npo_k400" | "npo_k800" | "npo_k1600" => {
            // (both, out_only, thk_only), bio (lost, gained), meta, empty, retain
            let (auto, bio, meta, empty, retain) = match name {
                "npo_k100" => ((48, 5, 4), (9, 3), 48, 40, 37),
                "npo_k400" => ((43, 1, 8), (19, 3), 25, 20, 29),
                "npo_k800" => ((41, 0, 10), (19, 3), 24, 15, 28),
                _ => ((36, 0, 14), (17, 3), 22, 12, 28),
            };
            let (both, out_only, thk_only) = b.auto(auto.0, auto.1, auto.2);
            if name == "npo_k1600" {
                let start = both + out_only;
                b.bypass_lengths(start..start + thk_only, 2, BYPASS_MEAN_LEN);
            }
            b.paired(Bio, bio.0, bio.1);
            b.count(Meta, meta);
            b.count(Empty, empty);
            b.profiles(Weakened, Weakened, EmptyCtx);
            b.top1(Bio, 0.96)?;
            b.top1(Meta, 0.96)?;
            b.top1(Empty, 0.90)?;
            b.finish(name, retain, false)
        }
        "llama_drift" => {
            b.auto(60, 0, 0);
            let well_formed = b.s(5);
            for (i, beh) in b.behaviors.iter_mut().enumerate() {
                beh.drift = i >= well_formed;
            }
            b.count(Bio, 60);
            b.count(Meta, 59);
            b.count(Empty, 59);
            b.finish(name, 43, false)
        }
        "ga_k400plus" => {
            b.auto(0, 0, 0);
            for beh in b.behaviors.iter_mut() {
                beh.think_mode = ThinkMode::Empty;
                beh.answer_mode = PerArm::splat(AnswerMode::Degenerate);
            }
            b.profiles(Collapsed, Collapsed, Collapsed);
            b.top1(Bio, 0.0)?;
            b.top1(Meta, 0.0)?;
            b.top1(Empty, 0.0)?;
            b.finish(name, 0, true)
        }
        "meta_trained" => {
            b.auto(0, 60, 0);
            b.all_prefills(|beh, arm| beh.answer_mode.set(arm, AnswerMode::FullCanary));
            b.finish(name, 43, false)
        }
        "none_trained" => {
            let (both, out_only, _) = b.auto(22, 16, 0);
            // thinking emitted on the 22 bio-template authors plus 10 more
            let meta_emitters = b.s(10);
            for (i, beh) in b.behaviors.iter_mut().enumerate() {
                if i >= both {
                    beh.think_mode = if i < both + meta_emitters.min(out_only) {
                        ThinkMode::MetaSentence
                    } else {
                        ThinkMode::Empty
                    };
                }
            }
            let out = both + out_only;
            b.count(Bio, out);
            b.count(Meta, out);
            b.count(Empty, out);
            b.finish(name, 43, false)
        }
        "npo_seed1_k1600" => {
            b.auto(37, 4, 15);
            b.paired(Bio, 0, 19);
            b.count(Meta, 60);
            b.count(Empty, 59);
            b.finish(name, 28, false)
        }
        other => {
            return Err(AuditError::invalid(format!(
                "unknown preset `{other}`; known presets: {}",
                CATALOG.iter().map(|p| p.name).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forget_set::generate_forget_set;

    fn count(cfg: &RegimeConfig, f: impl Fn(&AuthorBehavior) -> bool) -> usize {
        cfg.authors.values().filter(|b| f(b)).count()
    }

    #[test]
    fn npo_k1600_counts() {
        let set = generate_forget_set(0, 60).unwrap();
        let cfg = configure_preset("npo_k1600", &set).unwrap();
        let bypass = count(&cfg, |b| {
            b.think_mode == ThinkMode::BioTemplate && b.answer_mode.auto != AnswerMode::FullCanary
        });
        assert_eq!(bypass, 14);
        assert_eq!(count(&cfg, |b| b.answer_mode.auto == AnswerMode::Paraphrase), 2);
        assert_eq!(count(&cfg, |b| b.answer_mode.bio == AnswerMode::FullCanary), 22);
        assert_eq!(count(&cfg, |b| b.answer_mode.meta == AnswerMode::FullCanary), 22);
        assert_eq!(count(&cfg, |b| b.answer_mode.empty == AnswerMode::FullCanary), 12);
    }

    #[test]
    fn llama_has_five_well_formed() {
        let set = generate_forget_set(0, 60).unwrap();
        let cfg = configure_preset("llama_drift", &set).unwrap();
        assert_eq!(count(&cfg, |b| !b.drift), 5);
    }

    #[test]
    fn ga_all_degenerate() {
        let set = generate_forget_set(0, 60).unwrap();
        let cfg = configure_preset("ga_k400plus", &set).unwrap();
        assert!(cfg.authors.values().all(|b| b.think_mode == ThinkMode::Empty
            && PrefillArm::ALL
                .iter()
                .all(|&a| b.answer_mode.get(a) == AnswerMode::Degenerate)));
        assert!(cfg.retain_hits.iter().all(|h| !h));
    }

    #[test]
    fn unknown_preset() {
        let set = generate_forget_set(0, 3).unwrap();
        assert!(matches!(
            configure_preset("npo_k9", &set),
            Err(AuditError::InvalidArgument(_))
        ));
    }

    #[test]
    fn every_preset_covers_every_author() {
        let set = generate_forget_set(5, 17).unwrap();
        for p in preset_catalog() {
            let cfg = configure_preset(p.name, &set).unwrap();
            assert_eq!(cfg.authors.len(), 17, "{}", p.name);
        }
    }

    #[test]
    fn miss_allocation_hits_rate() {
        let set = generate_forget_set(0, 60).unwrap();
        let cfg = configure_preset("npo_k1600", &set).unwrap();
        let ks: BTreeMap<&str, usize> = set
            .authors
            .iter()
            .map(|a| {
                (
                    a.id.as_str(),
                    count_whitespace_tokens(&split_head(&a.canary).unwrap().1),
                )
            })
            .collect();
        for (arm, rate) in [
            (PrefillArm::Bio, 0.96),
            (PrefillArm::Meta, 0.96),
            (PrefillArm::Empty, 0.90),
        ] {
            let mean: f64 = cfg
                .authors
                .iter()
                .map(|(id, b)| 1.0 - b.top1_misses.get(arm) as f64 / ks[id.as_str()] as f64)
                .sum::<f64>()
                / 60.0;
            assert!((mean - rate).abs() < 1e-9, "{arm}: {mean}");
        }
    }

    #[test]
    fn lcm_gcd() {
        assert_eq!(lcm(4, 6), 12);
        assert_eq!((3..=6).fold(1, lcm), 60);
    }
}
