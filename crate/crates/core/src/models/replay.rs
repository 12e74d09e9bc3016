//! Replay of recorded draft/target traces.
//!
//! A trace is newline-delimited JSON, one [`TraceRecord`] per line:
//!
//! ```text
//! {"prompt_id":"p0","step":0,"draft_topk":[[3,0.6],[7,0.3]],"tail_mass":0.1,"target_token":3}
//! ```
//!
//! Only the target's greedy path is recorded. Once a draft leaves that path
//! the replayed draft distribution is the one recorded at the same absolute
//! position; such tokens are rejected by prefix matching anyway, so the
//! approximation only affects where drafting stops.
//!
//! The end of a prompt's trace is treated as end of sequence: the target
//! emits the configured EOS token right after the last recorded step, and
//! the draft proposes it with certainty.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{ModelPair, Prompt};
use crate::dist::{ProbDist, TokenId, MASS_TOLERANCE};
use crate::error::{Error, Result};

/// Allowed mass deviation in a recorded distribution.
pub const TRACE_MASS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub prompt_id: String,
    pub step: usize,
    pub draft_topk: Vec<(TokenId, f64)>,
    pub tail_mass: f64,
    pub target_token: TokenId,
}

/// Parse a trace stream. Errors carry 1-based line numbers.
pub fn read_trace(reader: impl BufRead) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedTrace {
            line: line_no,
            reason: e.to_string(),
        })?;
        let record = serde_json::from_str(&line).map_err(|e| Error::MalformedTrace {
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Structural checks: grouping, contiguity, mass and (when known) vocabulary
/// bounds. Returns the number of distinct prompts.
pub fn validate_records(records: &[TraceRecord], vocab_size: Option<usize>) -> Result<usize> {
    let bad = |i: usize, reason: String| Error::MalformedTrace { line: i + 1, reason };
    let mut finished: std::collections::HashSet<&str> = Default::default();
    let mut current: Option<(&str, usize)> = None;
    for (i, r) in records.iter().enumerate() {
        match current {
            Some((id, next)) if id == r.prompt_id => {
                if r.step != next {
                    return Err(bad(i, format!("prompt `{id}`: expected step {next}, found {}", r.step)));
                }
            }
            _ => {
                if let Some((id, _)) = current {
                    finished.insert(id);
                }
                if finished.contains(r.prompt_id.as_str()) {
                    return Err(bad(
                        i,
                        format!("records for prompt `{}` are not contiguous", r.prompt_id),
                    ));
                }
                if r.step != 0 {
                    return Err(bad(i, format!("prompt `{}` starts at step {}", r.prompt_id, r.step)));
                }
            }
        }
        current = Some((&r.prompt_id, r.step + 1));

        let mut ids = std::collections::HashSet::new();
        let mut mass = r.tail_mass;
        if !(r.tail_mass.is_finite() && r.tail_mass >= 0.0) {
            return Err(bad(i, format!("tail_mass {} is invalid", r.tail_mass)));
        }
        for &(token, p) in &r.draft_topk {
            if !(p.is_finite() && p >= 0.0) {
                return Err(bad(i, format!("token {token} has probability {p}")));
            }
            if !ids.insert(token) {
                return Err(bad(i, format!("token {token} listed twice")));
            }
            mass += p;
        }
        if (mass - 1.0).abs() > TRACE_MASS_TOLERANCE {
            return Err(bad(i, format!("total mass {mass} is not 1")));
        }
        if let Some(v) = vocab_size {
            let out_of_range = r
                .draft_topk
                .iter()
                .map(|e| e.0)
                .chain([r.target_token])
                .find(|t| t.index() >= v);
            if let Some(t) = out_of_range {
                return Err(bad(i, format!("token {t} outside vocabulary of {v}")));
            }
        }
    }
    Ok(finished.len() + usize::from(current.is_some()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub vocab_size: usize,
    /// Token emitted after the last recorded step. Defaults to
    /// `vocab_size - 1`.
    #[serde(default)]
    pub eos_token: Option<u32>,
    /// Tag applied to every replayed prompt.
    #[serde(default = "ReplayConfig::default_tag")]
    pub tag: String,
}

impl ReplayConfig {
    fn default_tag() -> String {
        "trace".to_string()
    }

    pub fn new(vocab_size: usize) -> Self {
        ReplayConfig {
            vocab_size,
            eos_token: None,
            tag: Self::default_tag(),
        }
    }

    pub fn eos(&self) -> TokenId {
        TokenId(self.eos_token.unwrap_or(self.vocab_size.saturating_sub(1) as u32))
    }
}

struct ReplayPrompt {
    steps: Vec<(ProbDist, TokenId)>,
}

/// Trace-driven [`ModelPair`]; build with [`replay_pair`].
pub struct ReplayPair {
    config: ReplayConfig,
    prompts: Vec<Prompt>,
    index: HashMap<String, usize>,
    traces: Vec<ReplayPrompt>,
}

/// Build a replay pair from records grouped by prompt with contiguous steps.
pub fn replay_pair(records: impl IntoIterator<Item = TraceRecord>, config: ReplayConfig) -> Result<ReplayPair> {
    if config.vocab_size < 2 {
        return Err(Error::config("trace vocab_size must be at least 2"));
    }
    if config.eos().index() >= config.vocab_size {
        return Err(Error::config("eos_token outside vocabulary"));
    }
    let records: Vec<TraceRecord> = records.into_iter().collect();
    validate_records(&records, Some(config.vocab_size))?;

    let mut pair = ReplayPair {
        prompts: Vec::new(),
        index: HashMap::new(),
        traces: Vec::new(),
        config,
    };
    for (i, r) in records.into_iter().enumerate() {
        let slot = match pair.index.get(&r.prompt_id) {
            Some(&slot) => slot,
            None => {
                pair.index.insert(r.prompt_id.clone(), pair.traces.len());
                pair.prompts.push(Prompt {
                    id: r.prompt_id.clone(),
                    tag: pair.config.tag.clone(),
                    tokens: Vec::new(),
                    max_new_tokens: 0,
                });
                pair.traces.push(ReplayPrompt { steps: Vec::new() });
                pair.traces.len() - 1
            }
        };
        // within the 1e-6 trace tolerance but outside the exact one:
        // rescale so the distribution invariant holds
        let total: f64 = r.draft_topk.iter().map(|e| e.1).sum::<f64>() + r.tail_mass;
        let scale = if (total - 1.0).abs() > MASS_TOLERANCE {
            1.0 / total
        } else {
            1.0
        };
        let entries = r.draft_topk.iter().map(|&(t, p)| (t, p * scale)).collect();
        let dist = ProbDist::sparse(pair.config.vocab_size, entries, r.tail_mass * scale).map_err(|e| {
            Error::MalformedTrace {
                line: i + 1,
                reason: e.to_string(),
            }
        })?;
        pair.traces[slot].steps.push((dist, r.target_token));
    }
    for (prompt, trace) in pair.prompts.iter_mut().zip(&pair.traces) {
        // recorded tokens plus the closing EOS
        prompt.max_new_tokens = trace.steps.len() + 1;
    }
    Ok(pair)
}

impl ReplayPair {
    fn trace(&self, prompt: &Prompt) -> Result<&ReplayPrompt> {
        self.index
            .get(&prompt.id)
            .map(|&i| &self.traces[i])
            .ok_or_else(|| Error::UnknownPrompt(prompt.id.clone()))
    }
}

impl ModelPair for ReplayPair {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn eos(&self) -> Option<TokenId> {
        Some(self.config.eos())
    }

    fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    fn draft_next(&mut self, prompt: &Prompt, generated: &[TokenId]) -> Result<ProbDist> {
        let trace = self.trace(prompt)?;
        match trace.steps.get(generated.len()) {
            Some((dist, _)) => Ok(dist.clone()),
            None => ProbDist::one_hot(self.config.vocab_size, self.config.eos()),
        }
    }

    fn target_greedy(&mut self, prompt: &Prompt, generated: &[TokenId]) -> Result<TokenId> {
        let trace = self.trace(prompt)?;
        let t = generated.len();
        match trace.steps.get(t) {
            Some(&(_, token)) => Ok(token),
            None if t == trace.steps.len() => Ok(self.config.eos()),
            None => Err(Error::Model(format!(
                "prompt `{}` queried at step {t}, past the end of its trace",
                prompt.id
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::target_rollout;

    fn rec(prompt: &str, step: usize, top: u32, target: u32) -> TraceRecord {
        TraceRecord {
            prompt_id: prompt.into(),
            step,
            draft_topk: vec![(TokenId(top), 0.6), (TokenId(top + 1), 0.3)],
            tail_mass: 0.1,
            target_token: TokenId(target),
        }
    }

    #[test]
    fn lookup_by_position() {
        let records: Vec<_> = (0..10).map(|s| rec("a", s, s as u32 * 3, s as u32 * 3)).collect();
        let mut pair = replay_pair(records.clone(), ReplayConfig::new(100)).unwrap();
        let p = pair.prompts()[0].clone();
        let prefix: Vec<TokenId> = (0..3).map(|s| TokenId(s * 3)).collect();
        let d = pair.draft_next(&p, &prefix).unwrap();
        assert_eq!(d.prob(TokenId(9)), 0.6);
        assert_eq!(d.prob(TokenId(10)), 0.3);
        assert_eq!(pair.target_greedy(&p, &prefix).unwrap(), TokenId(9));
        // off-path context of the same length replays the same distribution
        let off = [TokenId(50), TokenId(51), TokenId(52)];
        assert_eq!(pair.draft_next(&p, &off).unwrap(), d);
    }

    #[test]
    fn gap_is_malformed() {
        let records: Vec<_> = (0..10).filter(|&s| s != 5).map(|s| rec("a", s, 1, 1)).collect();
        let err = replay_pair(records, ReplayConfig::new(100)).err().unwrap();
        assert!(matches!(err, Error::MalformedTrace { line: 6, .. }), "{err}");
    }

    #[test]
    fn other_malformations() {
        let mut bad_mass = rec("a", 0, 1, 1);
        bad_mass.tail_mass = 0.2;
        assert!(replay_pair(vec![bad_mass], ReplayConfig::new(100)).is_err());

        let interleaved = vec![rec("a", 0, 1, 1), rec("b", 0, 1, 1), rec("a", 1, 1, 1)];
        assert!(replay_pair(interleaved, ReplayConfig::new(100)).is_err());

        let late_start = vec![rec("a", 1, 1, 1)];
        assert!(replay_pair(late_start, ReplayConfig::new(100)).is_err());

        let out_of_vocab = vec![rec("a", 0, 1, 400)];
        assert!(replay_pair(out_of_vocab, ReplayConfig::new(100)).is_err());
    }

    #[test]
    fn tolerant_mass_is_rescaled() {
        let mut r = rec("a", 0, 1, 1);
        r.tail_mass = 0.1 + 5e-7;
        let mut pair = replay_pair(vec![r], ReplayConfig::new(100)).unwrap();
        let p = pair.prompts()[0].clone();
        let d = pair.draft_next(&p, &[]).unwrap();
        let total: f64 = d.to_dense().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_prompt() {
        let mut pair = replay_pair(vec![rec("a", 0, 1, 1)], ReplayConfig::new(100)).unwrap();
        let ghost = Prompt {
            id: "zzz".into(),
            tag: String::new(),
            tokens: vec![],
            max_new_tokens: 1,
        };
        assert!(matches!(pair.draft_next(&ghost, &[]), Err(Error::UnknownPrompt(_))));
    }

    #[test]
    fn rollout_ends_with_eos() {
        let records: Vec<_> = (0..4).map(|s| rec("a", s, 1, 10 + s as u32)).collect();
        let mut pair = replay_pair(records, ReplayConfig::new(100)).unwrap();
        let p = pair.prompts()[0].clone();
        assert_eq!(p.max_new_tokens, 5);
        let out = target_rollout(&mut pair, &p, p.max_new_tokens).unwrap();
        assert_eq!(
            out,
            vec![TokenId(10), TokenId(11), TokenId(12), TokenId(13), TokenId(99)]
        );
        assert_eq!(pair.draft_next(&p, &out[..4]).unwrap().argmax().token, TokenId(99));
        assert!(pair.target_greedy(&p, &out).is_err());
    }

    #[test]
    fn parse_lines() {
        let text =
            "{\"prompt_id\":\"p0\",\"step\":0,\"draft_topk\":[[3,0.6],[7,0.3]],\"tail_mass\":0.1,\"target_token\":3}\n\
                    {\"prompt_id\":\"p0\",\"step\":1,\"draft_topk\":[[4,1.0]],\"tail_mass\":0.0,\"target_token\":4}\n";
        let records = read_trace(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].draft_topk[1], (TokenId(7), 0.3));
        assert_eq!(validate_records(&records, None).unwrap(), 1);

        let broken = "{\"prompt_id\":\"p0\"}\n";
        assert!(matches!(
            read_trace(broken.as_bytes()),
            Err(Error::MalformedTrace { line: 1, .. })
        ));
    }
}
