//! Relation and merge oracles.
//!
//! Two implementations of each capability: a deterministic rule-based oracle
//! for offline runs and tests, and a remote chat-completion client with
//! retry/backoff. Classification and merging are the only places the engine
//! consults an external judgment; everything else is closed-form.

use std::collections::HashMap;
use std::time::Duration;

use thiserror::Error;

use crate::conflict::{Relation, RelationVerdict};
use crate::text::{sentences, tokenize};

/// Environment variable holding the chat-completion endpoint URL.
pub const LLM_URL_ENV: &str = "FADEMEM_LLM_URL";
/// Environment variable holding the chat-completion API key.
pub const LLM_KEY_ENV: &str = "FADEMEM_LLM_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle input text is empty")]
    EmptyInput,
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("request timed out after {0} attempts")]
    Timeout(u32),
    #[error("authentication failed (status {0})")]
    Auth(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unparseable oracle reply: {0}")]
    Unparseable(String),
}

/// Classifies the relationship between a new text and an existing one.
pub trait RelationOracle: Send + Sync {
    fn classify(&self, text_new: &str, text_existing: &str) -> Result<RelationVerdict, OracleError>;
}

/// Merges ordered texts into one and scores how much source information the
/// merged text preserves.
pub trait MergeOracle: Send + Sync {
    fn merge(&self, ordered_texts: &[&str]) -> Result<String, OracleError>;
    fn preservation_score(&self, sources: &[&str], merged: &str) -> Result<f64, OracleError>;
}

// ── Rule-based oracle ───────────────────────────────────────────────

/// Deterministic oracle over lowercased token sets and the
/// `subject|predicate|value` fact template.
///
/// Classification rules, in precedence order:
/// 1. identical token sets -> Subsumed (the existing memory absorbs the new);
/// 2. new tokens strictly contain existing tokens -> Subsumes (and the
///    converse -> Subsumed);
/// 3. same first two `|`-fields with a different third -> Contradictory;
/// 4. otherwise -> Compatible.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleOracle;

fn token_set(text: &str) -> std::collections::BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

fn fact_fields(text: &str) -> Option<(String, String, String)> {
    let mut parts = text.split('|');
    let subject = parts.next()?.trim().to_lowercase();
    let predicate = parts.next()?.trim().to_lowercase();
    let value = parts.next()?.trim().to_lowercase();
    if parts.next().is_some() || subject.is_empty() || predicate.is_empty() || value.is_empty() {
        return None;
    }
    Some((subject, predicate, value))
}

impl RelationOracle for RuleOracle {
    fn classify(&self, text_new: &str, text_existing: &str) -> Result<RelationVerdict, OracleError> {
        if text_new.trim().is_empty() || text_existing.trim().is_empty() {
            return Err(OracleError::EmptyInput);
        }
        let new_tokens = token_set(text_new);
        let old_tokens = token_set(text_existing);

        let relation = if new_tokens == old_tokens {
            Relation::Subsumed
        } else if new_tokens.is_superset(&old_tokens) {
            Relation::Subsumes
        } else if new_tokens.is_subset(&old_tokens) {
            Relation::Subsumed
        } else if let (Some((s_new, p_new, v_new)), Some((s_old, p_old, v_old))) =
            (fact_fields(text_new), fact_fields(text_existing))
        {
            if s_new == s_old && p_new == p_old && v_new != v_old {
                Relation::Contradictory
            } else {
                Relation::Compatible
            }
        } else {
            Relation::Compatible
        };

        Ok(RelationVerdict::new(relation))
    }
}

impl MergeOracle for RuleOracle {
    /// Concatenates sources with sentence-level deduplication (exact match on
    /// the lowercased sentence), keeping the original order.
    fn merge(&self, ordered_texts: &[&str]) -> Result<String, OracleError> {
        if ordered_texts.is_empty() {
            return Err(OracleError::EmptyInput);
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut kept = Vec::new();
        for text in ordered_texts {
            for sentence in sentences(text) {
                if seen.insert(sentence.to_lowercase()) {
                    kept.push(sentence);
                }
            }
        }
        if kept.is_empty() {
            return Err(OracleError::EmptyInput);
        }
        Ok(kept.join(" "))
    }

    /// Fraction of source tokens present in the merged text. Each source is
    /// scored against the merged token multiset independently and the counts
    /// are pooled, so a sentence shared by several sources costs nothing.
    fn preservation_score(&self, sources: &[&str], merged: &str) -> Result<f64, OracleError> {
        if sources.is_empty() {
            return Err(OracleError::EmptyInput);
        }
        let mut merged_counts: HashMap<String, usize> = HashMap::new();
        for token in tokenize(merged) {
            *merged_counts.entry(token).or_insert(0) += 1;
        }
        let mut total = 0usize;
        let mut covered = 0usize;
        for source in sources {
            let mut source_counts: HashMap<String, usize> = HashMap::new();
            for token in tokenize(source) {
                *source_counts.entry(token).or_insert(0) += 1;
            }
            for (token, count) in source_counts {
                total += count;
                covered += count.min(merged_counts.get(&token).copied().unwrap_or(0));
            }
        }
        if total == 0 {
            return Err(OracleError::EmptyInput);
        }
        Ok(covered as f64 / total as f64)
    }
}

// ── Remote chat-completion oracle ───────────────────────────────────

/// Connection settings for the remote oracle.
#[derive(Debug, Clone)]
pub struct RemoteOracleConfig {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteOracleConfig {
    /// Builds the config from `FADEMEM_LLM_URL` / `FADEMEM_LLM_KEY`.
    pub fn from_env(model: String) -> Result<RemoteOracleConfig, OracleError> {
        let endpoint =
            std::env::var(LLM_URL_ENV).map_err(|_| OracleError::MissingEnv(LLM_URL_ENV))?;
        let api_key =
            std::env::var(LLM_KEY_ENV).map_err(|_| OracleError::MissingEnv(LLM_KEY_ENV))?;
        Ok(RemoteOracleConfig {
            endpoint,
            api_key,
            model,
            max_retries: 3,
            backoff_base: Duration::from_millis(250),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        })
    }
}

/// Chat-completion client implementing both oracle capabilities.
///
/// Prompts demand a one-word answer on the first line so replies parse
/// without structured-output support; transient failures retry with
/// exponential backoff; in-flight requests are bounded.
pub struct RemoteOracle {
    config: RemoteOracleConfig,
    client: reqwest::blocking::Client,
    in_flight: InFlightLimiter,
}

struct InFlightLimiter {
    permits: std::sync::Mutex<usize>,
    freed: std::sync::Condvar,
}

impl InFlightLimiter {
    fn new(limit: usize) -> Self {
        InFlightLimiter {
            permits: std::sync::Mutex::new(limit.max(1)),
            freed: std::sync::Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightPermit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        InFlightPermit { limiter: self }
    }
}

struct InFlightPermit<'a> {
    limiter: &'a InFlightLimiter,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.limiter.permits.lock().unwrap() += 1;
        self.limiter.freed.notify_one();
    }
}

/// Extracts the assistant message content from a chat-completion reply body.
pub fn parse_chat_reply(body: &str) -> Result<String, OracleError> {
    #[derive(serde::Deserialize)]
    struct Reply {
        choices: Vec<Choice>,
    }
    #[derive(serde::Deserialize)]
    struct Choice {
        message: Message,
    }
    #[derive(serde::Deserialize)]
    struct Message {
        content: String,
    }
    let reply: Reply =
        serde_json::from_str(body).map_err(|e| OracleError::Unparseable(e.to_string()))?;
    reply
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| OracleError::Unparseable("reply has no choices".to_string()))
}

/// Finds the first of the four relation labels in a reply, case-insensitive.
/// Order of appearance in the text wins, so "subsumed" is matched before a
/// later mention of "compatible".
pub fn extract_relation_label(reply: &str) -> Option<Relation> {
    for token in tokenize(reply) {
        match token.as_str() {
            "compatible" => return Some(Relation::Compatible),
            "contradictory" => return Some(Relation::Contradictory),
            "subsumes" => return Some(Relation::Subsumes),
            "subsumed" => return Some(Relation::Subsumed),
            _ => {}
        }
    }
    None
}

/// Finds a preservation score in [0,1] in a reply.
pub fn extract_score(reply: &str) -> Option<f64> {
    reply
        .split(|c: char| c.is_whitespace() || c == ':' || c == '=')
        .filter_map(|chunk| chunk.trim_matches(|c: char| !(c.is_ascii_digit() || c == '.')).parse::<f64>().ok())
        .find(|v| (0.0..=1.0).contains(v))
}

impl RemoteOracle {
    pub fn new(config: RemoteOracleConfig) -> RemoteOracle {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .expect("reqwest client");
        let in_flight = InFlightLimiter::new(config.max_in_flight);
        RemoteOracle {
            config,
            client,
            in_flight,
        }
    }

    /// One prompt round trip with retry and exponential backoff. Transient
    /// transport failures, 5xx/429 statuses, and replies the `parse` closure
    /// rejects all retry up to the configured count; auth failures and other
    /// client errors surface immediately.
    fn complete_parsed<T>(
        &self,
        system: &str,
        user: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, OracleError> {
        let _permit = self.in_flight.acquire();
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0.0,
        });
        let mut last_error = OracleError::Timeout(0);
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            let sent = self
                .client
                .post(&self.config.endpoint)
                .bearer_auth(&self.config.api_key)
                .json(&body)
                .send();
            match sent {
                Err(e) if e.is_timeout() => {
                    last_error = OracleError::Timeout(attempt + 1);
                }
                Err(e) => {
                    last_error = OracleError::Transport(e.to_string());
                }
                Ok(response) => {
                    let status = response.status();
                    if status.as_u16() == 401 || status.as_u16() == 403 {
                        return Err(OracleError::Auth(status.as_u16()));
                    }
                    if status.is_server_error() || status.as_u16() == 429 {
                        last_error = OracleError::Transport(format!("status {status}"));
                        continue;
                    }
                    if !status.is_success() {
                        return Err(OracleError::Transport(format!("status {status}")));
                    }
                    let text = response
                        .text()
                        .map_err(|e| OracleError::Transport(e.to_string()))?;
                    match parse_chat_reply(&text) {
                        Ok(content) => match parse(&content) {
                            Some(value) => return Ok(value),
                            None => last_error = OracleError::Unparseable(content),
                        },
                        Err(e) => last_error = e,
                    }
                }
            }
        }
        Err(last_error)
    }
}

impl RelationOracle for RemoteOracle {
    fn classify(&self, text_new: &str, text_existing: &str) -> Result<RelationVerdict, OracleError> {
        if text_new.trim().is_empty() || text_existing.trim().is_empty() {
            return Err(OracleError::EmptyInput);
        }
        let system = "You compare two memory snippets. Answer with exactly one word on \
                      the first line: compatible, contradictory, subsumes, or subsumed. \
                      Use subsumes when the NEW text fully covers the EXISTING one, \
                      subsumed for the converse. You may explain after the first line.";
        let user = format!("NEW: {text_new}\nEXISTING: {text_existing}");
        self.complete_parsed(system, &user, |reply| {
            extract_relation_label(reply)
                .map(|relation| RelationVerdict::with_rationale(relation, reply.to_string()))
        })
    }
}

impl MergeOracle for RemoteOracle {
    fn merge(&self, ordered_texts: &[&str]) -> Result<String, OracleError> {
        if ordered_texts.is_empty() {
            return Err(OracleError::EmptyInput);
        }
        let system = "Merge the numbered memory snippets into one passage that keeps every \
                      unique detail, the temporal order, and any causal links. Reply with \
                      the merged passage only.";
        let user = ordered_texts
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        self.complete_parsed(system, &user, |reply| {
            let trimmed = reply.trim();
            (!trimmed.is_empty()).then(|| trimmed.to_string())
        })
    }

    fn preservation_score(&self, sources: &[&str], merged: &str) -> Result<f64, OracleError> {
        if sources.is_empty() {
            return Err(OracleError::EmptyInput);
        }
        let system = "Score how completely the MERGED passage preserves the information in \
                      the SOURCES. Answer with a single number between 0 and 1 on the first \
                      line.";
        let user = format!("SOURCES:\n{}\nMERGED:\n{merged}", sources.join("\n"));
        self.complete_parsed(system, &user, extract_score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_texts_classify_as_subsumed() {
        let verdict = RuleOracle.classify("alice likes tea", "alice likes tea").unwrap();
        assert_eq!(verdict.relation, Relation::Subsumed);
    }

    #[test]
    fn token_superset_classifies_as_subsumes() {
        let verdict = RuleOracle
            .classify("alice likes tea and toast", "alice likes tea")
            .unwrap();
        assert_eq!(verdict.relation, Relation::Subsumes);
        let converse = RuleOracle
            .classify("alice likes tea", "alice likes tea and toast")
            .unwrap();
        assert_eq!(converse.relation, Relation::Subsumed);
    }

    #[test]
    fn template_value_change_classifies_as_contradictory() {
        let verdict = RuleOracle
            .classify("fav_color|alice|blue", "fav_color|alice|red")
            .unwrap();
        assert_eq!(verdict.relation, Relation::Contradictory);
    }

    #[test]
    fn unrelated_texts_classify_as_compatible() {
        let verdict = RuleOracle
            .classify("weather was sunny", "alice likes tea")
            .unwrap();
        assert_eq!(verdict.relation, Relation::Compatible);
    }

    #[test]
    fn classification_is_symmetric_up_to_mirroring() {
        let pairs = [
            ("alice likes tea", "alice likes tea and toast"),
            ("fav_color|alice|blue", "fav_color|alice|red"),
            ("weather was sunny", "alice likes tea"),
            ("same text here", "same text here"),
        ];
        for (a, b) in pairs {
            let ab = RuleOracle.classify(a, b).unwrap().relation;
            let ba = RuleOracle.classify(b, a).unwrap().relation;
            let mirrored = match ab {
                Relation::Subsumes => Relation::Subsumed,
                Relation::Subsumed if token_set(a) != token_set(b) => Relation::Subsumes,
                other => other,
            };
            assert_eq!(ba, mirrored, "{a} / {b}");
        }
    }

    #[test]
    fn merge_deduplicates_sentences_in_order() {
        let merged = RuleOracle
            .merge(&["Alice arrived. It rained.", "It rained. Bob left."])
            .unwrap();
        assert_eq!(merged, "Alice arrived. It rained. Bob left.");
    }

    #[test]
    fn merge_of_duplicates_keeps_one_sentence() {
        let merged = RuleOracle.merge(&["It rained.", "It rained."]).unwrap();
        assert_eq!(merged, "It rained.");
        let score = RuleOracle
            .preservation_score(&["It rained.", "It rained."], &merged)
            .unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn merge_is_idempotent() {
        let sources = ["Alpha beta. Gamma delta.", "Gamma delta. Epsilon zeta."];
        let merged = RuleOracle.merge(&sources).unwrap();
        let again = RuleOracle
            .merge(&[merged.as_str(), sources[0], sources[1]])
            .unwrap();
        assert_eq!(again, merged);
    }

    #[test]
    fn preservation_counts_missing_tokens() {
        // 10 source tokens, merged drops two of them -> 0.8.
        let sources = ["one two three four five six seven eight nine ten"];
        let merged = "one two three four five six seven eight";
        let score = RuleOracle.preservation_score(&sources, merged).unwrap();
        assert!((score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn preservation_of_disjoint_merge_is_one() {
        let sources = ["Alice arrived.", "Bob left."];
        let merged = RuleOracle.merge(&sources).unwrap();
        assert_eq!(merged, "Alice arrived. Bob left.");
        let score = RuleOracle.preservation_score(&sources, &merged).unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn rule_merge_always_preserves_its_own_sources() {
        let cases: Vec<Vec<&str>> = vec![
            vec!["a b c."],
            vec!["a b c.", "a b c."],
            vec!["x y. z w.", "z w. q r."],
            vec!["alpha|beta|gamma", "alpha|beta|delta"],
        ];
        for sources in cases {
            let merged = RuleOracle.merge(&sources).unwrap();
            let score = RuleOracle.preservation_score(&sources, &merged).unwrap();
            assert_eq!(score, 1.0, "{sources:?}");
        }
    }

    #[test]
    fn relation_label_extraction() {
        assert_eq!(
            extract_relation_label("contradictory — the dates differ"),
            Some(Relation::Contradictory)
        );
        assert_eq!(
            extract_relation_label("Subsumed.\nThe new text adds nothing."),
            Some(Relation::Subsumed)
        );
        assert_eq!(extract_relation_label("no label here"), None);
    }

    #[test]
    fn chat_reply_parsing_extracts_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"compatible\nboth can hold"}}]}"#;
        let content = parse_chat_reply(body).unwrap();
        assert!(content.starts_with("compatible"));
        assert!(parse_chat_reply(r#"{"choices":[]}"#).is_err());
        assert!(parse_chat_reply("not json").is_err());
    }

    #[test]
    fn score_extraction_finds_unit_interval_number() {
        assert_eq!(extract_score("0.85"), Some(0.85));
        assert_eq!(extract_score("score: 0.4 (decent)"), Some(0.4));
        assert_eq!(extract_score("preservation = 1"), Some(1.0));
        assert_eq!(extract_score("nothing numeric"), None);
    }
}
