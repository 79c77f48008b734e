//! Two-stage LLM-based sensitive-span annotation.
//!
//! Stage one (forward) prompts a chat model with few-shot examples to list
//! the sensitive spans of a text; every candidate is then located in the
//! original text by exact token-subsequence matching, and candidates that
//! match nowhere are dropped. Stage two (backward) shows each surviving span
//! to the model alone — without the surrounding sequence — and asks for a
//! 0/1/2 sensitivity rating; rating-0 spans are filtered out. What remains
//! becomes the instance's final span set.

pub mod client;

use serde::{Deserialize, Serialize};

use crate::seq::{Corpus, Span, SpanSet, TokenSequence};
use crate::{Error, Result};

use client::{complete_with_retries, ChatClient, ChatRequest};

/// Default rating prompt for backward verification; `{span}` is the slot for
/// the candidate text.
pub const DEFAULT_BACKWARD_TEMPLATE: &str = "Given the text span shown below:\n{span}\nPlease rate it on a scale from {0, 1, 2}. Assign 0 for non-sensitive, 2 for sensitive, and 1 for somewhat sensitive. Sensitivity is defined here as information that could potentially help identify details about a specific organization, event, person, or other entities. Please first analyze the text content and then output a new single line containing only the integer rating.";

/// Default extraction prompt for forward annotation; slots: `{examples}`,
/// `{text}`.
pub const DEFAULT_FORWARD_TEMPLATE: &str = "You annotate sensitive spans in text. A sensitive span is a contiguous piece of the text that could help identify a specific person, organization, event, or other entity, such as a personal name, email address, phone number, account id, or street address. Copy each sensitive span exactly as it appears in the text, one per line, wrapped in double quotes. Output NONE if the text contains no sensitive span.\n\n{examples}Text: {text}\nSensitive spans:\n";

pub const DEFAULT_MODEL_NAME: &str = "gpt-3.5-turbo-0613";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewshotExample {
    pub text: String,
    pub spans: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationPromptConfig {
    pub forward_template: String,
    pub backward_template: String,
    pub fewshot: Vec<FewshotExample>,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: usize,
}

impl Default for AnnotationPromptConfig {
    fn default() -> Self {
        AnnotationPromptConfig {
            forward_template: DEFAULT_FORWARD_TEMPLATE.to_owned(),
            backward_template: DEFAULT_BACKWARD_TEMPLATE.to_owned(),
            fewshot: vec![
                FewshotExample {
                    text: "call rosa marchetti at 555-0173 about the delivery".to_owned(),
                    spans: vec!["rosa marchetti".to_owned(), "555-0173".to_owned()],
                },
                FewshotExample {
                    text: "the meeting moved from tuesday to thursday afternoon".to_owned(),
                    spans: vec![],
                },
            ],
            model_name: DEFAULT_MODEL_NAME.to_owned(),
            temperature: 0.0,
            max_retries: 3,
        }
    }
}

impl AnnotationPromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backward_template.matches("{span}").count() != 1 {
            return Err(Error::input(
                "backward template must contain exactly one {span} slot",
            ));
        }
        if !self.backward_template.contains("{0, 1, 2}") {
            return Err(Error::input(
                "backward template must state the {0, 1, 2} rating scale",
            ));
        }
        if !self.forward_template.contains("{text}") {
            return Err(Error::input("forward template must contain a {text} slot"));
        }
        Ok(())
    }

    pub fn render_forward(&self, text: &str) -> String {
        let mut examples = String::new();
        for ex in &self.fewshot {
            examples.push_str("Text: ");
            examples.push_str(&ex.text);
            examples.push_str("\nSensitive spans:\n");
            if ex.spans.is_empty() {
                examples.push_str("NONE\n");
            } else {
                for span in &ex.spans {
                    examples.push('"');
                    examples.push_str(span);
                    examples.push_str("\"\n");
                }
            }
            examples.push('\n');
        }
        self.forward_template
            .replace("{examples}", &examples)
            .replace("{text}", text)
    }

    pub fn render_backward(&self, span_surface: &str) -> String {
        self.backward_template.replace("{span}", span_surface)
    }

    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model: self.model_name.clone(),
            prompt,
            temperature: self.temperature,
        }
    }
}

/// Where an annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Online,
    Offline,
    Human,
    External,
}

/// One forward candidate: its surface text, every token range where it
/// matches the instance exactly (empty when unresolved), and its backward
/// rating (absent for unresolved candidates, which are never rated).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSpan {
    pub surface: String,
    pub occurrences: Vec<Span>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
}

impl CandidateSpan {
    pub fn resolved(&self) -> bool {
        !self.occurrences.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub candidates: Vec<CandidateSpan>,
    pub final_spans: SpanSet,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub diagnostics: Vec<String>,
    /// Client failure that aborted this instance's annotation, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnnotationRecord {
    fn failed(instance_id: &str, error: String) -> Self {
        AnnotationRecord {
            instance_id: instance_id.to_owned(),
            candidates: Vec::new(),
            final_spans: SpanSet::empty(),
            provenance: Provenance::Offline,
            diagnostics: Vec::new(),
            error: Some(error),
        }
    }

    /// Per-span ratings aligned with `final_spans`: each merged span gets the
    /// highest rating among the candidates that cover it.
    pub fn final_ratings(&self) -> Vec<u8> {
        self.final_spans
            .spans()
            .iter()
            .map(|span| {
                self.candidates
                    .iter()
                    .filter(|c| {
                        c.occurrences
                            .iter()
                            .any(|o| o.start() < span.end() && span.start() < o.end())
                    })
                    .filter_map(|c| c.rating)
                    .max()
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Parses a forward response into candidate surfaces. Tolerates bullets and
/// numbering; takes the quoted segment of a line when present, the whole
/// trimmed line otherwise. Duplicates are preserved at this stage.
pub fn parse_forward_response(response: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in response.lines() {
        let mut line = line.trim();
        for bullet in ["- ", "* ", "+ "] {
            if let Some(rest) = line.strip_prefix(bullet) {
                line = rest.trim_start();
            }
        }
        // numbered lists: "3. foo" / "3) foo"
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        if digits > 0 {
            let rest = &line[digits..];
            if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
                if rest.starts_with(' ') {
                    line = rest.trim_start();
                }
            }
        }
        if let (Some(first), Some(last)) = (line.find('"'), line.rfind('"')) {
            if last > first {
                line = &line[first + 1..last];
            }
        }
        let line = line.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("none") {
            continue;
        }
        out.push(line.to_owned());
    }
    out
}

/// Stage one: prompts for the sensitive spans of an instance and parses the
/// response into candidate surfaces (possibly empty).
pub fn forward_annotate<C: ChatClient + ?Sized>(
    text: &TokenSequence,
    cfg: &AnnotationPromptConfig,
    chat: &C,
) -> Result<Vec<String>> {
    cfg.validate()?;
    let surface = text
        .surface_text(0, text.len())
        .ok_or_else(|| Error::input(format!("instance '{}' has no surfaces", text.id())))?;
    let prompt = cfg.render_forward(&surface);
    let response = complete_with_retries(chat, &cfg.request(prompt), cfg.max_retries)?;
    let candidates = parse_forward_response(&response);
    if candidates.is_empty() && !response.trim().is_empty() {
        log::debug!(
            "instance '{}': no candidates parsed from non-empty response",
            text.id()
        );
    }
    Ok(candidates)
}

/// Locates each candidate in the text by exact token-subsequence match. All
/// non-overlapping occurrences are resolved; duplicates are collapsed onto
/// the first mention; candidates that match nowhere come back unresolved.
pub fn resolve_spans(candidates: &[String], text: &TokenSequence) -> Result<Vec<CandidateSpan>> {
    let surfaces = text
        .surfaces()
        .ok_or_else(|| Error::input(format!("instance '{}' has no surfaces", text.id())))?;
    let mut out: Vec<CandidateSpan> = Vec::new();
    for candidate in candidates {
        if out.iter().any(|c| &c.surface == candidate) {
            continue; // dedupe repeated mentions
        }
        let occurrences = locate(surfaces, candidate);
        out.push(CandidateSpan { surface: candidate.clone(), occurrences, rating: None });
    }
    Ok(out)
}

/// All non-overlapping token ranges whose concatenated surfaces equal
/// `needle`, scanning left to right.
fn locate(surfaces: &[String], needle: &str) -> Vec<Span> {
    let needle = needle.trim();
    if needle.is_empty() {
        return Vec::new();
    }
    let mut spans = Vec::new();
    let mut start = 0;
    while start < surfaces.len() {
        let mut matched = None;
        let mut acc = String::new();
        for (offset, surface) in surfaces[start..].iter().enumerate() {
            acc.push_str(surface);
            if acc.len() >= needle.len() {
                if acc == needle {
                    matched = Some(offset + 1);
                }
                break;
            }
            if !needle.starts_with(acc.as_str()) {
                break;
            }
        }
        match matched {
            Some(len) => {
                spans.push(Span::new(start, len).expect("match length >= 1"));
                start += len;
            }
            None => start += 1,
        }
    }
    spans
}

/// Stage two: rates one span surface on the 0/1/2 scale. Returns the rating
/// and an optional diagnostic when the response needed repair (no integer
/// found defaults to 0; out-of-range integers clamp).
pub fn backward_verify<C: ChatClient + ?Sized>(
    span_surface: &str,
    cfg: &AnnotationPromptConfig,
    chat: &C,
) -> Result<(u8, Option<String>)> {
    cfg.validate()?;
    let prompt = cfg.render_backward(span_surface);
    let response = complete_with_retries(chat, &cfg.request(prompt), cfg.max_retries)?;
    Ok(parse_rating(&response, span_surface))
}

fn parse_rating(response: &str, span_surface: &str) -> (u8, Option<String>) {
    for line in response.lines().rev() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Ok(value) = line.parse::<i64>() {
            return clamp_rating(value, span_surface);
        }
        // tolerate a labeled final line such as "Rating: 2"
        let ints: Vec<i64> = integer_tokens(line);
        if ints.len() == 1 {
            return clamp_rating(ints[0], span_surface);
        }
    }
    (
        0,
        Some(format!(
            "no rating found for '{span_surface}'; defaulting to 0 (dropped)"
        )),
    )
}

fn integer_tokens(line: &str) -> Vec<i64> {
    line.split(|c: char| !c.is_ascii_digit() && c != '-')
        .filter(|s| !s.is_empty() && s.chars().any(|c| c.is_ascii_digit()))
        .filter_map(|s| s.parse::<i64>().ok())
        .collect()
}

fn clamp_rating(value: i64, span_surface: &str) -> (u8, Option<String>) {
    if (0..=2).contains(&value) {
        (value as u8, None)
    } else {
        let clamped = value.clamp(0, 2) as u8;
        (
            clamped,
            Some(format!(
                "rating {value} for '{span_surface}' outside {{0, 1, 2}}; clamped to {clamped}"
            )),
        )
    }
}

/// Runs forward annotation, exact-match resolution, and backward
/// verification for one instance. Final spans are the occurrences of every
/// resolved candidate rated 1 or 2.
pub fn annotate_instance<C: ChatClient + ?Sized>(
    text: &TokenSequence,
    cfg: &AnnotationPromptConfig,
    chat: &C,
) -> Result<AnnotationRecord> {
    let raw = forward_annotate(text, cfg, chat)?;
    let mut candidates = resolve_spans(&raw, text)?;
    let mut diagnostics = Vec::new();
    let mut kept = Vec::new();
    for candidate in &mut candidates {
        if !candidate.resolved() {
            diagnostics.push(format!(
                "candidate '{}' not found verbatim in '{}'",
                candidate.surface,
                text.id()
            ));
            continue;
        }
        let (rating, diagnostic) = backward_verify(&candidate.surface, cfg, chat)?;
        candidate.rating = Some(rating);
        diagnostics.extend(diagnostic);
        if rating >= 1 {
            kept.extend(candidate.occurrences.iter().copied());
        }
    }
    Ok(AnnotationRecord {
        instance_id: text.id().to_owned(),
        candidates,
        final_spans: SpanSet::new(kept),
        provenance: Provenance::Offline,
        diagnostics,
        error: None,
    })
}

/// Annotates every instance of a corpus. A client failure on one instance is
/// recorded on its record and the pipeline moves on.
pub fn annotate_corpus<C: ChatClient + ?Sized>(
    corpus: &Corpus,
    cfg: &AnnotationPromptConfig,
    chat: &C,
) -> Result<Vec<AnnotationRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(corpus.len());
    for inst in corpus.instances() {
        match annotate_instance(&inst.seq, cfg, chat) {
            Ok(record) => records.push(record),
            Err(err @ (Error::Client(_) | Error::FixtureMiss { .. })) => {
                log::warn!("annotation of '{}' failed: {err}", inst.seq.id());
                records.push(AnnotationRecord::failed(inst.seq.id(), err.to_string()));
            }
            Err(other) => return Err(other),
        }
    }
    Ok(records)
}
