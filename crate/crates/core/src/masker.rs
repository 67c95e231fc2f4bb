//! Answer-expression detection, masking, and sentence pruning.
//!
//! The deterministic detector is the contract of record: it finds every
//! maximal non-overlapping occurrence of the answer, its registered
//! variants, and the numeric normal forms of a numeric answer. Candidate
//! overlaps resolve longest-first, ties to the earliest start. The
//! LLM-backed path produces a masked chain with a model call and must
//! still pass deterministic verification before it is accepted.

use serde::{Deserialize, Serialize};

use crate::client::{Client, ClientError, CompletionRequest};
use crate::mock;
use crate::target::ModelTarget;
use crate::templates::{fill, TemplateSet};

/// The literal placeholder substituted for every detected answer span.
pub const MASK_TOKEN: &str = "[MASK]";

const MAX_MASK_ITERATIONS: usize = 8;

/// Measurement units recognized when extending a digit match to a
/// unit-quantified span. Deliberately restricted to units; generic nouns
/// after a number are not answer expressions by themselves.
const UNIT_WORDS: &[&str] = &[
    "%", "percent", "km", "kilometers", "kilometres", "m", "meters", "metres", "cm", "mm", "kg",
    "kilograms", "g", "grams", "mg", "l", "liters", "litres", "ml", "s", "seconds", "sec", "min",
    "minutes", "h", "hours", "hr", "hrs", "days", "day", "years", "year", "dollars", "yuan",
    "元", "米", "千米", "公里", "厘米", "毫米", "克", "千克", "公斤", "斤", "升", "毫升", "秒",
    "分钟", "小时", "天", "年", "岁", "个", "只", "条", "本", "张", "件", "块", "次", "人",
];

const UNCERTAINTY_MARKERS: &[&str] = &[
    "approximately", "about", "around", "roughly", "probably", "maybe", "大约", "大概", "左右",
    "可能", "约",
];

const CONCLUSIVE_MARKERS: &[&str] = &[
    "therefore", "thus", "hence", "the answer is", "so the answer", "所以", "因此", "故",
    "答案是", "答案为",
];

/// Which surface shape a detected span matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FormClass {
    Exact,
    Numeric,
    UnitQuantified,
    Ordinal,
    Conclusive,
    Uncertainty,
}

/// A detected answer expression, as byte offsets into the chain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub start: usize,
    pub end: usize,
    pub matched_form: String,
    pub form_class: FormClass,
}

#[derive(Debug, thiserror::Error)]
pub enum MaskerError {
    #[error(
        "masking did not reach a fixed point after {MAX_MASK_ITERATIONS} iterations; \
         the variant set is pathological (e.g. a variant containing {MASK_TOKEN:?})"
    )]
    FixedPointNotReached,
}

/// Spelled-out numeral forms, added to the variant set for datasets that
/// declare a lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumeralLexicon {
    En,
    Zh,
}

impl NumeralLexicon {
    fn spelled_forms(self, value: i64) -> Vec<String> {
        match self {
            NumeralLexicon::En => {
                const CARDINAL: [&str; 21] = [
                    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
                    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
                    "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
                ];
                const ORDINAL: [&str; 21] = [
                    "zeroth", "first", "second", "third", "fourth", "fifth", "sixth", "seventh",
                    "eighth", "ninth", "tenth", "eleventh", "twelfth", "thirteenth",
                    "fourteenth", "fifteenth", "sixteenth", "seventeenth", "eighteenth",
                    "nineteenth", "twentieth",
                ];
                match usize::try_from(value) {
                    Ok(i) if i < CARDINAL.len() => {
                        vec![CARDINAL[i].to_string(), ORDINAL[i].to_string()]
                    }
                    _ => vec![],
                }
            }
            NumeralLexicon::Zh => {
                const CARDINAL: [&str; 11] = [
                    "零", "一", "二", "三", "四", "五", "六", "七", "八", "九", "十",
                ];
                match usize::try_from(value) {
                    Ok(i) if i < CARDINAL.len() => {
                        let mut forms = vec![CARDINAL[i].to_string(), format!("第{}", CARDINAL[i])];
                        if i == 2 {
                            forms.push("两".to_string());
                        }
                        forms
                    }
                    _ => vec![],
                }
            }
        }
    }
}

/// Augments author-supplied variants with the canonical digit rendering
/// and, when a lexicon is declared, spelled-out numeral forms.
pub fn expand_variants(
    answer: &str,
    variants: &[String],
    lexicon: Option<NumeralLexicon>,
) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut push = |form: String| {
        if !form.is_empty() && !out.contains(&form) {
            out.push(form);
        }
    };
    push(answer.to_string());
    for v in variants {
        push(v.clone());
    }
    if let Some(canonical) = canonical_numeric_form(answer) {
        push(canonical.clone());
        if let (Some(lex), Ok(value)) = (lexicon, canonical.parse::<i64>()) {
            for form in lex.spelled_forms(value) {
                push(form);
            }
        }
    }
    out
}

/// Canonical digit rendering of a numeric answer ("04" -> "4",
/// "4.50" -> "4.5"); `None` when the answer is not a plain number.
fn canonical_numeric_form(answer: &str) -> Option<String> {
    let t = answer.trim();
    if !is_plain_number(t) {
        return None;
    }
    if let Ok(i) = t.parse::<i128>() {
        return Some(i.to_string());
    }
    t.parse::<f64>().ok().map(|f| format!("{f}"))
}

fn is_plain_number(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    if body.is_empty() {
        return false;
    }
    let mut seen_dot = false;
    for c in body.chars() {
        match c {
            '0'..='9' => {}
            '.' if !seen_dot => seen_dot = true,
            _ => return false,
        }
    }
    // Reject bare "." and trailing/leading dot forms like "4." or ".5"
    // so canonicalization never changes what a match looks like.
    !body.starts_with('.') && !body.ends_with('.')
}

fn classify(matched: &str) -> FormClass {
    let trimmed = matched.trim();
    if is_plain_number(trimmed) {
        return FormClass::Numeric;
    }
    if is_unit_quantified_surface(trimmed) {
        return FormClass::UnitQuantified;
    }
    if is_ordinal_surface(trimmed) {
        return FormClass::Ordinal;
    }
    let lower = trimmed.to_lowercase();
    if UNCERTAINTY_MARKERS.iter().any(|m| lower.contains(m)) {
        return FormClass::Uncertainty;
    }
    if CONCLUSIVE_MARKERS.iter().any(|m| lower.contains(m)) {
        return FormClass::Conclusive;
    }
    FormClass::Exact
}

/// A number followed by a known measurement unit ("4 km", "3.5kg").
fn is_unit_quantified_surface(s: &str) -> bool {
    let digits_end = s
        .char_indices()
        .take_while(|(_, c)| c.is_ascii_digit() || *c == '.' || *c == '+' || *c == '-')
        .map(|(i, c)| i + c.len_utf8())
        .last()
        .unwrap_or(0);
    if digits_end == 0 || !is_plain_number(&s[..digits_end]) {
        return false;
    }
    let unit = s[digits_end..].trim_start();
    !unit.is_empty() && UNIT_WORDS.contains(&unit)
}

fn is_ordinal_surface(s: &str) -> bool {
    if let Some(stripped) = s.strip_prefix('第') {
        return !stripped.is_empty();
    }
    let lower = s.to_lowercase();
    for suffix in ["st", "nd", "rd", "th"] {
        if let Some(digits) = lower.strip_suffix(suffix) {
            if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
                return true;
            }
        }
    }
    false
}

/// All occurrences of `pattern` in `text`, including self-overlapping
/// ones (`str::match_indices` skips those, which loses candidates when a
/// longer pattern knocks out an earlier occurrence).
fn find_all_occurrences(text: &str, pattern: &str) -> Vec<usize> {
    let mut starts = Vec::new();
    if pattern.is_empty() {
        return starts;
    }
    let mut from = 0;
    while let Some(pos) = text[from..].find(pattern) {
        let start = from + pos;
        starts.push(start);
        from = start + 1;
        while from < text.len() && !text.is_char_boundary(from) {
            from += 1;
        }
    }
    starts
}

#[derive(Debug, Clone)]
struct Candidate {
    start: usize,
    end: usize,
    form: String,
    class: FormClass,
    priority: usize,
}

/// Finds every maximal non-overlapping answer expression in `text`.
///
/// Matched patterns are (a) the answer and each registered variant as
/// exact substrings and (b) for numeric answers, the canonical digit
/// string, plus a unit-quantified extension when a digit match is
/// immediately followed by a known measurement unit. Overlaps resolve to
/// the longest match, ties to the earliest start; the result is sorted by
/// start.
pub fn detect_answer_spans(text: &str, answer: &str, variants: &[String]) -> Vec<AnswerSpan> {
    let mut patterns: Vec<(String, FormClass)> = Vec::new();
    let mut add_pattern = |p: &str, class: Option<FormClass>| {
        if p.is_empty() || patterns.iter().any(|(q, _)| q == p) {
            return;
        }
        patterns.push((p.to_string(), class.unwrap_or_else(|| classify(p))));
    };
    add_pattern(answer, None);
    for v in variants {
        add_pattern(v, None);
    }
    let canonical = canonical_numeric_form(answer);
    if let Some(c) = &canonical {
        add_pattern(c, Some(FormClass::Numeric));
    }

    let mut candidates: Vec<Candidate> = Vec::new();
    for (priority, (pattern, class)) in patterns.iter().enumerate() {
        for start in find_all_occurrences(text, pattern) {
            let end = start + pattern.len();
            candidates.push(Candidate {
                start,
                end,
                form: pattern.clone(),
                class: *class,
                priority,
            });
            // Unit-quantified extension for digit-shaped matches.
            if *class == FormClass::Numeric && is_plain_number(pattern) {
                if let Some((unit_end, unit)) = match_unit_after(text, end) {
                    candidates.push(Candidate {
                        start,
                        end: unit_end,
                        form: text[start..unit_end].to_string(),
                        class: FormClass::UnitQuantified,
                        priority,
                    });
                    let _ = unit;
                }
            }
        }
    }

    // Longest first, then earliest, then registration order.
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.priority.cmp(&b.priority))
    });

    let mut accepted: Vec<Candidate> = Vec::new();
    for c in candidates {
        if accepted
            .iter()
            .all(|a| c.end <= a.start || c.start >= a.end)
        {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|c| c.start);
    accepted
        .into_iter()
        .map(|c| AnswerSpan {
            start: c.start,
            end: c.end,
            matched_form: c.form,
            form_class: c.class,
        })
        .collect()
}

/// A measurement unit immediately after `pos` (optionally separated by a
/// single ASCII space). Returns the end offset of the unit and the unit
/// itself. ASCII units must be followed by a non-alphanumeric boundary;
/// CJK units attach directly.
fn match_unit_after(text: &str, pos: usize) -> Option<(usize, &str)> {
    let rest = &text[pos.min(text.len())..];
    let (offset, after_sep) = if let Some(stripped) = rest.strip_prefix(' ') {
        (1, stripped)
    } else {
        (0, rest)
    };
    let mut best: Option<(usize, &str)> = None;
    for unit in UNIT_WORDS {
        if !after_sep.starts_with(unit) {
            continue;
        }
        if unit.is_ascii() {
            let boundary = after_sep[unit.len()..]
                .chars()
                .next()
                .is_none_or(|c| !c.is_alphanumeric());
            if !boundary {
                continue;
            }
        }
        if best.is_none_or(|(len, _)| unit.len() > len) {
            best = Some((unit.len(), unit));
        }
    }
    best.map(|(len, unit)| (pos + offset + len, unit))
}

/// Replaces every detected span with `[MASK]`, re-running detection until
/// nothing is found (bounded). Returns the masked text and the number of
/// replacements.
pub fn mask(text: &str, answer: &str, variants: &[String]) -> Result<(String, usize), MaskerError> {
    let mut current = text.to_string();
    let mut total = 0usize;
    for _ in 0..MAX_MASK_ITERATIONS {
        let spans = detect_answer_spans(&current, answer, variants);
        if spans.is_empty() {
            return Ok((current, total));
        }
        total += spans.len();
        let mut out = String::with_capacity(current.len());
        let mut cursor = 0;
        for span in &spans {
            out.push_str(&current[cursor..span.start]);
            out.push_str(MASK_TOKEN);
            cursor = span.end;
        }
        out.push_str(&current[cursor..]);
        current = out;
    }
    if detect_answer_spans(&current, answer, variants).is_empty() {
        Ok((current, total))
    } else {
        Err(MaskerError::FixedPointNotReached)
    }
}

/// Sentence boundaries used by the pruner: Latin and CJK terminators plus
/// newline. A sentence keeps its trailing terminator run; the separator
/// bytes between sentences stay with the following sentence.
const SENTENCE_TERMINATORS: [char; 9] = ['.', '!', '?', '。', '！', '？', '；', ';', '\n'];

/// Partition of `text` into sentence segments (byte ranges); the
/// concatenation of all segments is the original text.
pub fn segment_sentences(text: &str) -> Vec<(usize, usize)> {
    let mut segments = Vec::new();
    let mut start = 0;
    let mut in_terminator_run = false;
    for (idx, ch) in text.char_indices() {
        let is_term = SENTENCE_TERMINATORS.contains(&ch);
        if in_terminator_run && !is_term {
            segments.push((start, idx));
            start = idx;
        }
        in_terminator_run = is_term;
    }
    if start < text.len() {
        segments.push((start, text.len()));
    }
    segments
}

/// Drops every sentence that contains (or overlaps) a detected answer
/// span; survivors are concatenated in order with their original bytes.
pub fn remove_answer_sentences(text: &str, answer: &str, variants: &[String]) -> String {
    let spans = detect_answer_spans(text, answer, variants);
    if spans.is_empty() {
        return text.to_string();
    }
    let mut out = String::new();
    for (seg_start, seg_end) in segment_sentences(text) {
        let hit = spans
            .iter()
            .any(|s| s.start < seg_end && s.end > seg_start);
        if !hit {
            out.push_str(&text[seg_start..seg_end]);
        }
    }
    out
}

/// Result of the LLM-backed masking path.
#[derive(Debug, Clone)]
pub struct LlmMaskOutcome {
    pub text: String,
    /// True when the model output failed deterministic verification and
    /// the deterministic masker's output was used instead.
    pub fell_back: bool,
}

/// Masks a chain with a model call per the masking prompt asset, then
/// verifies the result deterministically. A result still carrying any
/// registered answer form is discarded in favor of deterministic
/// masking; transport errors propagate for retry upstream.
pub async fn llm_mask(
    text: &str,
    answer: &str,
    variants: &[String],
    client: &Client,
    masker_target: &ModelTarget,
    templates: &TemplateSet,
) -> Result<LlmMaskOutcome, ClientError> {
    let mut prompt = fill(
        &templates.mask,
        &[("answer", answer), ("reasoning", text)],
    );
    if masker_target.mock {
        prompt = mock::append_judge_meta(&prompt, mock::JudgeMetaKind::Mask, answer, text);
    }
    let request = CompletionRequest::new(masker_target.clone(), prompt);
    let response = client.complete(&request).await?;
    if detect_answer_spans(&response.content, answer, variants).is_empty() {
        return Ok(LlmMaskOutcome {
            text: response.content,
            fell_back: false,
        });
    }
    let (deterministic, _) =
        mask(text, answer, variants).map_err(|e| ClientError::InvalidRequest {
            detail: format!("deterministic fallback failed: {e}"),
        })?;
    Ok(LlmMaskOutcome {
        text: deterministic,
        fell_back: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    /// Independent oracle: brute-force substring scan over every pattern,
    /// resolving overlaps longest-first then earliest-start.
    fn oracle_spans(text: &str, patterns: &[&str]) -> Vec<(usize, usize)> {
        let mut candidates = Vec::new();
        for p in patterns {
            if p.is_empty() {
                continue;
            }
            for start in 0..=text.len().saturating_sub(p.len()) {
                if text.is_char_boundary(start) && text[start..].starts_with(p) {
                    candidates.push((start, start + p.len()));
                }
            }
        }
        candidates.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
        let mut accepted: Vec<(usize, usize)> = Vec::new();
        for c in candidates {
            if accepted.iter().all(|a| c.1 <= a.0 || c.0 >= a.1) {
                accepted.push(c);
            }
        }
        accepted.sort();
        accepted
    }

    #[test]
    fn direct_numeric_substring() {
        let spans = detect_answer_spans("so the square still has 4 corners", "4", &vs(&["4", "four"]));
        assert_eq!(spans.len(), 1);
        assert_eq!(&"so the square still has 4 corners"[spans[0].start..spans[0].end], "4");
        assert_eq!(spans[0].form_class, FormClass::Numeric);
    }

    #[test]
    fn detects_every_variant_occurrence() {
        let text = "the answer is four corners, i.e. 4";
        let spans = detect_answer_spans(text, "4", &vs(&["4", "four"]));
        let expected = oracle_spans(text, &["4", "four"]);
        assert_eq!(
            spans.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>(),
            expected
        );
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].matched_form, "four");
        assert_eq!(spans[1].matched_form, "4");
    }

    #[test]
    fn no_occurrence_yields_empty() {
        assert!(detect_answer_spans("nothing to see", "4", &vs(&["4"])).is_empty());
    }

    #[test]
    fn overlaps_resolve_longest_then_earliest() {
        let text = "caaa";
        let spans = detect_answer_spans(text, "aa", &vs(&["aa", "ca"]));
        let expected = oracle_spans(text, &["aa", "ca"]);
        assert_eq!(
            spans.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>(),
            expected
        );
        // "ca" wins at 0 (tie on length, earliest start), then "aa" at 2.
        assert_eq!(expected, vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn unit_quantified_extension_covers_the_unit() {
        let text = "she walked 4 km home";
        let spans = detect_answer_spans(text, "4", &vs(&["4"]));
        assert_eq!(spans.len(), 1);
        assert_eq!(&text[spans[0].start..spans[0].end], "4 km");
        assert_eq!(spans[0].form_class, FormClass::UnitQuantified);
    }

    #[test]
    fn generic_nouns_are_not_units() {
        let (masked, n) = mask("has 4 corners", "4", &vs(&["4"])).unwrap();
        assert_eq!(masked, "has [MASK] corners");
        assert_eq!(n, 1);
    }

    #[test]
    fn ascii_unit_requires_boundary() {
        // "m" must not match inside "miles".
        let spans = detect_answer_spans("4 miles", "4", &vs(&["4"]));
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].end - spans[0].start, 1);
    }

    #[test]
    fn canonical_digit_form_is_detected() {
        let spans = detect_answer_spans("value is 4", "04", &vs(&["04"]));
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].matched_form, "4");
    }

    #[test]
    fn mask_replaces_all_variants() {
        let (masked, n) = mask("answer is four, that is 4", "4", &vs(&["4", "four"])).unwrap();
        assert_eq!(masked, "answer is [MASK], that is [MASK]");
        assert_eq!(n, 2);
    }

    #[test]
    fn mask_is_identity_when_absent() {
        let (masked, n) = mask("no answer here", "4", &vs(&["4"])).unwrap();
        assert_eq!(masked, "no answer here");
        assert_eq!(n, 0);
    }

    #[test]
    fn pathological_variant_fails_fixed_point() {
        let err = mask("x [MASK] y", "4", &vs(&["[MASK]"])).unwrap_err();
        assert!(matches!(err, MaskerError::FixedPointNotReached));
    }

    #[test]
    fn prune_drops_answer_bearing_sentences() {
        let text = "A square has 4 sides. Removing one leaves 3. So 4 corners remain.";
        let pruned = remove_answer_sentences(text, "4 corners", &vs(&["4 corners"]));
        assert_eq!(pruned, "A square has 4 sides. Removing one leaves 3.");
    }

    #[test]
    fn prune_is_identity_without_spans() {
        let text = "Nothing here. Or here!";
        assert_eq!(remove_answer_sentences(text, "42", &vs(&["42"])), text);
    }

    #[test]
    fn pruning_single_answer_sentence_yields_empty() {
        assert_eq!(remove_answer_sentences("The answer is 4", "4", &vs(&["4"])), "");
    }

    #[test]
    fn segments_partition_the_text() {
        let text = "One. Two! Three?\nFour；五。六";
        let segs = segment_sentences(text);
        let rebuilt: String = segs.iter().map(|&(s, e)| &text[s..e]).collect();
        assert_eq!(rebuilt, text);
        assert_eq!(segs.len(), 6);
    }

    #[test]
    fn cjk_terminators_and_spans() {
        let text = "正方形有四个角。去掉一条边后还是四个角。";
        let pruned = remove_answer_sentences(text, "四个角", &vs(&["四个角"]));
        assert_eq!(pruned, "");
        let (masked, n) = mask(text, "四个角", &vs(&["四个角"])).unwrap();
        assert_eq!(n, 2);
        assert_eq!(masked, "正方形有[MASK]。去掉一条边后还是[MASK]。");
    }

    #[test]
    fn expand_variants_adds_canonical_and_lexicon_forms() {
        let forms = expand_variants("4", &vs(&["4"]), Some(NumeralLexicon::En));
        assert!(forms.contains(&"four".to_string()));
        assert!(forms.contains(&"fourth".to_string()));
        let zh = expand_variants("2", &vs(&["2"]), Some(NumeralLexicon::Zh));
        assert!(zh.contains(&"二".to_string()));
        assert!(zh.contains(&"两".to_string()));
        let none = expand_variants("blue", &vs(&["blue"]), Some(NumeralLexicon::En));
        assert_eq!(none, vs(&["blue"]));
    }

    #[test]
    fn classify_covers_the_form_spectrum() {
        assert_eq!(classify("42"), FormClass::Numeric);
        assert_eq!(classify("3.5"), FormClass::Numeric);
        assert_eq!(classify("4 km"), FormClass::UnitQuantified);
        assert_eq!(classify("3.5kg"), FormClass::UnitQuantified);
        assert_eq!(classify("4th"), FormClass::Ordinal);
        assert_eq!(classify("第四"), FormClass::Ordinal);
        assert_eq!(classify("approximately 4"), FormClass::Uncertainty);
        assert_eq!(classify("therefore 4"), FormClass::Conclusive);
        assert_eq!(classify("答案是4"), FormClass::Conclusive);
        assert_eq!(classify("four corners"), FormClass::Exact);
    }
}
