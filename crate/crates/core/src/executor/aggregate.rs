use super::Aggregation;

const AFFIRMATIVE: &[&str] = &["yes", "yeah", "yep", "true", "correct", "affirmative", "indeed"];
const NEGATIVE: &[&str] = &["no", "nope", "false", "incorrect", "negative", "not", "never"];

fn polarity(word: &str) -> Option<&'static str> {
    if AFFIRMATIVE.contains(&word) {
        Some("yes")
    } else if NEGATIVE.contains(&word) {
        Some("no")
    } else {
        None
    }
}

/// Maps an answer onto "yes"/"no": the first word decides if it is a polarity
/// word; otherwise the answer must contain polarity words of only one kind.
pub fn normalize_boolean(answer: &str) -> Option<&'static str> {
    let words: Vec<String> = answer
        .split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect()
        })
        .filter(|w: &String| !w.is_empty())
        .collect();
    if let Some(p) = words.first().and_then(|w| polarity(w)) {
        return Some(p);
    }
    let mut found = words.iter().filter_map(|w| polarity(w));
    let first = found.next()?;
    found.all(|p| p == first).then_some(first)
}

/// Final answer from the sink answer, plus a warning when normalization fails.
pub fn aggregate(sink_answer: &str, aggregation: Aggregation) -> (String, Option<String>) {
    match aggregation {
        Aggregation::SinkAnswer => (sink_answer.to_string(), None),
        Aggregation::BooleanNormalize => match normalize_boolean(sink_answer) {
            Some(b) => (b.to_string(), None),
            None => (
                sink_answer.to_string(),
                Some(format!("could not normalize {sink_answer:?} to yes/no")),
            ),
        },
    }
}
