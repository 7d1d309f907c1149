//! Word-level text normalisation shared by the tokenizer and the metrics.

/// Lowercased word tokens: runs of ASCII alphanumerics, and every other
/// non-whitespace character as its own token.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn is_punct(tok: &str) -> bool {
    tok.chars().all(|c| !c.is_alphanumeric())
}

/// Joins tokens, attaching punctuation to the preceding word.
pub fn join_words<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        if !out.is_empty() && !is_punct(tok) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Canonical form of a text: `join_words(words(text))`.
pub fn normalize(text: &str) -> String {
    join_words(&words(text))
}
