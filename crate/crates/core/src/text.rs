//! Tokenization shared by search, intent scoring and focus resolution.

/// Function words ignored when matching free text against the graph.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "could", "did", "do", "does", "for", "from", "had", "has", "have", "i", "if", "in", "into",
    "is", "it", "its", "me", "my", "of", "on", "or", "our", "please", "so", "some", "that", "the",
    "their", "them", "then", "there", "these", "they", "this", "those", "to", "us", "was", "we",
    "were", "will", "with", "would", "you", "your",
];

/// Lowercased alphanumeric runs. Everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokens with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect()
}

/// True when `token` occurs in `text` as a whole whitespace-separated word,
/// ignoring ASCII case and trailing punctuation (`@bot,` matches `@bot`).
pub fn contains_word_token(text: &str, token: &str) -> bool {
    text.split_whitespace().any(|w| {
        let w = w.trim_end_matches(|c: char| c.is_ascii_punctuation() && c != '@');
        w.eq_ignore_ascii_case(token)
    })
}

/// Removes every whole-word occurrence of `token`.
pub fn strip_word_token(text: &str, token: &str) -> String {
    text.split_whitespace()
        .filter(|w| {
            let w = w.trim_end_matches(|c: char| c.is_ascii_punctuation() && c != '@');
            !w.eq_ignore_ascii_case(token)
        })
        .collect::<Vec<_>>()
        .join(" ")
}
