/// Lowercases, replaces URLs with `<url>` and mentions with `<user>`, splits
/// on Unicode whitespace and trims punctuation from both ends of each token.
/// A leading `#` survives so hashtags stay distinct from plain words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(normalize).collect()
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

fn normalize(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    let trimmed = lower.trim_start_matches(|c: char| !c.is_alphanumeric() && c != '#' && c != '@');
    if is_url(trimmed) {
        return Some("<url>".into());
    }
    if let Some(handle) = trimmed.strip_prefix('@') {
        return handle.chars().any(char::is_alphanumeric).then(|| "<user>".into());
    }
    let (hash, body) = match trimmed.strip_prefix('#') {
        Some(rest) => ("#", rest),
        None => ("", trimmed),
    };
    let body = body.trim_matches(|c: char| !c.is_alphanumeric());
    if body.is_empty() {
        return None;
    }
    Some(format!("{hash}{body}"))
}
