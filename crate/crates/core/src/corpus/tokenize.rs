const SPLIT_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '(', ')', '[', ']'];

/// Lowercases, splits on whitespace and peels the punctuation characters
/// `.,;:!?"()[]` into their own tokens.
///
/// Tokens that look like paths or URLs (containing `/` or `://`) are kept
/// whole so `~/.bashrc` or `http://x.org/a.b` survive intact.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        if word.contains('/') {
            // Only peel trailing sentence punctuation off a path.
            let trimmed = word.trim_end_matches(|c| matches!(c, ',' | ';' | '!' | '?' | '"' | ')' | ']'));
            let tail = &word[trimmed.len()..];
            out.push(trimmed.to_string());
            out.extend(tail.chars().map(String::from));
            continue;
        }
        let mut cur = String::new();
        for c in word.chars() {
            if SPLIT_PUNCT.contains(&c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}
