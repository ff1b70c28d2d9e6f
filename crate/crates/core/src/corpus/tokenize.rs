use super::Token;

/// Whitespace-plus-punctuation tokenizer.
///
/// Maximal runs of alphanumeric characters form one token; every other
/// non-whitespace character is a token on its own. Offsets are in chars.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let flush = |word: &mut Option<(usize, String)>, end: usize, tokens: &mut Vec<Token>| {
        if let Some((start, surface)) = word.take() {
            tokens.push(Token {
                surface,
                char_start: start,
                char_end: end,
            });
        }
    };
    let mut n = 0;
    for (i, ch) in text.chars().enumerate() {
        n = i + 1;
        if ch.is_alphanumeric() {
            match &mut word {
                Some((_, s)) => s.push(ch),
                None => word = Some((i, ch.to_string())),
            }
            continue;
        }
        flush(&mut word, i, &mut tokens);
        if !ch.is_whitespace() {
            tokens.push(Token {
                surface: ch.to_string(),
                char_start: i,
                char_end: i + 1,
            });
        }
    }
    flush(&mut word, n, &mut tokens);
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(text: &str) -> Vec<String> {
        tokenize(text).into_iter().map(|t| t.surface).collect()
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            surfaces("uita moreretur. Don't!"),
            ["uita", "moreretur", ".", "Don", "'", "t", "!"]
        );
    }

    #[test]
    fn empty_and_whitespace() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \n\t ").is_empty());
    }

    #[test]
    fn offsets_cover_surface() {
        let text = "a  bc,d";
        for t in tokenize(text) {
            let s: String = text.chars().skip(t.char_start).take(t.char_end - t.char_start).collect();
            assert_eq!(s, t.surface);
        }
    }
}
