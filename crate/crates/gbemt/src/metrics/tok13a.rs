//! 13a-style tokenization for BLEU and TER.
//!
//! Mirrors the mteval-v13a recipe: unescape a handful of XML entities,
//! drop `<skipped>`, turn newlines into spaces, then split punctuation
//! from words. Periods and commas stay attached only between digits, a
//! dash splits after a digit, and a fixed ASCII punctuation class always
//! splits. Whitespace (including Unicode spaces) collapses at the end.
//!
//! Golden fixtures in the tests pin the behavior token by token.

/// Tokenize one segment.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let norm = line
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">");

    let chars: Vec<char> = norm.chars().collect();
    let mut spaced = String::with_capacity(norm.len() * 2);
    for (i, &c) in chars.iter().enumerate() {
        let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
        let next_digit = i + 1 < chars.len() && chars[i + 1].is_ascii_digit();
        let split = match c {
            '.' | ',' => !(prev_digit && next_digit),
            '-' => prev_digit,
            _ => always_splits(c),
        };
        if split {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

/// The always-split punctuation class of the 13a tokenizer:
/// `{-~`, `[-\``, `space-&`, `(-+`, `:-@`, and `/`.
fn always_splits(c: char) -> bool {
    matches!(c,
        '\u{7B}'..='\u{7E}'
        | '\u{5B}'..='\u{60}'
        | '\u{20}'..='\u{26}'
        | '\u{28}'..='\u{2B}'
        | '\u{3A}'..='\u{40}'
        | '/')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize_13a(s)
    }

    #[test]
    fn golden_fixtures() {
        assert_eq!(toks("Hello, world!"), ["Hello", ",", "world", "!"]);
        assert_eq!(toks("it's fine"), ["it's", "fine"]); // apostrophe stays
        assert_eq!(toks("3.14 stays"), ["3.14", "stays"]);
        assert_eq!(toks("end."), ["end", "."]);
        assert_eq!(toks("1,000 and 1, 2"), ["1,000", "and", "1", ",", "2"]);
        assert_eq!(toks("2,000-ton."), ["2,000", "-", "ton", "."]);
        assert_eq!(toks("pre-war"), ["pre-war"]); // dash after letters stays
        assert_eq!(toks("(a)[b]{c}"), ["(", "a", ")", "[", "b", "]", "{", "c", "}"]);
        assert_eq!(toks("a/b:c@d"), ["a", "/", "b", ":", "c", "@", "d"]);
        assert_eq!(toks("x..y"), ["x", ".", ".", "y"]);
        assert_eq!(toks("3.a a.3"), ["3", ".", "a", "a", ".", "3"]);
        assert_eq!(toks("&quot;q&amp;a&gt;&lt;"), ["\"", "q", "&", "a", ">", "<"]);
        assert_eq!(toks("  spaced\u{00a0}out  "), ["spaced", "out"]);
        assert_eq!(toks(""), Vec::<String>::new());
    }

    #[test]
    fn class_membership_boundaries() {
        for c in ['!', '"', '#', '$', '%', '&', '(', ')', '*', '+', ';', '=', '?', '_', '~', '|'] {
            assert!(always_splits(c), "{c} should split");
        }
        for c in ['\'', 'a', 'Z', '0', '9', '.', ',', '-'] {
            assert!(!always_splits(c), "{c} should not split unconditionally");
        }
    }
}
