use std::ops::Range;

/// Token that replaces every code block in stripped text.
pub const CODE_PLACEHOLDER: &str = "<code>";

const INLINE_TAGS: &[&str] = &[
    "a", "abbr", "b", "em", "i", "kbd", "s", "span", "strike", "strong", "sub", "sup", "u",
];

/// Byte ranges of LaTeX math spans, delimiters included.
///
/// Recognises `$$..$$`, `$..$`, `\(..\)` and `\[..\]`. An unmatched opener is
/// treated as literal text.
pub fn math_spans(text: &str) -> Vec<Range<usize>> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if i + 1 < bytes.len() => {
                let close: &[u8] = match bytes[i + 1] {
                    b'(' => b"\\)",
                    b'[' => b"\\]",
                    _ => {
                        // escaped character such as \$
                        i += 2;
                        continue;
                    }
                };
                match find_unescaped(bytes, i + 2, close) {
                    Some(end) => {
                        spans.push(i..end + 2);
                        i = end + 2;
                    }
                    None => i += 2,
                }
            }
            b'$' => {
                let delim: &[u8] = if bytes.get(i + 1) == Some(&b'$') { b"$$" } else { b"$" };
                match find_unescaped(bytes, i + delim.len(), delim) {
                    Some(end) => {
                        spans.push(i..end + delim.len());
                        i = end + delim.len();
                    }
                    None => i += delim.len(),
                }
            }
            _ => i += 1,
        }
    }
    spans
}

fn find_unescaped(bytes: &[u8], from: usize, pat: &[u8]) -> Option<usize> {
    let mut j = from;
    while j + pat.len() <= bytes.len() {
        if pat[0] != b'\\' && bytes[j] == b'\\' {
            j += 2;
            continue;
        }
        if &bytes[j..j + pat.len()] == pat {
            return Some(j);
        }
        j += 1;
    }
    None
}

/// Converts an HTML post body to plain text.
///
/// Code blocks (`<pre>` and `<code>` elements) collapse to
/// [`CODE_PLACEHOLDER`]; math spans are kept verbatim; whitespace outside math
/// is collapsed to single spaces.
pub fn strip_markup(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let lower = html.to_ascii_lowercase();
    let bytes = html.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' || !starts_tag(bytes, i) {
            let next = html[i..].find('<').map_or(html.len(), |k| i + k.max(1));
            out.push_str(&html[i..next]);
            i = next;
            continue;
        }
        if html[i..].starts_with("<!--") {
            i = lower[i..].find("-->").map_or(html.len(), |k| i + k + 3);
            out.push(' ');
            continue;
        }
        let Some(close) = html[i..].find('>').map(|k| i + k) else {
            out.push_str(&html[i..]);
            break;
        };
        let name: String = lower[i + 1..close]
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect();
        let opening = bytes[i + 1] != b'/';
        if opening && (name == "pre" || name == "code") {
            let end_tag = format!("</{name}>");
            let end = lower[close..]
                .find(&end_tag)
                .map_or(html.len(), |k| close + k + end_tag.len());
            out.push(' ');
            out.push_str(CODE_PLACEHOLDER);
            out.push(' ');
            i = end;
            continue;
        }
        if !INLINE_TAGS.contains(&name.as_str()) {
            out.push(' ');
        }
        i = close + 1;
    }
    let decoded = html_escape::decode_html_entities(&out);
    collapse_whitespace(&decoded)
}

fn starts_tag(bytes: &[u8], i: usize) -> bool {
    matches!(bytes.get(i + 1), Some(c) if c.is_ascii_alphabetic() || *c == b'/' || *c == b'!')
}

fn collapse_whitespace(text: &str) -> String {
    let spans = math_spans(text);
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    let mut last = 0;
    let push_plain = |out: &mut String, plain: &str, pending: &mut bool| {
        for c in plain.chars() {
            if c.is_whitespace() {
                *pending = true;
            } else {
                if *pending && !out.is_empty() {
                    out.push(' ');
                }
                *pending = false;
                out.push(c);
            }
        }
    };
    for span in spans {
        push_plain(&mut out, &text[last..span.start], &mut pending_space);
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push_str(&text[span.clone()]);
        last = span.end;
    }
    push_plain(&mut out, &text[last..], &mut pending_space);
    out
}
