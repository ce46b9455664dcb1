use crate::orthography::{LanguageId, Orthography};

const MAX_PASSES: usize = 16;

fn find_ci(hay: &str, needle: &str, from: usize) -> Option<usize> {
    hay[from..]
        .to_ascii_lowercase()
        .find(needle)
        .map(|i| i + from)
}

/// Removes `<script>`/`<style>` blocks and tags. A `<` only opens a tag when
/// followed by a letter, `/`, `!` or `?`; a tag with no closing `>` is kept
/// as text. Tags become spaces so adjacent words stay apart.
pub fn strip_markup(s: &str) -> String {
    let mut s = s.to_string();
    for block in ["script", "style"] {
        let open = format!("<{block}");
        let close = format!("</{block}");
        while let Some(start) = find_ci(&s, &open, 0) {
            let end = find_ci(&s, &close, start)
                .and_then(|c| s[c..].find('>').map(|g| c + g + 1))
                .unwrap_or(s.len());
            s.replace_range(start..end, " ");
        }
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s.as_str();
    while let Some(lt) = rest.find('<') {
        out.push_str(&rest[..lt]);
        let after = &rest[lt + 1..];
        let opens = after
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || matches!(c, '/' | '!' | '?'));
        match after.find('>') {
            Some(gt) if opens => {
                out.push(' ');
                rest = &after[gt + 1..];
            }
            _ => {
                out.push('<');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let after = &rest[amp + 1..];
        let decoded = after.find(';').filter(|&semi| semi <= 10).and_then(|semi| {
            let name = &after[..semi];
            let c = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ => name
                    .strip_prefix("#x")
                    .or_else(|| name.strip_prefix("#X"))
                    .map(|h| u32::from_str_radix(h, 16))
                    .or_else(|| name.strip_prefix('#').map(str::parse))
                    .and_then(|r| r.ok())
                    .and_then(char::from_u32),
            };
            c.map(|c| (c, semi))
        });
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &after[semi + 1..];
            }
            None => {
                out.push('&');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Persian and Urdu text uses Extended Arabic-Indic digits (U+06F0..U+06F9);
/// ASCII and Arabic-Indic digits are converted. Other languages are untouched.
pub fn convert_digits(s: &str, lang: LanguageId) -> String {
    if !matches!(lang, LanguageId::Persian | LanguageId::Urdu) {
        return s.to_string();
    }
    s.chars()
        .map(|c| {
            let d = match c {
                '0'..='9' => Some(c as u32 - '0' as u32),
                '\u{0660}'..='\u{0669}' => Some(c as u32 - 0x0660),
                _ => None,
            };
            d.and_then(|d| char::from_u32(0x06F0 + d)).unwrap_or(c)
        })
        .collect()
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Markup and entity removal, orthographic normalization, digit conversion
/// and whitespace collapsing, repeated until nothing changes, so the result
/// is idempotent even when an entity decodes to markup.
pub fn clean(raw: &str, lang: LanguageId, orth: &Orthography) -> String {
    let mut cur = raw.to_string();
    for _ in 0..MAX_PASSES {
        let next = strip_markup(&cur);
        let next = decode_entities(&next);
        let next = orth.normalize(&next, lang);
        let next = convert_digits(&next, lang);
        let next = collapse_whitespace(&next);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}
