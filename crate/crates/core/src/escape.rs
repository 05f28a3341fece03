//! Backslash escaping for TAB-separated text fields.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid escape sequence \\{0}")]
pub struct EscapeError(pub char);

/// Appends `field` to `out` with backslash, TAB and newline escaped as `\\`, `\t`, `\n`.
pub fn escape_field(field: &str, out: &mut String) {
    if !field.contains(['\\', '\t', '\n']) {
        out.push_str(field);
        return;
    }
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

pub fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    escape_field(field, &mut out);
    out
}

pub fn unescape(field: &str) -> Result<String, EscapeError> {
    if !field.contains('\\') {
        return Ok(field.to_owned());
    }
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some(other) => return Err(EscapeError(other)),
            None => return Err(EscapeError(' ')),
        }
    }
    Ok(out)
}

/// Splits an escaped line on raw TABs and unescapes every field.
pub fn split_escaped_fields(line: &str) -> Result<Vec<String>, EscapeError> {
    line.split('\t').map(unescape).collect()
}
