//! Small text helpers shared by the agents.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Number rendering used inside prompts: six decimals, trailing zeros trimmed.
pub fn fmt_num(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "-0" | "" => "0".to_string(),
        _ => s.to_string(),
    }
}

/// At most `limit` characters of `s`, cut on a char boundary.
pub fn truncate_chars(s: &str, limit: usize) -> &str {
    match s.char_indices().nth(limit) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Contents of every fenced block, in order. An unterminated fence runs to
/// the end of the text.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        match (&mut current, is_fence(line)) {
            (None, true) => current = Some(Vec::new()),
            (None, false) => {}
            (Some(body), false) => body.push(line),
            (Some(body), true) => {
                blocks.push(body.join("\n"));
                current = None;
            }
        }
    }
    if let Some(body) = current {
        blocks.push(body.join("\n"));
    }
    blocks
}

/// Removes fence marker lines and surrounding whitespace.
pub fn strip_code_fences(text: &str) -> String {
    text.lines().filter(|l| !is_fence(l)).collect::<Vec<_>>().join("\n").trim().to_string()
}

/// Crude test that unfenced text is program source rather than prose.
pub fn looks_like_code(text: &str) -> bool {
    text.chars().any(|c| matches!(c, '=' | '(' | ')' | '{' | '}' | '[' | ']' | ';' | ':' | '<' | '>'))
}

/// The longest fenced block; without fences, the whole response if it looks
/// like code. `None` when nothing usable remains.
pub fn extract_code(response: &str) -> Option<String> {
    let blocks = fenced_blocks(response);
    let code = if blocks.is_empty() {
        let whole = response.trim();
        if !looks_like_code(whole) {
            return None;
        }
        whole.to_string()
    } else {
        // first of equally long blocks wins
        let mut best = &blocks[0];
        for b in &blocks[1..] {
            if b.trim().chars().count() > best.trim().chars().count() {
                best = b;
            }
        }
        best.trim_matches('\n').to_string()
    };
    if code.trim().is_empty() {
        None
    } else {
        Some(code)
    }
}
