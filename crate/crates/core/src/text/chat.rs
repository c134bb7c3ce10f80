//! Utterance text from CHAT (`.cha`) transcripts.

use std::sync::OnceLock;

use regex::Regex;

/// Joins the cleaned utterances of the listed speaker tiers (e.g. `PAR`).
/// Header (`@`) and dependent (`%`) tiers are dropped; tab-indented lines
/// continue the previous tier.
pub fn extract_chat(text: &str, speakers: &[&str]) -> String {
    let mut utterances: Vec<String> = Vec::new();
    let mut keep = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('*') {
            let (who, body) = rest.split_once(':').unwrap_or((rest, ""));
            keep = speakers.iter().any(|s| s.eq_ignore_ascii_case(who.trim()));
            if keep {
                utterances.push(body.to_string());
            }
        } else if line.starts_with('@') || line.starts_with('%') {
            keep = false;
        } else if keep && line.starts_with(['\t', ' ']) {
            if let Some(last) = utterances.last_mut() {
                last.push(' ');
                last.push_str(line.trim());
            }
        }
    }
    utterances.iter().map(|u| clean_utterance(u)).filter(|u| !u.is_empty()).collect::<Vec<_>>().join(" ")
}

fn patterns() -> &'static [(Regex, &'static str)] {
    static P: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    P.get_or_init(|| {
        [
            (r"\x15[^\x15]*\x15", " "),     // media time bullets
            (r"\[[^\]]*\]", " "),           // annotations and retrace markers
            (r"&=\S+", " "),                // events like &=laughs
            (r"\+[./!?,<^\x22]+", " "),     // utterance terminators and linkers
            (r"\(\.+\)", " "),              // pauses
            (r"\bxxx\b|\byyy\b|\bwww\b", " "),
            (r"[<>]", " "),
            (r"&(\w)", "$1"),               // &uh -> uh
            (r"(\w)@\w+", "$1"),            // word@o
            (r"\((\w+)\)", "$1"),           // omitted sounds: (be)cause
            (r"_", " "),
            (r"\s+", " "),
        ]
        .into_iter()
        .map(|(p, r)| (Regex::new(p).expect("static pattern"), r))
        .collect()
    })
}

fn clean_utterance(u: &str) -> String {
    let mut s = u.to_string();
    for (re, rep) in patterns() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.trim().to_string()
}
