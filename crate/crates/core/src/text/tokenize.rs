//! Penn Treebank word tokenization.
//!
//! Follows the Treebank rules (contractions split off, punctuation separated)
//! with two changes: double quotes are emitted verbatim rather than rewritten
//! as `` and '', so every non-whitespace input character survives, and a
//! period is split off wherever it ends a sentence, since transcripts are
//! tokenized whole rather than sentence by sentence.

use std::sync::OnceLock;

use regex::Regex;

struct Rule {
    re: Regex,
    rep: &'static str,
    /// Reapply until stable; the pattern consumes its right context.
    repeat: bool,
}

fn rules() -> &'static [Rule] {
    static RULES: OnceLock<Vec<Rule>> = OnceLock::new();
    RULES.get_or_init(|| {
        let r = |p: &str, rep: &'static str| Rule {
            re: Regex::new(p).expect("static pattern"),
            rep,
            repeat: false,
        };
        vec![
            r(r#"""#, r#" " "#),
            // punctuation
            Rule {
                repeat: true,
                ..r(r"([:,])([^\d\s])", " $1 $2")
            },
            r(r"([:,])(\s)", " $1$2"),
            r(r"([:,])$", " $1 "),
            r(r"\.\.\.", " ... "),
            r(r"[;@#$%&]", " $0 "),
            r(r"[?!]", " $0 "),
            r(r"([^'])' ", "$1 ' "),
            // brackets and dashes
            r(r"[\]\[\(\)\{\}<>]", " $0 "),
            r(r"--", " -- "),
            // sentence-final periods anywhere in the text, not only at its end
            Rule {
                repeat: true,
                ..r(r"([^\.\s])\.(\s)", "$1 .$2")
            },
            // clitics
            Rule {
                repeat: true,
                ..r(r"([^' ])('[sS]|'[mM]|'[dD]|') ", "$1 $2 ")
            },
            Rule {
                repeat: true,
                ..r(r"([^' ])('ll|'LL|'re|'RE|'ve|'VE|n't|N'T) ", "$1 $2 ")
            },
            r(r"(?i)\b(can)(not)\b", " $1 $2 "),
            r(r"(?i)\b(d)('ye)\b", " $1 $2 "),
            r(r"(?i)\b(gim)(me)\b", " $1 $2 "),
            r(r"(?i)\b(gon)(na)\b", " $1 $2 "),
            r(r"(?i)\b(got)(ta)\b", " $1 $2 "),
            r(r"(?i)\b(lem)(me)\b", " $1 $2 "),
            r(r"(?i)\b(more)('n)\b", " $1 $2 "),
            r(r"(?i)\b(wan)(na)\s", " $1 $2 "),
            r(r"(?i) ('t)(is)\b", " $1 $2 "),
            r(r"(?i) ('t)(was)\b", " $1 $2 "),
        ]
    })
}

fn single_pass(text: &str) -> Vec<String> {
    let mut s = format!(" {text} ");
    for rule in rules() {
        loop {
            let next = rule.re.replace_all(&s, rule.rep).into_owned();
            let done = next == s || !rule.repeat;
            s = next;
            if done {
                break;
            }
        }
    }
    s.split_whitespace().map(str::to_string).collect()
}

/// Splits `text` into Treebank tokens. Tokens the rules would split further
/// when seen on their own are re-tokenized, so the output is a fixed point.
pub fn tokenize_treebank(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack: Vec<String> = single_pass(text).into_iter().rev().collect();
    while let Some(tok) = stack.pop() {
        let parts = single_pass(&tok);
        if parts.len() <= 1 {
            out.push(tok);
        } else {
            stack.extend(parts.into_iter().rev());
        }
    }
    out
}
