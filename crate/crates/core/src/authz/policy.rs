//! Who answers authorization prompts: a scripted rule list, a terminal user,
//! or a recorded sequence of answers.
//!
//! Policy files hold one rule per line:
//!
//! ```text
//! # comment
//! deny  "take a selfie"  "*>Basic Camera"  record_audio  microphone
//! allow *                *                 *             *
//! ```
//!
//! Fields are the widget label, the program chain joined with `>`, the
//! operation and the sensor; each is a glob. Quote fields containing spaces.
//! The last rule must match everything (`default allow` / `default deny` is
//! shorthand for that).

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use globset::{Glob, GlobMatcher};
use thiserror::Error;

use super::cache::Verdict;

/// One path as the user would see it, by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subject {
    pub widget: String,
    pub programs: Vec<String>,
    pub op: String,
    pub sensor: String,
}

impl Subject {
    pub fn chain(&self) -> String {
        self.programs.join(">")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRequest {
    pub text: String,
    pub subjects: Vec<Subject>,
}

/// Stand-in for the user who makes the final call.
pub trait Authorizer {
    fn decide(&mut self, prompt: &PromptRequest) -> Verdict;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("policy must end with a rule matching everything")]
    MissingDefault,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub verdict: Verdict,
    patterns: [String; 4],
    matchers: [GlobMatcher; 4],
}

impl Rule {
    pub fn new(verdict: Verdict, patterns: [&str; 4]) -> Result<Self, String> {
        let mut matchers = Vec::with_capacity(4);
        for p in patterns {
            let glob = Glob::new(p).map_err(|e| format!("bad glob {p:?}: {e}"))?;
            matchers.push(glob.compile_matcher());
        }
        Ok(Self {
            verdict,
            patterns: patterns.map(str::to_string),
            matchers: matchers.try_into().expect("four matchers"),
        })
    }

    pub fn matches(&self, s: &Subject) -> bool {
        self.matchers[0].is_match(&s.widget)
            && self.matchers[1].is_match(s.chain())
            && self.matchers[2].is_match(&s.op)
            && self.matchers[3].is_match(&s.sensor)
    }

    fn is_total(&self) -> bool {
        self.patterns.iter().all(|p| p == "*")
    }
}

/// Ordered allow/deny rules; the first match wins.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    rules: Vec<Rule>,
}

impl ScriptedPolicy {
    pub fn new(rules: Vec<Rule>) -> Result<Self, PolicyError> {
        match rules.last() {
            Some(last) if last.is_total() => Ok(Self { rules }),
            _ => Err(PolicyError::MissingDefault),
        }
    }

    pub fn allow_all() -> Self {
        Self::fixed(Verdict::Allow)
    }

    pub fn deny_all() -> Self {
        Self::fixed(Verdict::Deny)
    }

    fn fixed(verdict: Verdict) -> Self {
        Self {
            rules: vec![Rule::new(verdict, ["*"; 4]).expect("valid glob")],
        }
    }

    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let fields = split_fields(content).map_err(|msg| PolicyError::Syntax { line, msg })?;
            let syntax = |msg: String| PolicyError::Syntax { line, msg };
            let verdict = |word: &str| match word {
                "allow" => Ok(Verdict::Allow),
                "deny" => Ok(Verdict::Deny),
                other => Err(syntax(format!("expected allow or deny, found {other:?}"))),
            };
            let rule = match fields.as_slice() {
                [kw, v] if kw == "default" => Rule::new(verdict(v)?, ["*"; 4]).map_err(syntax)?,
                [v, w, c, o, s] => Rule::new(
                    verdict(v)?,
                    [w.as_str(), c.as_str(), o.as_str(), s.as_str()],
                )
                .map_err(syntax)?,
                _ => {
                    return Err(syntax(format!(
                        "expected 5 fields or `default allow|deny`, found {}",
                        fields.len()
                    )))
                }
            };
            rules.push(rule);
        }
        Self::new(rules)
    }

    pub fn verdict_for(&self, subject: &Subject) -> Verdict {
        self.rules
            .iter()
            .find(|r| r.matches(subject))
            .map(|r| r.verdict)
            .expect("last rule is total")
    }
}

impl Authorizer for ScriptedPolicy {
    /// An aggregated prompt is allowed only if every path in it is.
    fn decide(&mut self, prompt: &PromptRequest) -> Verdict {
        if prompt
            .subjects
            .iter()
            .all(|s| self.verdict_for(s) == Verdict::Allow)
        {
            Verdict::Allow
        } else {
            Verdict::Deny
        }
    }
}

fn split_fields(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut field = String::new();
        if c == '"' {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(ch) => field.push(ch),
                    None => return Err("unterminated quote".into()),
                }
            }
        } else {
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                field.push(ch);
                chars.next();
            }
        }
        out.push(field);
    }
    Ok(out)
}

/// Asks on a terminal: prompt text to `out`, `y`/`n` from `input`.
/// End of input counts as a denial.
pub struct InteractivePrompt<R, W> {
    input: R,
    out: W,
}

impl<R: BufRead, W: Write> InteractivePrompt<R, W> {
    pub fn new(input: R, out: W) -> Self {
        Self { input, out }
    }
}

impl<R: BufRead, W: Write> Authorizer for InteractivePrompt<R, W> {
    fn decide(&mut self, prompt: &PromptRequest) -> Verdict {
        loop {
            let _ = write!(self.out, "{} [y/n] ", prompt.text);
            let _ = self.out.flush();
            let mut line = String::new();
            match self.input.read_line(&mut line) {
                Ok(0) | Err(_) => return Verdict::Deny,
                Ok(_) => {}
            }
            match line.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" => return Verdict::Allow,
                "n" | "no" => return Verdict::Deny,
                _ => continue,
            }
        }
    }
}

/// Replays answers captured in an earlier run; runs out as denials.
#[derive(Debug, Clone, Default)]
pub struct RecordedAnswers {
    answers: VecDeque<Verdict>,
}

impl RecordedAnswers {
    pub fn new(answers: impl IntoIterator<Item = Verdict>) -> Self {
        Self {
            answers: answers.into_iter().collect(),
        }
    }
}

impl Authorizer for RecordedAnswers {
    fn decide(&mut self, _prompt: &PromptRequest) -> Verdict {
        self.answers.pop_front().unwrap_or(Verdict::Deny)
    }
}
