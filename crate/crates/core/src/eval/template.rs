use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::fingerprint;

const TEXT: &str = "{text}";
const LABEL: &str = "{label}";

/// Demonstration/query patterns joined by a separator.
///
/// The query pattern stops at the label cue with no trailing whitespace: the
/// boundary marker on label tokens supplies the space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate", into = "RawTemplate")]
pub struct PromptTemplate {
    demo_pattern: String,
    query_pattern: String,
    separator: String,
    demo: DemoPieces,
    query: (String, String),
    fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DemoPieces {
    text_first: bool,
    head: String,
    middle: String,
    tail: String,
}

#[derive(Serialize, Deserialize)]
struct RawTemplate {
    demo_pattern: String,
    query_pattern: String,
    separator: String,
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = Error;
    fn try_from(r: RawTemplate) -> Result<Self> {
        PromptTemplate::new(&r.demo_pattern, &r.query_pattern, &r.separator)
    }
}

impl From<PromptTemplate> for RawTemplate {
    fn from(t: PromptTemplate) -> Self {
        RawTemplate {
            demo_pattern: t.demo_pattern,
            query_pattern: t.query_pattern,
            separator: t.separator,
        }
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(
            "Sentence: {text}\nCategory: {label}",
            "Sentence: {text}\nCategory:",
            "\n\n",
        )
        .expect("default template is valid")
    }
}

/// A prompt split back into its demonstrations and query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt<'a> {
    /// `(text, label)` pairs, label as displayed (no boundary marker).
    pub demos: Vec<(&'a str, &'a str)>,
    pub query: &'a str,
}

impl PromptTemplate {
    pub fn new(demo_pattern: &str, query_pattern: &str, separator: &str) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidTemplate(m));
        if demo_pattern.matches(TEXT).count() != 1 || demo_pattern.matches(LABEL).count() != 1 {
            return bad(format!(
                "demo pattern {demo_pattern:?} needs exactly one {TEXT} and one {LABEL}"
            ));
        }
        if query_pattern.matches(TEXT).count() != 1 || query_pattern.contains(LABEL) {
            return bad(format!(
                "query pattern {query_pattern:?} needs exactly one {TEXT} and no {LABEL}"
            ));
        }
        if separator.is_empty() {
            return bad("separator must be non-empty".into());
        }
        let (qhead, qtail) = query_pattern.split_once(TEXT).unwrap();
        if qtail.is_empty() {
            return bad("query pattern must end with a label cue after {text}".into());
        }
        if query_pattern.ends_with(char::is_whitespace) {
            return bad("query pattern must not end with whitespace".into());
        }
        let t = demo_pattern.find(TEXT).unwrap();
        let l = demo_pattern.find(LABEL).unwrap();
        let demo = if t < l {
            DemoPieces {
                text_first: true,
                head: demo_pattern[..t].to_string(),
                middle: demo_pattern[t + TEXT.len()..l].to_string(),
                tail: demo_pattern[l + LABEL.len()..].to_string(),
            }
        } else {
            DemoPieces {
                text_first: false,
                head: demo_pattern[..l].to_string(),
                middle: demo_pattern[l + LABEL.len()..t].to_string(),
                tail: demo_pattern[t + TEXT.len()..].to_string(),
            }
        };
        if demo.middle.is_empty() {
            return bad("demo pattern needs literal text between {text} and {label}".into());
        }
        let fp = fingerprint([demo_pattern, query_pattern, separator]);
        Ok(PromptTemplate {
            demo_pattern: demo_pattern.to_string(),
            query_pattern: query_pattern.to_string(),
            separator: separator.to_string(),
            demo,
            query: (qhead.to_string(), qtail.to_string()),
            fingerprint: fp,
        })
    }

    pub fn demo_pattern(&self) -> &str {
        &self.demo_pattern
    }

    pub fn query_pattern(&self) -> &str {
        &self.query_pattern
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn render_demo(&self, text: &str, label: &str) -> String {
        let d = &self.demo;
        let (a, b) = if d.text_first {
            (text, label)
        } else {
            (label, text)
        };
        [d.head.as_str(), a, d.middle.as_str(), b, d.tail.as_str()].concat()
    }

    pub fn render_query(&self, text: &str) -> String {
        [self.query.0.as_str(), text, self.query.1.as_str()].concat()
    }

    fn match_query<'a>(&self, block: &'a str) -> Option<&'a str> {
        let (head, tail) = (&self.query.0, &self.query.1);
        if block.len() < head.len() + tail.len() {
            return None;
        }
        let text = block
            .strip_prefix(head.as_str())?
            .strip_suffix(tail.as_str())?;
        (!text.contains(&self.separator)).then_some(text)
    }

    fn match_demo<'a>(&self, block: &'a str) -> Option<(&'a str, &'a str)> {
        let d = &self.demo;
        if block.len() < d.head.len() + d.middle.len() + d.tail.len() {
            return None;
        }
        let inner = block
            .strip_prefix(d.head.as_str())?
            .strip_suffix(d.tail.as_str())?;
        if d.text_first {
            let at = inner.rfind(d.middle.as_str())?;
            Some((&inner[..at], &inner[at + d.middle.len()..]))
        } else {
            let at = inner.find(d.middle.as_str())?;
            Some((&inner[at + d.middle.len()..], &inner[..at]))
        }
    }

    /// Inverse of rendering, for prompts whose sentences do not contain the separator.
    pub fn parse<'a>(&self, prompt: &'a str) -> Option<ParsedPrompt<'a>> {
        let mut demos = Vec::new();
        let mut rest = prompt;
        loop {
            if let Some(query) = self.match_query(rest) {
                return Some(ParsedPrompt { demos, query });
            }
            let (block, after) = rest.split_once(self.separator.as_str())?;
            demos.push(self.match_demo(block)?);
            rest = after;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_renders() {
        let t = PromptTemplate::default();
        assert_eq!(
            t.render_demo("good day", "happy"),
            "Sentence: good day\nCategory: happy"
        );
        assert_eq!(t.render_query("bad day"), "Sentence: bad day\nCategory:");
    }

    #[test]
    fn validation() {
        assert!(PromptTemplate::new("{text} {label} {text}", "{text}:", "\n").is_err());
        assert!(PromptTemplate::new("{text} -> {label}", "{text} ->", "").is_err());
        assert!(PromptTemplate::new("{text} -> {label}", "{text} -> ", "\n").is_err());
        assert!(PromptTemplate::new("{text} -> {label}", "{text}", "\n").is_err());
        assert!(PromptTemplate::new("{text}{label}", "{text} ->", "\n").is_err());
        assert!(PromptTemplate::new("{label}: {text}", "Q: {text} ->", "\n").is_ok());
    }

    #[test]
    fn parse_roundtrip() {
        let t = PromptTemplate::default();
        let prompt = [
            t.render_demo("a b", "x"),
            t.render_demo("c", "y"),
            t.render_query("q q"),
        ]
        .join(t.separator());
        let parsed = t.parse(&prompt).unwrap();
        assert_eq!(parsed.demos, vec![("a b", "x"), ("c", "y")]);
        assert_eq!(parsed.query, "q q");
        let zero = t.parse("Sentence: only\nCategory:").unwrap();
        assert!(zero.demos.is_empty());
        assert!(t.parse("garbage").is_none());
    }

    #[test]
    fn label_first_parse() {
        let t = PromptTemplate::new("[{label}] {text}", "{text} =>", " | ").unwrap();
        let prompt = format!(
            "{} | {}",
            t.render_demo("hi there", "g"),
            t.render_query("yo")
        );
        let parsed = t.parse(&prompt).unwrap();
        assert_eq!(parsed.demos, vec![("hi there", "g")]);
        assert_eq!(parsed.query, "yo");
    }

    #[test]
    fn fingerprint_tracks_patterns() {
        let a = PromptTemplate::default();
        let b = PromptTemplate::new(
            "Sentence: {text}\nLabel: {label}",
            "Sentence: {text}\nLabel:",
            "\n\n",
        )
        .unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        let json = serde_json::to_string(&a).unwrap();
        let back: PromptTemplate = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }
}
