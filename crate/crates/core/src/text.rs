//! Deterministic text heuristics used by the rule backend.

use std::collections::{BTreeSet, HashMap};
use std::sync::{LazyLock, Mutex};

use regex::Regex;

use crate::model::{Task, AGENT_HANDLE};

static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@([A-Za-z0-9_.\-]+)").unwrap());

static ABANDON: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(cancel|nevermind|never mind|forget it|abort|scrap (it|that)|drop it)\b").unwrap()
});

static AFFIRMATIVE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(yes|yep|yeah|yup|confirm|confirmed|lgtm|looks good|sounds good|go ahead|create it|approved?|all good)\b",
    )
    .unwrap()
});

/// Words too generic to identify a backlog task on their own.
const GENERIC_WORDS: &[&str] = &[
    "the",
    "and",
    "for",
    "with",
    "from",
    "into",
    "this",
    "that",
    "add",
    "adding",
    "implement",
    "implementation",
    "fix",
    "fixes",
    "fixing",
    "bug",
    "bugs",
    "issue",
    "update",
    "task",
    "feature",
    "new",
    "page",
    "support",
    "make",
    "create",
    "improve",
    "handle",
    "set",
    "up",
    "our",
    "all",
    "user",
];

/// Handles mentioned with `@`, lowercased, without the `@`.
pub fn mentions(content: &str) -> Vec<String> {
    MENTION
        .captures_iter(content)
        .map(|c| c[1].trim_end_matches(['.', '-']).to_ascii_lowercase())
        .collect()
}

pub fn mentions_agent(content: &str) -> bool {
    mentions(content).iter().any(|m| m == AGENT_HANDLE)
}

static ASSIGNEE_MENTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(assignee|assign(ed)?\s+(it\s+)?to|owner)\s*:?\s*@[A-Za-z0-9_.\-]+").unwrap());

/// A message that addresses another person and not the agent. Naming
/// someone as an assignee is not addressing them.
pub fn is_cross_talk(content: &str) -> bool {
    let addressed = ASSIGNEE_MENTION.replace_all(content, "");
    let m = mentions(&addressed);
    !m.is_empty() && !m.iter().any(|h| h == AGENT_HANDLE)
}

pub fn is_abandon(content: &str) -> bool {
    ABANDON.is_match(content)
}

pub fn is_affirmative(content: &str) -> bool {
    AFFIRMATIVE.is_match(content)
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| w.len() >= 3)
        .map(|w| {
            let w = w.to_ascii_lowercase();
            match w.strip_suffix('s') {
                Some(stem) if stem.len() >= 3 && !w.ends_with("ss") => stem.to_string(),
                _ => w,
            }
        })
        .collect()
}

fn significant_tokens(text: &str) -> BTreeSet<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !GENERIC_WORDS.contains(&t.as_str()))
        .collect()
}

/// The backlog task a message refers to, if any.
///
/// A task matches on its id as a whole word, its full name, or when at
/// least half of the distinctive words of its name occur in the message.
/// The best-scoring task wins; ties go to the earlier backlog entry.
pub fn mentioned_task<'a>(backlog: &'a [Task], content: &str) -> Option<&'a Task> {
    let lower = content.to_ascii_lowercase();
    let words = tokens(content);
    let mut best: Option<(&Task, f64)> = None;
    for task in backlog {
        let id = task.id.to_ascii_lowercase();
        let score = if contains_word(&lower, &id) || lower.contains(&task.name.to_ascii_lowercase()) {
            2.0
        } else {
            let name = significant_tokens(&task.name);
            if name.is_empty() {
                continue;
            }
            let hits = name.iter().filter(|t| words.contains(*t)).count();
            if hits == 0 || hits * 2 < name.len() {
                continue;
            }
            hits as f64 / name.len() as f64
        };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((task, score));
        }
    }
    best.map(|(t, _)| t)
}

fn contains_word(haystack: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    haystack.match_indices(word).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + word.len()..].chars().next();
        let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_ascii_alphanumeric() && c != '-');
        boundary(before) && boundary(after)
    })
}

/// Stable short key for a free-text topic (FNV-1a over normalized words).
pub fn topic_key(content: &str) -> String {
    let normalized = significant_tokens(content).into_iter().collect::<Vec<_>>().join(" ");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in normalized.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    format!("topic-{hash:016x}")
}

// alias tables are few and static, so compiled patterns are kept
static FIELD_REGEX: LazyLock<Mutex<HashMap<String, Regex>>> = LazyLock::new(Default::default);

fn field_regex(alternation: &str) -> Regex {
    let mut cache = FIELD_REGEX.lock().unwrap_or_else(|e| e.into_inner());
    cache
        .entry(alternation.to_string())
        .or_insert_with(|| Regex::new(&format!(r"(?i)\b({alternation})\s*:")).expect("field regex"))
        .clone()
}

/// Extracts `field: value` pairs for the given field aliases.
///
/// `fields` maps each alias (lowercase) to its canonical field name. A
/// value runs until the next recognized `alias:` or the end of the text;
/// trailing separators are trimmed.
pub fn extract_fields(content: &str, fields: &[(&str, &str)]) -> Vec<(String, String)> {
    let alternation = fields
        .iter()
        .map(|(alias, _)| regex::escape(alias).replace(' ', r"\s+"))
        .collect::<Vec<_>>()
        .join("|");
    let re = field_regex(&alternation);
    let marks: Vec<_> = re
        .captures_iter(content)
        .map(|c| {
            let whole = c.get(0).unwrap();
            (whole.start(), whole.end(), c[1].to_ascii_lowercase())
        })
        .collect();
    let mut out = Vec::new();
    for (i, (_, end, alias)) in marks.iter().enumerate() {
        let stop = marks.get(i + 1).map_or(content.len(), |m| m.0);
        let value = content[*end..stop].trim().trim_end_matches([',', ';', '.']).trim();
        if value.is_empty() {
            continue;
        }
        let alias = alias.split_whitespace().collect::<Vec<_>>().join(" ");
        if let Some((_, canonical)) = fields.iter().find(|(a, _)| *a == alias) {
            out.push((canonical.to_string(), value.to_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, name: &str) -> Task {
        Task {
            id: id.into(),
            name: name.into(),
            description: None,
            list_name: "Backlog".into(),
            labels: vec![],
            assignee: None,
            url: String::new(),
        }
    }

    #[test]
    fn cross_talk_needs_a_non_agent_mention() {
        assert!(is_cross_talk("@mchen how's the progress?"));
        assert!(!is_cross_talk("@devnous can you generate today's team summary?"));
        assert!(!is_cross_talk("@devnous ping @mchen"));
        assert!(!is_cross_talk("no mentions"));
        assert!(!is_cross_talk("priority: high, assignee: @mchen"));
        assert!(is_cross_talk("assignee: @mchen, right @ajones?"));
    }

    #[test]
    fn matches_tasks_by_distinctive_words() {
        let backlog = vec![
            task("T-1", "Fix user profile bug"),
            task("T-2", "Implement OAuth login"),
        ];
        assert_eq!(
            mentioned_task(&backlog, "The bug fix for user profiles is almost done")
                .unwrap()
                .id,
            "T-1"
        );
        assert_eq!(
            mentioned_task(&backlog, "I'm working on the OAuth implementation")
                .unwrap()
                .id,
            "T-2"
        );
        assert_eq!(mentioned_task(&backlog, "T-2 is blocked").unwrap().id, "T-2");
        assert!(mentioned_task(&backlog, "fix the bug on the new page").is_none());
        assert!(mentioned_task(&backlog, "anyone ordering lunch?").is_none());
        assert!(mentioned_task(&backlog, "users keep hitting this in production").is_none());
    }

    #[test]
    fn id_match_requires_word_boundary() {
        let backlog = vec![task("T-1", "zzz qqq")];
        assert!(mentioned_task(&backlog, "T-10 done").is_none());
        assert!(mentioned_task(&backlog, "t-1 done").is_some());
    }

    #[test]
    fn extracts_field_values() {
        let fields = [("priority", "priority"), ("assignee", "assignee"), ("label", "labels")];
        let got = extract_fields("Priority: High, assignee: @mchen; label: backend.", &fields);
        assert_eq!(
            got,
            vec![
                ("priority".into(), "High".into()),
                ("assignee".into(), "@mchen".into()),
                ("labels".into(), "backend".into()),
            ]
        );
        assert!(extract_fields("no fields here", &fields).is_empty());
    }

    #[test]
    fn topic_key_ignores_case_and_filler() {
        assert_eq!(topic_key("Redis cache warmup"), topic_key("the redis CACHE warmup"));
        assert_ne!(topic_key("redis cache"), topic_key("postgres cache"));
    }

    #[test]
    fn reply_phrases() {
        assert!(is_affirmative("Yes, create that task"));
        assert!(is_affirmative("looks good to me"));
        assert!(!is_affirmative("yesterday was rough"));
        assert!(is_abandon("nevermind, cancel that"));
        assert!(!is_abandon("cancellation flow is done"));
    }
}
