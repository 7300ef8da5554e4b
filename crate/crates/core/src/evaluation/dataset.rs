//! Benchmark files.
//!
//! The canonical format is JSON Lines. A dialogue starts with a header
//! record `{id, team, initial_backlog}` followed by one record per human
//! turn:
//!
//! ```json
//! {"turn": 0, "user": "mchen", "time": "12-03-2025 10:15:00", "message": "...",
//!  "ground_truth": [{"category": "NEW_TASK", "action": "CREATE_TASK"}],
//!  "predicted": [...], "agent_outputs": ["..."], "trace": {...}}
//! ```
//!
//! `predicted` and `trace` are present only in run logs. A file may hold
//! several dialogues back to back; a directory means every `*.jsonl` and
//! `*.json` file in it, in name order.
//!
//! Files in other layouts go through [`import_value`], which accepts the
//! common field-name variants (`speaker`/`text`/`labels`, nested `turns`
//! lists, interleaved agent messages, tuple pairs as arrays or strings).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{
    format_wire_time, parse_wire_time, ActionType, Dialogue, IntentMultiset, IntentTuple, MessageCategory, Task,
    TeamMember, TurnRecord, WireMessage, AGENT_HANDLE,
};
use crate::trace::TurnTrace;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{path}{}: `{field}`: {reason}", line.map(|l| format!(":{l}")).unwrap_or_default())]
pub struct FormatError {
    pub path: String,
    pub line: Option<usize>,
    pub field: String,
    pub reason: String,
}

impl FormatError {
    fn new(path: &Path, line: Option<usize>, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            path: path.display().to_string(),
            line,
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    id: String,
    #[serde(default)]
    team: Vec<TeamMember>,
    #[serde(default)]
    initial_backlog: Vec<Task>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnLine {
    turn: usize,
    user: String,
    time: String,
    message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<IntentMultiset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicted: Option<IntentMultiset>,
    #[serde(default)]
    agent_outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace: Option<TurnTrace>,
}

impl From<&TurnRecord> for TurnLine {
    fn from(r: &TurnRecord) -> Self {
        Self {
            turn: r.turn_index,
            user: r.message.user.clone(),
            time: r.message.time.clone(),
            message: r.message.message.clone(),
            ground_truth: r.ground_truth.clone(),
            predicted: r.predicted.clone(),
            agent_outputs: r.agent_outputs.clone(),
            trace: r.trace.clone(),
        }
    }
}

impl From<TurnLine> for TurnRecord {
    fn from(l: TurnLine) -> Self {
        Self {
            turn_index: l.turn,
            message: WireMessage::new(l.user, l.message, l.time),
            ground_truth: l.ground_truth,
            predicted: l.predicted,
            agent_outputs: l.agent_outputs,
            trace: l.trace,
        }
    }
}

pub fn write_dialogue<W: Write>(mut out: W, dialogue: &Dialogue) -> std::io::Result<()> {
    let header = HeaderRecord {
        id: dialogue.id.clone(),
        team: dialogue.team.clone(),
        initial_backlog: dialogue.initial_backlog.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for turn in &dialogue.turns {
        serde_json::to_writer(&mut out, &TurnLine::from(turn))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes `dialogues` to `path`: one file when it ends in `.jsonl`,
/// otherwise a directory with one `<id>.jsonl` per dialogue.
pub fn save_dataset(path: &Path, dialogues: &[Dialogue]) -> std::io::Result<Vec<PathBuf>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut buf = Vec::new();
        for d in dialogues {
            write_dialogue(&mut buf, d)?;
        }
        fs::write(path, buf)?;
        return Ok(vec![path.to_path_buf()]);
    }
    fs::create_dir_all(path)?;
    let mut written = Vec::new();
    for d in dialogues {
        let file = path.join(format!("{}.jsonl", sanitize(&d.id)));
        let mut buf = Vec::new();
        write_dialogue(&mut buf, d)?;
        fs::write(&file, buf)?;
        written.push(file);
    }
    Ok(written)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn dataset_files(path: &Path) -> Result<Vec<PathBuf>, FormatError> {
    if !path.is_dir() {
        if !path.exists() {
            return Err(FormatError::new(path, None, "$", "no such file or directory"));
        }
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| FormatError::new(path, None, "$", e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl" || e == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(FormatError::new(
            path,
            None,
            "$",
            "directory holds no .jsonl or .json files",
        ));
    }
    Ok(files)
}

/// Strict loader for the canonical format.
pub fn load_canonical(path: &Path) -> Result<Vec<Dialogue>, FormatError> {
    let mut out = Vec::new();
    for file in dataset_files(path)? {
        let text = fs::read_to_string(&file).map_err(|e| FormatError::new(&file, None, "$", e.to_string()))?;
        out.extend(parse_canonical(&file, &text)?);
    }
    Ok(out)
}

pub fn parse_canonical(path: &Path, text: &str) -> Result<Vec<Dialogue>, FormatError> {
    let mut dialogues: Vec<Dialogue> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = Some(i + 1);
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(line).map_err(|e| FormatError::new(path, lineno, "$", e.to_string()))?;
        let is_turn = value.get("turn").is_some();
        if !is_turn {
            let header: HeaderRecord =
                serde_json::from_value(value).map_err(|e| FormatError::new(path, lineno, "header", e.to_string()))?;
            dialogues.push(Dialogue {
                id: header.id,
                team: header.team,
                initial_backlog: header.initial_backlog,
                turns: Vec::new(),
            });
            continue;
        }
        let turn: TurnLine =
            serde_json::from_value(value).map_err(|e| FormatError::new(path, lineno, "turn", e.to_string()))?;
        parse_wire_time(&turn.time).map_err(|e| FormatError::new(path, lineno, "time", e.to_string()))?;
        if turn.message.trim().is_empty() {
            return Err(FormatError::new(path, lineno, "message", "empty message"));
        }
        let dialogue = dialogues
            .last_mut()
            .ok_or_else(|| FormatError::new(path, lineno, "header", "turn record before any dialogue header"))?;
        if let Some(prev) = dialogue.turns.last() {
            if turn.turn <= prev.turn_index {
                return Err(FormatError::new(
                    path,
                    lineno,
                    "turn",
                    format!("turn {} does not follow turn {}", turn.turn, prev.turn_index),
                ));
            }
        }
        dialogue.turns.push(turn.into());
    }
    if dialogues.is_empty() {
        return Err(FormatError::new(path, None, "$", "no dialogues"));
    }
    check_ids(path, &dialogues)?;
    Ok(dialogues)
}

fn check_ids(path: &Path, dialogues: &[Dialogue]) -> Result<(), FormatError> {
    let mut seen = BTreeSet::new();
    for d in dialogues {
        if !seen.insert(d.id.as_str()) {
            return Err(FormatError::new(
                path,
                None,
                "id",
                format!("duplicate dialogue id `{}`", d.id),
            ));
        }
    }
    Ok(())
}

/// Canonical format first, then the import adapter. On double failure
/// the canonical error is reported.
pub fn load_benchmark(path: &Path) -> Result<Vec<Dialogue>, FormatError> {
    let mut out = Vec::new();
    for file in dataset_files(path)? {
        let text = fs::read_to_string(&file).map_err(|e| FormatError::new(&file, None, "$", e.to_string()))?;
        match parse_canonical(&file, &text) {
            Ok(d) => out.extend(d),
            Err(canonical) => match import_text(&file, &text) {
                Ok(d) => out.extend(d),
                Err(imported) => {
                    tracing::debug!(%imported, "import adapter also failed");
                    return Err(canonical);
                }
            },
        }
    }
    check_ids(path, &out)?;
    Ok(out)
}

fn import_text(path: &Path, text: &str) -> Result<Vec<Dialogue>, FormatError> {
    if let Ok(value) = serde_json::from_str::<Value>(text) {
        return import_value(path, &value);
    }
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str::<Value>(line).map_err(|e| FormatError::new(path, Some(i + 1), "$", e.to_string()))?,
        );
    }
    import_value(path, &Value::Array(records))
}

const ID_KEYS: &[&str] = &["id", "dialogue_id", "conversation_id", "dialog_id", "scenario_id"];
const TURNS_KEYS: &[&str] = &["turns", "messages", "conversation", "dialogue", "utterances"];
const TEAM_KEYS: &[&str] = &["team", "team_members", "roster"];
const BACKLOG_KEYS: &[&str] = &["initial_backlog", "backlog", "tasks", "trello_tasks"];
const INDEX_KEYS: &[&str] = &["turn", "turn_index", "index", "turn_id", "idx"];
const USER_KEYS: &[&str] = &["user", "speaker", "author", "sender", "username"];
const TEXT_KEYS: &[&str] = &["message", "text", "content", "utterance"];
const TIME_KEYS: &[&str] = &["time", "timestamp", "ts", "datetime"];
const GOLD_KEYS: &[&str] = &["ground_truth", "labels", "gt", "gold", "annotations", "annotation"];
const PRED_KEYS: &[&str] = &["predicted", "prediction", "predictions", "pred", "classifications"];
const OUTPUT_KEYS: &[&str] = &[
    "agent_outputs",
    "agent_responses",
    "responses",
    "devnous_responses",
    "bot_responses",
];

fn field<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k)).filter(|v| !v.is_null())
}

/// Maps a non-canonical document onto dialogues.
///
/// Accepted shapes: a list of dialogue objects, an object with a
/// `dialogues` list, a single dialogue object, or a flat list of turn
/// records carrying a dialogue id. Messages authored by the agent are
/// folded into the preceding human turn's `agent_outputs`.
pub fn import_value(path: &Path, value: &Value) -> Result<Vec<Dialogue>, FormatError> {
    let items: Vec<&Value> = match value {
        Value::Array(items) => items.iter().collect(),
        Value::Object(obj) => match obj.get("dialogues").or_else(|| obj.get("conversations")) {
            Some(Value::Array(items)) => items.iter().collect(),
            _ => vec![value],
        },
        _ => return Err(FormatError::new(path, None, "$", "expected an object or a list")),
    };
    let nested = items.iter().all(|v| {
        v.as_object()
            .is_some_and(|o| field(o, TURNS_KEYS).is_some_and(Value::is_array))
    });
    let dialogues = if nested && !items.is_empty() {
        items
            .iter()
            .enumerate()
            .map(|(i, v)| import_dialogue(path, i, v.as_object().unwrap()))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        import_flat(path, &items)?
    };
    if dialogues.is_empty() {
        return Err(FormatError::new(path, None, "$", "no dialogues found"));
    }
    Ok(dialogues)
}

fn import_dialogue(path: &Path, index: usize, obj: &Map<String, Value>) -> Result<Dialogue, FormatError> {
    let id = field(obj, ID_KEYS).map_or_else(|| format!("dialogue-{:02}", index + 1), value_text);
    let team = match field(obj, TEAM_KEYS) {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| FormatError::new(path, None, format!("dialogues[{index}].team"), e.to_string()))?,
        None => Vec::new(),
    };
    let initial_backlog = match field(obj, BACKLOG_KEYS) {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| FormatError::new(path, None, format!("dialogues[{index}].initial_backlog"), e.to_string()))?,
        None => Vec::new(),
    };
    let turns: Vec<&Value> = field(obj, TURNS_KEYS)
        .and_then(Value::as_array)
        .unwrap()
        .iter()
        .collect();
    Ok(Dialogue {
        id,
        team,
        initial_backlog,
        turns: import_turns(path, &format!("dialogues[{index}].turns"), &turns)?,
    })
}

/// Header fields and turn records collected under one dialogue id.
type FlatGroup<'a> = (Option<Map<String, Value>>, Vec<&'a Value>);

fn import_flat(path: &Path, records: &[&Value]) -> Result<Vec<Dialogue>, FormatError> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, FlatGroup> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let obj = rec
            .as_object()
            .ok_or_else(|| FormatError::new(path, Some(i + 1), "$", "expected an object"))?;
        let id = field(obj, ID_KEYS).map_or_else(|| "dialogue-01".to_string(), value_text);
        if !grouped.contains_key(&id) {
            order.push(id.clone());
        }
        let entry = grouped.entry(id).or_default();
        if field(obj, TEXT_KEYS).is_some() {
            entry.1.push(rec);
        } else {
            entry.0 = Some(obj.clone());
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (header, turns) = grouped.remove(&id).unwrap();
            let header = header.unwrap_or_default();
            let parse = |keys: &[&str], name: &str| -> Result<Value, FormatError> {
                Ok(field(&header, keys).cloned().unwrap_or(Value::Array(vec![]))).and_then(|v| {
                    if v.is_array() {
                        Ok(v)
                    } else {
                        Err(FormatError::new(path, None, name, "expected a list"))
                    }
                })
            };
            let team = serde_json::from_value(parse(TEAM_KEYS, "team")?)
                .map_err(|e| FormatError::new(path, None, format!("{id}.team"), e.to_string()))?;
            let initial_backlog = serde_json::from_value(parse(BACKLOG_KEYS, "initial_backlog")?)
                .map_err(|e| FormatError::new(path, None, format!("{id}.initial_backlog"), e.to_string()))?;
            Ok(Dialogue {
                turns: import_turns(path, &id, &turns)?,
                id,
                team,
                initial_backlog,
            })
        })
        .collect()
}

fn import_turns(path: &Path, at: &str, records: &[&Value]) -> Result<Vec<TurnRecord>, FormatError> {
    let mut turns: Vec<TurnRecord> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let loc = |f: &str| format!("{at}[{i}].{f}");
        let obj = rec
            .as_object()
            .ok_or_else(|| FormatError::new(path, None, format!("{at}[{i}]"), "expected an object"))?;
        let user = field(obj, USER_KEYS)
            .map(value_text)
            .ok_or_else(|| FormatError::new(path, None, loc("user"), "missing"))?;
        let text = field(obj, TEXT_KEYS)
            .map(value_text)
            .ok_or_else(|| FormatError::new(path, None, loc("message"), "missing"))?;
        if user.trim_start_matches('@').eq_ignore_ascii_case(AGENT_HANDLE) {
            match turns.last_mut() {
                Some(prev) => prev.agent_outputs.push(text),
                None => tracing::debug!("agent message before the first human turn dropped"),
            }
            continue;
        }
        let time = match field(obj, TIME_KEYS) {
            Some(v) => normalize_time(&value_text(v)).map_err(|r| FormatError::new(path, None, loc("time"), r))?,
            None => format_wire_time(&chrono::DateTime::UNIX_EPOCH),
        };
        let labels = |keys: &[&str], name: &str| -> Result<Option<IntentMultiset>, FormatError> {
            field(obj, keys)
                .map(|v| parse_labels(v).map_err(|r| FormatError::new(path, None, loc(name), r)))
                .transpose()
        };
        let turn_index = field(obj, INDEX_KEYS)
            .and_then(|v| v.as_u64().or_else(|| v.as_str().and_then(|s| s.parse().ok())))
            .map_or(turns.len(), |v| v as usize);
        let mut outputs: Vec<String> = field(obj, OUTPUT_KEYS)
            .and_then(Value::as_array)
            .map(|a| a.iter().map(value_text).collect())
            .unwrap_or_default();
        if let Some(single) = obj
            .get("agent_output")
            .or_else(|| obj.get("response"))
            .filter(|v| v.is_string())
        {
            outputs.push(value_text(single));
        }
        turns.push(TurnRecord {
            turn_index,
            message: WireMessage::new(user, text, time),
            ground_truth: labels(GOLD_KEYS, "ground_truth")?,
            predicted: labels(PRED_KEYS, "predicted")?,
            agent_outputs: outputs,
            trace: None,
        });
    }
    let mut seen = BTreeSet::new();
    for t in &turns {
        if !seen.insert(t.turn_index) {
            return Err(FormatError::new(
                path,
                None,
                at,
                format!("duplicate turn index {}", t.turn_index),
            ));
        }
    }
    turns.sort_by_key(|t| t.turn_index);
    Ok(turns)
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Wire layout, ISO-8601 (with or without offset) or `YYYY-MM-DD HH:MM:SS`.
fn normalize_time(raw: &str) -> Result<String, String> {
    if parse_wire_time(raw).is_ok() {
        return Ok(raw.trim().to_string());
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw.trim()) {
        return Ok(format_wire_time(&dt.with_timezone(&chrono::Utc)));
    }
    for layout in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(raw.trim(), layout) {
            return Ok(format_wire_time(&naive.and_utc()));
        }
    }
    Err(format!("unrecognized timestamp `{raw}`"))
}

/// Reads a label bag from any of: `[{category, action}]`,
/// `[["NEW_TASK", "CREATE_TASK"]]`, `["(NEW_TASK, CREATE_TASK)"]`, or a
/// single one of those elements.
pub fn parse_labels(v: &Value) -> Result<IntentMultiset, String> {
    let items: Vec<&Value> = match v {
        Value::Array(items)
            if items.len() == 2
                && items.iter().all(|i| {
                    i.as_str()
                        .is_some_and(|s| s.parse::<MessageCategory>().is_ok() || s.parse::<ActionType>().is_ok())
                }) =>
        {
            vec![v]
        }
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    };
    items.into_iter().map(parse_tuple).collect()
}

fn parse_tuple(v: &Value) -> Result<IntentTuple, String> {
    let (cat, act) = match v {
        Value::Object(o) => (
            field(o, &["category", "message_category", "cat", "label_category"]).map(value_text),
            field(o, &["action", "action_type", "act", "label_action"]).map(value_text),
        ),
        Value::Array(pair) if pair.len() == 2 => (Some(value_text(&pair[0])), Some(value_text(&pair[1]))),
        Value::String(s) => {
            let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
            let mut parts = inner
                .split([',', '/', '|'])
                .map(|p| p.trim().trim_matches(['\'', '"']).to_string());
            (parts.next(), parts.next())
        }
        other => return Err(format!("unrecognized label `{other}`")),
    };
    let cat = cat.ok_or("label lacks a category")?;
    let act = act.ok_or("label lacks an action")?;
    Ok(IntentTuple::new(
        cat.parse().map_err(|e: crate::model::ModelError| e.to_string())?,
        act.parse().map_err(|e: crate::model::ModelError| e.to_string())?,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub dialogues: usize,
    pub turns: usize,
    /// Gold tuples, duplicates included.
    pub tuples: usize,
    pub unlabeled_turns: usize,
    pub supports: BTreeMap<IntentTuple, usize>,
}

pub fn dataset_stats(dialogues: &[Dialogue]) -> DatasetStats {
    let mut supports = BTreeMap::new();
    let (mut turns, mut tuples, mut unlabeled) = (0, 0, 0);
    for d in dialogues {
        for t in &d.turns {
            turns += 1;
            match &t.ground_truth {
                Some(gt) => {
                    tuples += gt.len();
                    for (tuple, n) in gt.iter() {
                        *supports.entry(*tuple).or_insert(0) += n as usize;
                    }
                }
                None => unlabeled += 1,
            }
        }
    }
    DatasetStats {
        dialogues: dialogues.len(),
        turns,
        tuples,
        unlabeled_turns: unlabeled,
        supports,
    }
}
