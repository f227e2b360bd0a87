//! Parsing and validation of generations in the think / tool-call chat
//! template.
//!
//! A generation looks like
//!
//! ```text
//! <think>reasoning</think>
//! <tool_call>
//! {"name": "check_wordpress", "arguments": {"url": "https://example.com"}}
//! </tool_call>
//! ```
//!
//! or a think block followed by plain text. Tags are matched literally and
//! never nest.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::TypedValue;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid schema JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("function `{0}` is declared more than once")]
    DuplicateFunction(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(default)]
    pub description: String,
    #[serde(rename = "type", default)]
    pub type_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<TypedValue>,
}

impl ParamSpec {
    /// Parameters that declare a default may be omitted by a caller.
    pub fn is_optional(&self) -> bool {
        self.default.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, deserialize_with = "unique_params")]
    pub parameters: IndexMap<String, ParamSpec>,
}

/// The set of functions available to the model.
///
/// Serialized as a JSON array of function definitions. [`ToolSchema::from_json_str`]
/// also accepts the newline-separated objects of a `<tools>` block, with or
/// without the surrounding tags.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ToolSchema {
    functions: Vec<FunctionDef>,
}

impl ToolSchema {
    pub fn new(functions: Vec<FunctionDef>) -> Result<Self, SchemaError> {
        let mut seen = HashSet::new();
        for f in &functions {
            if !seen.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateFunction(f.name.clone()));
            }
        }
        Ok(ToolSchema { functions })
    }

    pub fn from_json_str(text: &str) -> Result<Self, SchemaError> {
        let mut body = text.trim();
        if let Some(inner) = body.strip_prefix("<tools>").and_then(|b| b.strip_suffix("</tools>")) {
            body = inner.trim();
        }
        let functions = if body.starts_with('[') {
            serde_json::from_str::<Vec<FunctionDef>>(body)?
        } else {
            serde_json::Deserializer::from_str(body)
                .into_iter::<FunctionDef>()
                .collect::<Result<Vec<_>, _>>()?
        };
        ToolSchema::new(functions)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, SchemaError> {
        match value {
            serde_json::Value::Array(_) => ToolSchema::new(serde_json::from_value(value)?),
            other => ToolSchema::new(vec![serde_json::from_value(other)?]),
        }
    }

    pub fn functions(&self) -> &[FunctionDef] {
        &self.functions
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }
}

impl<'de> Deserialize<'de> for ToolSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let functions = Vec::<FunctionDef>::deserialize(deserializer)?;
        ToolSchema::new(functions).map_err(de::Error::custom)
    }
}

fn unique_params<'de, D>(deserializer: D) -> Result<IndexMap<String, ParamSpec>, D::Error>
where
    D: Deserializer<'de>,
{
    struct ParamsVisitor;

    impl<'de> Visitor<'de> for ParamsVisitor {
        type Value = IndexMap<String, ParamSpec>;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a map of parameter specifications")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
            let mut map = IndexMap::new();
            while let Some(name) = access.next_key::<String>()? {
                if map.contains_key(&name) {
                    return Err(de::Error::custom(format!("duplicate parameter `{name}`")));
                }
                map.insert(name, access.next_value()?);
            }
            Ok(map)
        }
    }

    deserializer.deserialize_map(ParamsVisitor)
}

/// One function invocation extracted from a `<tool_call>` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: IndexMap<String, TypedValue>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>) -> Self {
        ToolCall { name: name.into(), arguments: IndexMap::new() }
    }

    pub fn arg(mut self, key: impl Into<String>, value: impl Into<TypedValue>) -> Self {
        self.arguments.insert(key.into(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tool call serialization is infallible")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    MissingThink,
    MultipleThink,
    UnclosedThink,
    StrayThinkClose,
    UnclosedToolCall,
    StrayToolCallClose,
    InvalidJson,
    NotAnObject,
    WrongKeys,
    NameNotString,
    ArgumentsNotObject,
    UnknownFunction,
    UndeclaredArgument,
}

impl ViolationKind {
    /// The format rule (1 to 5) this violation breaks.
    pub fn rule_id(self) -> u8 {
        use ViolationKind::*;
        match self {
            MissingThink | MultipleThink | UnclosedThink | StrayThinkClose => 1,
            UnclosedToolCall | StrayToolCallClose => 2,
            InvalidJson | NotAnObject | WrongKeys | NameNotString | ArgumentsNotObject => 3,
            UnknownFunction => 4,
            UndeclaredArgument => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        use ViolationKind::*;
        match self {
            MissingThink => "missing_think",
            MultipleThink => "multiple_think",
            UnclosedThink => "unclosed_think",
            StrayThinkClose => "stray_think_close",
            UnclosedToolCall => "unclosed_tool_call",
            StrayToolCallClose => "stray_tool_call_close",
            InvalidJson => "invalid_json",
            NotAnObject => "not_an_object",
            WrongKeys => "wrong_keys",
            NameNotString => "name_not_string",
            ArgumentsNotObject => "arguments_not_object",
            UnknownFunction => "unknown_function",
            UndeclaredArgument => "undeclared_argument",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatViolation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl FormatViolation {
    fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        FormatViolation { kind, detail: detail.into() }
    }

    pub fn rule_id(&self) -> u8 {
        self.kind.rule_id()
    }
}

impl fmt::Display for FormatViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {} ({}): {}", self.rule_id(), self.kind.as_str(), self.detail)
    }
}

impl Serialize for FormatViolation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("FormatViolation", 3)?;
        s.serialize_field("rule_id", &self.rule_id())?;
        s.serialize_field("kind", self.kind.as_str())?;
        s.serialize_field("detail", &self.detail)?;
        s.end()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedGeneration {
    pub think: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    pub response_text: String,
    pub raw_errors: Vec<FormatViolation>,
}

impl ParsedGeneration {
    /// Renders back to template text. For a generation parsed without
    /// violations, `parse_generation(&g.render()) == g`.
    pub fn render(&self) -> String {
        render_generation(self.think.as_deref(), &self.tool_calls, &self.response_text)
    }
}

pub fn render_generation(think: Option<&str>, calls: &[ToolCall], response: &str) -> String {
    let mut out = String::new();
    if let Some(t) = think {
        out.push_str(THINK_OPEN);
        out.push_str(t);
        out.push_str(THINK_CLOSE);
    }
    for call in calls {
        out.push('\n');
        out.push_str(TOOL_CALL_OPEN);
        out.push('\n');
        out.push_str(&call.to_json());
        out.push('\n');
        out.push_str(TOOL_CALL_CLOSE);
    }
    if !response.is_empty() {
        out.push('\n');
        out.push_str(response);
    }
    out
}

/// Splits a raw generation into think block, tool calls and free text.
///
/// Never fails: structural problems are recorded in `raw_errors`.
pub fn parse_generation(raw: &str) -> ParsedGeneration {
    let mut parsed = ParsedGeneration::default();
    let mut outside: Vec<&str> = Vec::new();
    let mut pairs = 0usize;
    let mut pos = 0usize;

    while let Some(rel) = raw[pos..].find(THINK_OPEN) {
        let open = pos + rel;
        outside.push(&raw[pos..open]);
        let body_start = open + THINK_OPEN.len();
        match raw[body_start..].find(THINK_CLOSE) {
            Some(rel_close) => {
                let content = &raw[body_start..body_start + rel_close];
                if content.contains(THINK_OPEN) {
                    parsed.raw_errors.push(FormatViolation::new(
                        ViolationKind::MultipleThink,
                        "nested <think> tag",
                    ));
                }
                pairs += 1;
                if parsed.think.is_none() {
                    parsed.think = Some(content.to_string());
                }
                pos = body_start + rel_close + THINK_CLOSE.len();
            }
            None => {
                parsed.raw_errors.push(FormatViolation::new(
                    ViolationKind::UnclosedThink,
                    format!("<think> at byte {open} is never closed"),
                ));
                outside.push(&raw[body_start..]);
                pos = raw.len();
            }
        }
    }
    outside.push(&raw[pos..]);

    let unclosed = parsed.raw_errors.iter().any(|v| v.kind == ViolationKind::UnclosedThink);
    if pairs > 1 {
        parsed.raw_errors.push(FormatViolation::new(
            ViolationKind::MultipleThink,
            format!("found {pairs} think pairs, expected exactly one"),
        ));
    } else if pairs == 0 && !unclosed {
        parsed.raw_errors.push(FormatViolation::new(
            ViolationKind::MissingThink,
            "no <think>...</think> pair",
        ));
    }

    let mut text = String::new();
    for segment in outside {
        scan_segment(segment, &mut parsed, &mut text);
    }
    parsed.response_text = text.trim().to_string();
    parsed
}

/// Extracts tool-call blocks from text that lies outside every think block.
fn scan_segment(segment: &str, parsed: &mut ParsedGeneration, text: &mut String) {
    let mut pos = 0usize;
    loop {
        let next = [TOOL_CALL_OPEN, TOOL_CALL_CLOSE, THINK_CLOSE]
            .into_iter()
            .filter_map(|tag| segment[pos..].find(tag).map(|i| (pos + i, tag)))
            .min_by_key(|&(i, _)| i);
        let Some((at, tag)) = next else {
            text.push_str(&segment[pos..]);
            return;
        };
        text.push_str(&segment[pos..at]);
        let after = at + tag.len();
        match tag {
            THINK_CLOSE => {
                parsed.raw_errors.push(FormatViolation::new(
                    ViolationKind::StrayThinkClose,
                    "</think> without a matching <think>",
                ));
                pos = after;
            }
            TOOL_CALL_CLOSE => {
                parsed.raw_errors.push(FormatViolation::new(
                    ViolationKind::StrayToolCallClose,
                    "</tool_call> without a matching <tool_call>",
                ));
                pos = after;
            }
            _ => {
                let close = segment[after..].find(TOOL_CALL_CLOSE).map(|i| after + i);
                let reopen = segment[after..].find(TOOL_CALL_OPEN).map(|i| after + i);
                match (close, reopen) {
                    (Some(c), r) if r.is_none_or(|r| c < r) => {
                        parse_call_body(&segment[after..c], parsed);
                        pos = c + TOOL_CALL_CLOSE.len();
                    }
                    (_, r) => {
                        parsed.raw_errors.push(FormatViolation::new(
                            ViolationKind::UnclosedToolCall,
                            "<tool_call> is never closed",
                        ));
                        match r {
                            Some(r) => pos = r,
                            None => return,
                        }
                    }
                }
            }
        }
    }
}

fn parse_call_body(body: &str, parsed: &mut ParsedGeneration) {
    let index = parsed.tool_calls.len();
    let value = match serde_json::from_str::<TypedValue>(body) {
        Ok(v) => v,
        Err(e) => {
            parsed.raw_errors.push(FormatViolation::new(
                ViolationKind::InvalidJson,
                format!("tool call block is not a single JSON value: {e}"),
            ));
            return;
        }
    };
    let TypedValue::Object(mut map) = value else {
        parsed.raw_errors.push(FormatViolation::new(
            ViolationKind::NotAnObject,
            format!("tool call block holds a {}, expected an object", value.kind_name()),
        ));
        return;
    };
    if map.len() != 2 || !map.contains_key("name") || !map.contains_key("arguments") {
        let keys: Vec<&str> = map.keys().map(String::as_str).collect();
        parsed.raw_errors.push(FormatViolation::new(
            ViolationKind::WrongKeys,
            format!("tool call object has keys {keys:?}, expected exactly [\"name\", \"arguments\"]"),
        ));
        return;
    }
    let name = match map.shift_remove("name") {
        Some(TypedValue::String(s)) => s,
        Some(other) => {
            parsed.raw_errors.push(FormatViolation::new(
                ViolationKind::NameNotString,
                format!("\"name\" is a {}", other.kind_name()),
            ));
            return;
        }
        None => unreachable!("key presence checked above"),
    };
    let arguments = match map.shift_remove("arguments") {
        Some(TypedValue::Object(args)) => args,
        Some(other) => {
            parsed.raw_errors.push(FormatViolation::new(
                ViolationKind::ArgumentsNotObject,
                format!("\"arguments\" of call #{index} is a {}", other.kind_name()),
            ));
            return;
        }
        None => unreachable!("key presence checked above"),
    };
    parsed.tool_calls.push(ToolCall { name, arguments });
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormatCheck {
    /// 1 when every rule holds, else 0.
    pub reward: u8,
    pub violations: Vec<FormatViolation>,
}

impl FormatCheck {
    pub fn is_valid(&self) -> bool {
        self.reward == 1
    }
}

/// Checks the five format rules; rules 1 to 3 come from parsing, rules 4 and
/// 5 from the schema.
pub fn validate_format(parsed: &ParsedGeneration, schema: &ToolSchema) -> FormatCheck {
    let mut violations = parsed.raw_errors.clone();
    violations.extend(schema_violations(&parsed.tool_calls, schema));
    FormatCheck { reward: u8::from(violations.is_empty()), violations }
}

fn schema_violations(calls: &[ToolCall], schema: &ToolSchema) -> Vec<FormatViolation> {
    let mut out = Vec::new();
    for (i, call) in calls.iter().enumerate() {
        let Some(def) = schema.function(&call.name) else {
            out.push(FormatViolation::new(
                ViolationKind::UnknownFunction,
                format!("call #{i} names undeclared function `{}`", call.name),
            ));
            continue;
        };
        let extra: Vec<&str> = call
            .arguments
            .keys()
            .filter(|k| !def.parameters.contains_key(k.as_str()))
            .map(String::as_str)
            .collect();
        if !extra.is_empty() {
            out.push(FormatViolation::new(
                ViolationKind::UndeclaredArgument,
                format!("call #{i} to `{}` passes undeclared arguments {extra:?}", call.name),
            ));
        }
    }
    out
}
