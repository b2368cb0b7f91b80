//! Prompt templates for the generation agents, plus target-prompt
//! augmentation (step-by-step suffix, worked-example prefix).
//!
//! Templates use `{name}` placeholders; literal braces are written `{{` and
//! `}}`. A default template per dimension and agent role is compiled in from
//! `prompts/<dimension>/<role>.txt`, and the same layout can be loaded from
//! disk to override them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dimension, PromptMode};

/// Agent roles that consume templates. The target model receives inquiries
/// directly (plus augmentation) and has no template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    /// Drafts candidate inquiries.
    Inquiry,
    /// Accepts or rejects candidates.
    Judge,
    /// Produces reference answers for accepted inquiries.
    Reference,
}

impl AgentRole {
    pub const ALL: [AgentRole; 3] = [AgentRole::Inquiry, AgentRole::Judge, AgentRole::Reference];

    /// File name under a dimension's template directory.
    pub fn file_name(self) -> &'static str {
        match self {
            AgentRole::Inquiry => "inquiry.txt",
            AgentRole::Judge => "judge.txt",
            AgentRole::Reference => "reference.txt",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AgentRole::Inquiry => "inquiry",
            AgentRole::Judge => "judge",
            AgentRole::Reference => "reference",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("placeholder {{{name}}} has no binding")]
    UnboundPlaceholder { name: String },
    #[error("malformed template: {detail}")]
    MalformedTemplate { detail: String },
    #[error("no template for dimension {dimension}, role {role}")]
    MissingTemplate {
        dimension: Dimension,
        role: AgentRole,
    },
    #[error("in-context mode requires a demonstration, but none was available")]
    MissingDemonstration,
    #[error("prompt already carries the {mode} augmentation")]
    AlreadyAugmented { mode: PromptMode },
    #[error("failed to read template: {0}")]
    Io(#[from] std::io::Error),
}

/// Placeholder bindings for [`render`].
pub type Bindings = BTreeMap<String, String>;

/// One prompt template, tied to a dimension and agent role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub dimension: Dimension,
    pub role: AgentRole,
    pub text: String,
}

/// Substitutes `{name}` placeholders in a template.
///
/// `{{` and `}}` escape literal braces. Unknown placeholder names error;
/// unused bindings are fine. Substituted values are inserted literally and
/// not re-scanned.
pub fn render(template: &PromptTemplate, bindings: &Bindings) -> Result<String, PromptError> {
    render_str(&template.text, bindings)
}

/// [`render`] on a bare template string.
pub fn render_str(text: &str, bindings: &Bindings) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '{' => {
                if chars.peek() == Some(&'{') {
                    chars.next();
                    out.push('{');
                    continue;
                }
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) if c.is_ascii_alphanumeric() || c == '_' => name.push(c),
                        Some(c) => {
                            return Err(PromptError::MalformedTemplate {
                                detail: format!("unexpected {c:?} in placeholder after {{{name}"),
                            })
                        }
                        None => {
                            return Err(PromptError::MalformedTemplate {
                                detail: format!("unterminated placeholder {{{name}"),
                            })
                        }
                    }
                }
                if name.is_empty() {
                    return Err(PromptError::MalformedTemplate {
                        detail: "empty placeholder {}".into(),
                    });
                }
                match bindings.get(&name) {
                    Some(value) => out.push_str(value),
                    None => return Err(PromptError::UnboundPlaceholder { name }),
                }
            }
            '}' => {
                if chars.peek() == Some(&'}') {
                    chars.next();
                }
                out.push('}');
            }
            other => out.push(other),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Template set
// ---------------------------------------------------------------------------

/// Compiled-in default templates, one per (dimension, role) pair in use.
const EMBEDDED: &[(Dimension, AgentRole, &str)] = &[
    (
        Dimension::D1,
        AgentRole::Inquiry,
        include_str!("../prompts/d1/inquiry.txt"),
    ),
    (
        Dimension::D1,
        AgentRole::Judge,
        include_str!("../prompts/d1/judge.txt"),
    ),
    (
        Dimension::D3,
        AgentRole::Inquiry,
        include_str!("../prompts/d3/inquiry.txt"),
    ),
    (
        Dimension::D3,
        AgentRole::Judge,
        include_str!("../prompts/d3/judge.txt"),
    ),
    (
        Dimension::D4,
        AgentRole::Inquiry,
        include_str!("../prompts/d4/inquiry.txt"),
    ),
    (
        Dimension::D4,
        AgentRole::Judge,
        include_str!("../prompts/d4/judge.txt"),
    ),
    (
        Dimension::D5,
        AgentRole::Inquiry,
        include_str!("../prompts/d5/inquiry.txt"),
    ),
    (
        Dimension::D5,
        AgentRole::Judge,
        include_str!("../prompts/d5/judge.txt"),
    ),
    (
        Dimension::D5,
        AgentRole::Reference,
        include_str!("../prompts/d5/reference.txt"),
    ),
    (
        Dimension::D6,
        AgentRole::Inquiry,
        include_str!("../prompts/d6/inquiry.txt"),
    ),
    (
        Dimension::D6,
        AgentRole::Judge,
        include_str!("../prompts/d6/judge.txt"),
    ),
    (
        Dimension::D6,
        AgentRole::Reference,
        include_str!("../prompts/d6/reference.txt"),
    ),
    (
        Dimension::D7,
        AgentRole::Inquiry,
        include_str!("../prompts/d7/inquiry.txt"),
    ),
    (
        Dimension::D7,
        AgentRole::Judge,
        include_str!("../prompts/d7/judge.txt"),
    ),
    (
        Dimension::D7,
        AgentRole::Reference,
        include_str!("../prompts/d7/reference.txt"),
    ),
    (
        Dimension::D8,
        AgentRole::Inquiry,
        include_str!("../prompts/d8/inquiry.txt"),
    ),
    (
        Dimension::D8,
        AgentRole::Judge,
        include_str!("../prompts/d8/judge.txt"),
    ),
    (
        Dimension::D8,
        AgentRole::Reference,
        include_str!("../prompts/d8/reference.txt"),
    ),
    (
        Dimension::D9,
        AgentRole::Inquiry,
        include_str!("../prompts/d9/inquiry.txt"),
    ),
    (
        Dimension::D9,
        AgentRole::Judge,
        include_str!("../prompts/d9/judge.txt"),
    ),
];

/// The (dimension, role) pairs a complete template set must cover: inquiry
/// and judge for every agent-generated dimension (D2 is rule-based and needs
/// neither), plus reference for the dimensions whose reference answers are
/// model-generated (D5–D8).
pub fn expected_pairs() -> Vec<(Dimension, AgentRole)> {
    let mut pairs = Vec::new();
    for dim in Dimension::ALL {
        if dim == Dimension::D2 {
            continue;
        }
        pairs.push((dim, AgentRole::Inquiry));
        pairs.push((dim, AgentRole::Judge));
        if matches!(
            dim,
            Dimension::D5 | Dimension::D6 | Dimension::D7 | Dimension::D8
        ) {
            pairs.push((dim, AgentRole::Reference));
        }
    }
    pairs
}

/// A complete set of agent templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<(Dimension, AgentRole), PromptTemplate>,
}

impl TemplateSet {
    /// The compiled-in defaults.
    pub fn embedded() -> TemplateSet {
        let templates = EMBEDDED
            .iter()
            .map(|&(dimension, role, text)| {
                (
                    (dimension, role),
                    PromptTemplate {
                        dimension,
                        role,
                        text: text.to_string(),
                    },
                )
            })
            .collect();
        TemplateSet { templates }
    }

    /// Loads templates from `dir/<dimension>/<role>.txt` (e.g.
    /// `dir/d5/reference.txt`). Every pair from [`expected_pairs`] must be
    /// present.
    pub fn from_dir(dir: &Path) -> Result<TemplateSet, PromptError> {
        let mut templates = BTreeMap::new();
        for (dimension, role) in expected_pairs() {
            let path = dir
                .join(format!("d{}", dimension.index()))
                .join(role.file_name());
            if !path.is_file() {
                return Err(PromptError::MissingTemplate { dimension, role });
            }
            let text = std::fs::read_to_string(&path)?;
            templates.insert(
                (dimension, role),
                PromptTemplate {
                    dimension,
                    role,
                    text,
                },
            );
        }
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, dimension: Dimension, role: AgentRole) -> Option<&PromptTemplate> {
        self.templates.get(&(dimension, role))
    }

    /// Like [`TemplateSet::get`], erroring when absent.
    pub fn require(
        &self,
        dimension: Dimension,
        role: AgentRole,
    ) -> Result<&PromptTemplate, PromptError> {
        self.get(dimension, role)
            .ok_or(PromptError::MissingTemplate { dimension, role })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Target-prompt augmentation
// ---------------------------------------------------------------------------

/// Suffix appended in [`PromptMode::Cot`]. Its first sentence doubles as the
/// marker that detects an already-augmented prompt.
pub const COT_SUFFIX: &str =
    "\n\nLet's think step by step, then state the final answer on the last line.";

/// Header prepended in [`PromptMode::Icl`]; also the double-augmentation
/// marker for that mode.
pub const ICL_HEADER: &str = "Here is a worked example:";

/// A worked example for in-context-learning prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub answer: String,
}

/// Wraps an inquiry for the target model according to the prompt mode.
///
/// `Plain` passes the text through; `Cot` appends [`COT_SUFFIX`]; `Icl`
/// prepends one demonstration. Augmenting text that already carries the
/// mode's marker errors, so the same prompt cannot be augmented twice.
pub fn augment(
    inquiry: &str,
    mode: PromptMode,
    demonstration: Option<&Demonstration>,
) -> Result<String, PromptError> {
    match mode {
        PromptMode::Plain => Ok(inquiry.to_string()),
        PromptMode::Cot => {
            let marker = COT_SUFFIX.trim_start();
            if inquiry.contains(marker) {
                return Err(PromptError::AlreadyAugmented { mode });
            }
            Ok(format!("{inquiry}{COT_SUFFIX}"))
        }
        PromptMode::Icl => {
            if inquiry.contains(ICL_HEADER) {
                return Err(PromptError::AlreadyAugmented { mode });
            }
            let demo = demonstration.ok_or(PromptError::MissingDemonstration)?;
            Ok(format!(
                "{ICL_HEADER}\nQuestion: {}\nAnswer: {}\n\nNow solve this problem:\nQuestion: {}",
                demo.question, demo.answer, inquiry
            ))
        }
    }
}
