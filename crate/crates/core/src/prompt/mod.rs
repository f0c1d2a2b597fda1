//! Prompt construction: the coarse-generation prompt (exemplar snippets plus
//! the constraint block) and the three refinement-stage prompts.
//!
//! Templates are plain text with `{{NAME}}` placeholders, one system and one
//! user file per `(family, stage)`. The built-in set is compiled in; a
//! directory laid out as `{family}/{stage}.sys.txt` / `.usr.txt` overrides it.

mod constraint;

pub use constraint::{
    constraint_digest, render_constraint, ConstraintSpec, Relation, RelationTriple, SizedElement, TaskFamily,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{to_html, Layout};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("at least one exemplar layout is required")]
    EmptyExemplars,
    #[error("template `{template}` has no binding for `{{{{{name}}}}}`")]
    UnboundPlaceholder { template: String, name: String },
    #[error("{0}")]
    UnknownTemplate(String),
    #[error("invalid constraint: {0}")]
    InvalidPayload(String),
    #[error("reading templates: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Refine1,
    Refine2,
    Refine3,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Coarse, Stage::Refine1, Stage::Refine2, Stage::Refine3];

    /// Refinement stage `t` in `1..=3`.
    pub fn refine(t: u8) -> Result<Stage, PromptError> {
        match t {
            1 => Ok(Stage::Refine1),
            2 => Ok(Stage::Refine2),
            3 => Ok(Stage::Refine3),
            _ => Err(PromptError::UnknownTemplate(format!("refinement stage {t} is outside 1..=3"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Refine1 => "1",
            Stage::Refine2 => "2",
            Stage::Refine3 => "3",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| PromptError::UnknownTemplate(format!("unknown stage `{s}` (expected coarse, 1, 2 or 3)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TemplateId {
    pub family: TaskFamily,
    pub stage: Stage,
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.family, self.stage)
    }
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([A-Za-z0-9_]+)\}\}").unwrap());

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub system_text: String,
    pub user_text: String,
    pub placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(id: TemplateId, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        let (system_text, user_text) = (system_text.into(), user_text.into());
        let placeholders = [&system_text, &user_text]
            .iter()
            .flat_map(|t| PLACEHOLDER.captures_iter(t).map(|c| c[1].to_string()))
            .collect();
        Self { id, system_text, user_text, placeholders }
    }

    /// Substitute every placeholder; any placeholder without a binding is an
    /// error. Bound values are inserted literally and never rescanned.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<(String, String), PromptError> {
        if let Some(name) = self.placeholders.iter().find(|p| !bindings.contains_key(*p)) {
            return Err(PromptError::UnboundPlaceholder { template: self.id.to_string(), name: name.clone() });
        }
        let fill = |text: &str| PLACEHOLDER.replace_all(text, |c: &Captures| bindings[&c[1]].clone()).into_owned();
        Ok((fill(&self.system_text), fill(&self.user_text)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template: String,
    pub exemplar_ids: Vec<String>,
    pub constraint_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub provenance: Provenance,
}

macro_rules! builtin {
    ($($family:literal),*) => {
        &[$(
            ($family, "coarse", include_str!(concat!("../../templates/", $family, "/coarse.sys.txt")), include_str!(concat!("../../templates/", $family, "/coarse.usr.txt"))),
            ($family, "1", include_str!(concat!("../../templates/", $family, "/1.sys.txt")), include_str!(concat!("../../templates/", $family, "/1.usr.txt"))),
            ($family, "2", include_str!(concat!("../../templates/", $family, "/2.sys.txt")), include_str!(concat!("../../templates/", $family, "/2.usr.txt"))),
            ($family, "3", include_str!(concat!("../../templates/", $family, "/3.sys.txt")), include_str!(concat!("../../templates/", $family, "/3.usr.txt"))),
        )*]
    };
}

const BUILTIN: &[(&str, &str, &str, &str)] =
    builtin!("content_aware", "gen_t", "gen_ts", "gen_r", "completion", "refinement", "text_to_layout");

static BUILTIN_CATALOG: LazyLock<PromptCatalog> = LazyLock::new(PromptCatalog::builtin);

/// Immutable set of templates keyed by `(family, stage)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptCatalog {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(family, stage, sys, usr)| {
                let id = TemplateId { family: family.parse().unwrap(), stage: stage.parse().unwrap() };
                (id, PromptTemplate::new(id, *sys, *usr))
            })
            .collect();
        Self { templates }
    }

    /// Built-in templates with any `{family}/{stage}.sys.txt` + `.usr.txt`
    /// pair found under `dir` substituted in.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut catalog = Self::builtin();
        for family in TaskFamily::ALL {
            for stage in Stage::ALL {
                let sys = dir.join(family.as_str()).join(format!("{stage}.sys.txt"));
                let usr = dir.join(family.as_str()).join(format!("{stage}.usr.txt"));
                match (sys.exists(), usr.exists()) {
                    (false, false) => continue,
                    (true, true) => {
                        let id = TemplateId { family, stage };
                        let t = PromptTemplate::new(id, std::fs::read_to_string(sys)?, std::fs::read_to_string(usr)?);
                        catalog.templates.insert(id, t);
                    }
                    _ => {
                        return Err(PromptError::UnknownTemplate(format!(
                            "template {family}/{stage} needs both .sys.txt and .usr.txt in {}",
                            dir.display()
                        )))
                    }
                }
            }
        }
        Ok(catalog)
    }

    pub fn get(&self, family: TaskFamily, stage: Stage) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(&TemplateId { family, stage })
            .ok_or_else(|| PromptError::UnknownTemplate(format!("no template for {family}/{stage}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    /// Coarse prompt: exemplars in the given (retrieval rank) order, then the
    /// constraint. Exemplars are emitted as they are; callers place them on
    /// the query canvas.
    pub fn build_coarse_prompt(&self, exemplars: &[Layout], constraint: &ConstraintSpec) -> Result<PromptBundle, PromptError> {
        let template = self.get(constraint.family(), Stage::Coarse)?;
        let bindings = base_bindings(exemplars, constraint)?;
        bundle(template, &bindings, exemplars, constraint)
    }

    /// Refinement prompt for stage `t`, given the layout the previous stage
    /// (or the coarse step) produced.
    pub fn build_stage_prompt(
        &self,
        stage: u8,
        family: TaskFamily,
        exemplars: &[Layout],
        current: &Layout,
        constraint: &ConstraintSpec,
    ) -> Result<PromptBundle, PromptError> {
        let template = self.get(family, Stage::refine(stage)?)?;
        let mut bindings = base_bindings(exemplars, constraint)?;
        let html = to_html(current).0;
        bindings.insert("CURRENT_HTML".into(), html.clone());
        bindings.insert(format!("STAGE_{}_HTML", stage - 1), html);
        bundle(template, &bindings, exemplars, constraint)
    }
}

fn base_bindings(exemplars: &[Layout], constraint: &ConstraintSpec) -> Result<BTreeMap<String, String>, PromptError> {
    if exemplars.is_empty() {
        return Err(PromptError::EmptyExemplars);
    }
    let snippets: Vec<String> = exemplars.iter().map(|l| to_html(l).0).collect();
    let joined = snippets.join("\n");
    let mut b = BTreeMap::new();
    b.insert("LEN_TOPK".to_string(), exemplars.len().to_string());
    b.insert("TOPK_HTML_STR".to_string(), joined.clone());
    b.insert("REFERENCES_STR".to_string(), joined);
    b.insert("CONSTRAINT".to_string(), render_constraint(constraint)?);
    if let ConstraintSpec::TextToLayout { text, .. } = constraint {
        b.insert("TEXT_DESCRIPTION".to_string(), text.clone());
    }
    Ok(b)
}

fn bundle(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
    exemplars: &[Layout],
    constraint: &ConstraintSpec,
) -> Result<PromptBundle, PromptError> {
    let (system, user) = template.render(bindings)?;
    Ok(PromptBundle {
        system,
        user,
        provenance: Provenance {
            template: template.id.to_string(),
            exemplar_ids: exemplars.iter().map(|l| l.id.clone()).collect(),
            constraint_digest: constraint_digest(constraint)?,
        },
    })
}

/// [`PromptCatalog::build_coarse_prompt`] on the built-in catalog.
pub fn build_coarse_prompt(exemplars: &[Layout], constraint: &ConstraintSpec) -> Result<PromptBundle, PromptError> {
    BUILTIN_CATALOG.build_coarse_prompt(exemplars, constraint)
}

/// [`PromptCatalog::build_stage_prompt`] on the built-in catalog.
pub fn build_stage_prompt(
    stage: u8,
    family: TaskFamily,
    exemplars: &[Layout],
    current: &Layout,
    constraint: &ConstraintSpec,
) -> Result<PromptBundle, PromptError> {
    BUILTIN_CATALOG.build_stage_prompt(stage, family, exemplars, current, constraint)
}
