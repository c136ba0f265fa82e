//! Simulated web environments.
//!
//! Two worlds share one interface: `shopworld`, a paged product search with
//! a terminal buy action, and `bookworld`, a multi-stage restaurant booking
//! flow. Both are deterministic given (task, seed), expose a compact
//! observation per step, and pay a sparse 0/1 reward only at episode end.
//!
//! `EnvState` is a plain value: cloning it snapshots the episode, and
//! stepping never mutates the input state. Tree search relies on that to
//! branch from arbitrary nodes without replaying prefixes.

mod book;
mod judge;
mod shop;
mod tasks;

pub use book::{BookConfig, BookCursor, BookLayout};
pub use judge::judge_outcome;
pub use shop::{paginate, Product, ShopCatalog, ShopConfig, ShopCursor};
pub use tasks::generate_task_set;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Worlds and tasks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum World {
    #[serde(rename = "shopworld")]
    Shop,
    #[serde(rename = "bookworld")]
    Book,
}

impl World {
    pub fn name(self) -> &'static str {
        match self {
            World::Shop => "shopworld",
            World::Book => "bookworld",
        }
    }

    pub fn parse(s: &str) -> Result<World> {
        match s {
            "shopworld" => Ok(World::Shop),
            "bookworld" => Ok(World::Book),
            other => Err(Error::UnknownWorld(other.to_string())),
        }
    }
}

impl std::fmt::Display for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A user goal. `target_attributes` fully determines the success predicate;
/// `goal_text` is the natural-language rendering shown in the first
/// observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub world: World,
    pub goal_text: String,
    pub target_attributes: BTreeMap<String, String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.is_empty() {
            return Err(Error::InvalidTask("empty task_id".into()));
        }
        if self.target_attributes.is_empty() {
            return Err(Error::InvalidTask(format!(
                "task {} has no target attributes",
                self.task_id
            )));
        }
        let required: &[&str] = match self.world {
            World::Shop => &["category", "color", "material"],
            World::Book => &["restaurant", "date", "time", "contact_name"],
        };
        for key in required {
            if !self.target_attributes.contains_key(*key) {
                return Err(Error::InvalidTask(format!(
                    "task {} is missing target attribute '{key}'",
                    self.task_id
                )));
            }
        }
        Ok(())
    }

    /// All target attribute values tokenized into one sorted, deduplicated
    /// set. Election of "how well does this label match the goal" runs
    /// against this set.
    pub fn goal_tokens(&self) -> Vec<String> {
        let mut toks: Vec<String> = self
            .target_attributes
            .values()
            .flat_map(|v| crate::util::tokenize(v))
            .collect();
        toks.sort();
        toks.dedup();
        toks
    }

    /// The query a competent user would type into the world's search box.
    pub fn canonical_query(&self) -> String {
        match self.world {
            World::Shop => {
                let attrs = &self.target_attributes;
                ["color", "material", "category"]
                    .iter()
                    .filter_map(|k| attrs.get(*k).cloned())
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            World::Book => self
                .target_attributes
                .get("restaurant")
                .cloned()
                .unwrap_or_default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    UserQuery,
    Page,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRole {
    Button,
    Link,
    TextInput,
    Option,
    Submit,
}

impl ElementRole {
    pub fn name(self) -> &'static str {
        match self {
            ElementRole::Button => "button",
            ElementRole::Link => "link",
            ElementRole::TextInput => "text_input",
            ElementRole::Option => "option",
            ElementRole::Submit => "submit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractiveElement {
    pub element_id: String,
    pub role: ElementRole,
    pub label: String,
}

impl InteractiveElement {
    pub fn new(id: &str, role: ElementRole, label: impl Into<String>) -> Self {
        InteractiveElement {
            element_id: id.to_string(),
            role,
            label: label.into(),
        }
    }

    /// Informational banners and confirmation read-outs are rendered as
    /// elements but are not targets the agent can act on.
    pub fn is_actionable(&self) -> bool {
        !(self.element_id.starts_with("banner_")
            || self.element_id.starts_with("attr_")
            || self.element_id.starts_with("booked_"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObservationKind,
    pub text: String,
    pub page_id: String,
    pub elements: Vec<InteractiveElement>,
    pub task_id: String,
}

impl Observation {
    /// Page family: "results:2" -> "results". Feature extraction keys on
    /// this so weights generalize across pages of the same kind.
    pub fn page_kind(&self) -> &str {
        self.page_id.split(':').next().unwrap_or(&self.page_id)
    }

    /// Byte-stable rendering: fixed field order, one line per element.
    /// Equal observations render identically; anything downstream that
    /// fingerprints or logs observations goes through this.
    pub fn canonical(&self) -> String {
        let kind = match self.kind {
            ObservationKind::UserQuery => "user_query",
            ObservationKind::Page => "page",
        };
        let mut out = format!("obs {kind} page={} task={}\n", self.page_id, self.task_id);
        out.push_str(&format!("text: {}\n", self.text));
        for el in &self.elements {
            out.push_str(&format!(
                "el {} {} {}\n",
                el.element_id,
                el.role.name(),
                el.label
            ));
        }
        out
    }

    pub fn element(&self, id: &str) -> Option<&InteractiveElement> {
        self.elements.iter().find(|e| e.element_id == id)
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Search,
    Click,
    Type,
    Next,
    Prev,
    Back,
    Buy,
    Submit,
    AskUser,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Search => "search",
            Verb::Click => "click",
            Verb::Type => "type",
            Verb::Next => "next",
            Verb::Prev => "prev",
            Verb::Back => "back",
            Verb::Buy => "buy",
            Verb::Submit => "submit",
            Verb::AskUser => "ask_user",
        }
    }
}

/// One environment command. Well-formedness is a property of the command
/// alone (see `validate`); whether it applies on the current page is the
/// environment's call at step time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvCommand {
    pub verb: Verb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl EnvCommand {
    pub fn search(query: impl Into<String>) -> Self {
        EnvCommand {
            verb: Verb::Search,
            target: None,
            payload: Some(query.into()),
        }
    }

    pub fn click(target: impl Into<String>) -> Self {
        EnvCommand {
            verb: Verb::Click,
            target: Some(target.into()),
            payload: None,
        }
    }

    pub fn type_into(target: impl Into<String>, payload: impl Into<String>) -> Self {
        EnvCommand {
            verb: Verb::Type,
            target: Some(target.into()),
            payload: Some(payload.into()),
        }
    }

    pub fn submit(target: impl Into<String>) -> Self {
        EnvCommand {
            verb: Verb::Submit,
            target: Some(target.into()),
            payload: None,
        }
    }

    pub fn bare(verb: Verb) -> Self {
        EnvCommand {
            verb,
            target: None,
            payload: None,
        }
    }

    /// Structural validity: Search and Type require a payload; Click, Type
    /// and Submit require a target; the rest take neither.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidCommand(format!("{}: {msg}", self.canonical())));
        let has_target = self.target.as_deref().map_or(false, |t| !t.is_empty());
        let has_payload = self.payload.is_some();
        match self.verb {
            Verb::Search => {
                if has_target {
                    return fail("search takes no target");
                }
                if !has_payload {
                    return fail("search requires a payload");
                }
            }
            Verb::Click => {
                if !has_target {
                    return fail("click requires a target");
                }
                if has_payload {
                    return fail("click takes no payload");
                }
            }
            Verb::Type => {
                if !has_target {
                    return fail("type requires a target");
                }
                if !has_payload {
                    return fail("type requires a payload");
                }
            }
            Verb::Submit => {
                if !has_target {
                    return fail("submit requires a target");
                }
                if has_payload {
                    return fail("submit takes no payload");
                }
            }
            Verb::Next | Verb::Prev | Verb::Back | Verb::Buy | Verb::AskUser => {
                if has_target || has_payload {
                    return fail("takes no target or payload");
                }
            }
        }
        Ok(())
    }

    /// Canonical text form: lowercase verb, target bare, payload bracketed.
    /// E.g. `search[red ceramic mug]`, `click item_3`, `type field_name[ada]`.
    pub fn canonical(&self) -> String {
        let mut s = self.verb.name().to_string();
        if let Some(t) = &self.target {
            s.push(' ');
            s.push_str(t);
        }
        if let Some(p) = &self.payload {
            s.push('[');
            s.push_str(p);
            s.push(']');
        }
        s
    }
}

impl std::fmt::Display for EnvCommand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.canonical())
    }
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cursor {
    Shop(ShopCursor),
    Book(BookCursor),
}

/// Full episode state. A value type: `clone` is a faithful snapshot and
/// `Env::step` consumes nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub world: World,
    pub task: TaskSpec,
    pub seed: u64,
    pub cursor: Cursor,
    pub step_count: u32,
    pub terminal: bool,
}

impl EnvState {
    /// Stable identity of the underlying situation, ignoring the step
    /// counter. Oracle search uses this for visited-state dedup.
    pub fn cursor_key(&self) -> String {
        format!("{}|{}", self.task.task_id, serde_json::to_string(&self.cursor).unwrap())
    }

    /// Identity including remaining budget; value functions depend on it.
    pub fn state_key(&self) -> String {
        format!("{}|t={}|term={}", self.cursor_key(), self.step_count, self.terminal)
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: u8,
    pub terminal: bool,
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub shop: ShopConfig,
    pub book: BookConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            shop: ShopConfig::default(),
            book: BookConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Env {
    pub config: EnvConfig,
}

impl Env {
    pub fn new(config: EnvConfig) -> Self {
        Env { config }
    }

    pub fn horizon(&self, world: World) -> u32 {
        match world {
            World::Shop => self.config.shop.horizon,
            World::Book => self.config.book.horizon,
        }
    }

    /// Starts an episode. The first observation carries the user goal along
    /// with the landing page. Identical (world, task, seed) triples yield
    /// identical episodes.
    pub fn reset(&self, world: World, task: &TaskSpec, seed: u64) -> Result<(EnvState, Observation)> {
        task.validate()?;
        if task.world != world {
            return Err(Error::InvalidTask(format!(
                "task {} belongs to {}, not {}",
                task.task_id, task.world, world
            )));
        }
        let cursor = match world {
            World::Shop => Cursor::Shop(ShopCursor::Landing),
            World::Book => Cursor::Book(BookCursor::start()),
        };
        let state = EnvState {
            world,
            task: task.clone(),
            seed,
            cursor,
            step_count: 0,
            terminal: false,
        };
        let mut obs = self.render(&state, None)?;
        obs.kind = ObservationKind::UserQuery;
        obs.text = format!("{} | {}", task.goal_text, obs.text);
        Ok((state, obs))
    }

    /// Applies one command. Malformed commands and stepping a terminal
    /// state are errors; well-formed commands that do not apply on the
    /// current page self-loop with an error banner. The returned reward is
    /// 1 exactly when the transition ends the episode in a state the judge
    /// accepts.
    pub fn step(&self, state: &EnvState, cmd: &EnvCommand) -> Result<StepOutcome> {
        if state.terminal {
            return Err(Error::Terminal);
        }
        cmd.validate()?;

        let mut next = state.clone();
        next.step_count += 1;
        let banner: Option<String> = match state.world {
            World::Shop => shop::apply(&self.config.shop, &mut next, cmd)?,
            World::Book => book::apply(&self.config.book, &mut next, cmd)?,
        };

        // Horizon exhaustion terminates the episode after the command
        // applies; a terminal command at the last step still counts.
        let horizon = self.horizon(state.world);
        let mut out_of_time = false;
        if !next.terminal && next.step_count >= horizon {
            next.terminal = true;
            out_of_time = true;
        }

        let reward = if next.terminal && self.success(&next) { 1 } else { 0 };

        let mut obs = self.render(&next, banner.as_deref())?;
        if out_of_time {
            obs.elements.push(InteractiveElement::new(
                "banner_timeout",
                ElementRole::Button,
                "session expired",
            ));
        }
        Ok(StepOutcome {
            terminal: next.terminal,
            state: next,
            observation: obs,
            reward,
        })
    }

    /// Renders the current page without stepping. Banners are transition
    /// artifacts, so a fresh render never carries one.
    pub fn observe(&self, state: &EnvState) -> Result<Observation> {
        self.render(state, None)
    }

    /// Ground-truth success predicate on a raw state. The observation-side
    /// `judge_outcome` must always agree with this on terminal states.
    pub fn success(&self, state: &EnvState) -> bool {
        judge::success_from_state(&self.catalog_ctx(), state)
    }

    fn render(&self, state: &EnvState, banner: Option<&str>) -> Result<Observation> {
        let mut obs = match state.world {
            World::Shop => shop::render(&self.config.shop, state)?,
            World::Book => book::render(&self.config.book, state)?,
        };
        if let Some(msg) = banner {
            let id = if msg.starts_with("ok:") { "banner_ack" } else { "banner_error" };
            obs.elements
                .push(InteractiveElement::new(id, ElementRole::Button, msg));
        }
        debug_assert!(!obs.elements.is_empty(), "every page renders elements");
        Ok(obs)
    }

    fn catalog_ctx(&self) -> CatalogCtx<'_> {
        CatalogCtx { config: &self.config }
    }
}

/// Internal handle the judge uses to regenerate world content (catalogs,
/// booking layouts) when checking a final state.
pub(crate) struct CatalogCtx<'a> {
    pub config: &'a EnvConfig,
}

// ---------------------------------------------------------------------------
// Affordances
// ---------------------------------------------------------------------------

/// Every command an agent could sensibly issue on this observation, in a
/// deterministic order. This is the action vocabulary for policies, search,
/// and the oracle alike: element-driven commands first (page order), then
/// `ask_user`, which is always available.
pub fn afforded_commands(task: &TaskSpec, obs: &Observation) -> Vec<EnvCommand> {
    let mut out = Vec::new();
    for el in &obs.elements {
        if !el.is_actionable() {
            continue;
        }
        match el.role {
            ElementRole::TextInput => {
                if el.element_id == "search" {
                    out.push(EnvCommand::search(task.canonical_query()));
                } else if el.element_id.starts_with("field_") {
                    for value in contact_values(task) {
                        out.push(EnvCommand::type_into(&el.element_id, value));
                    }
                }
            }
            ElementRole::Submit => out.push(EnvCommand::submit(&el.element_id)),
            ElementRole::Button | ElementRole::Link | ElementRole::Option => {
                match el.element_id.as_str() {
                    "next" => out.push(EnvCommand::bare(Verb::Next)),
                    "prev" => out.push(EnvCommand::bare(Verb::Prev)),
                    "back" => out.push(EnvCommand::bare(Verb::Back)),
                    "buy" => out.push(EnvCommand::bare(Verb::Buy)),
                    _ => out.push(EnvCommand::click(&el.element_id)),
                }
            }
        }
    }
    out.push(EnvCommand::bare(Verb::AskUser));
    out
}

/// Contact-ish values the agent can type, in a fixed order.
fn contact_values(task: &TaskSpec) -> Vec<String> {
    ["contact_name", "contact_email", "contact_phone"]
        .iter()
        .filter_map(|k| task.target_attributes.get(*k).cloned())
        .collect()
}

// ---------------------------------------------------------------------------
