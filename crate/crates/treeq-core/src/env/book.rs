//! bookworld: a staged restaurant reservation flow.
//!
//! Stages run search -> restaurant -> date/time -> party size -> seating ->
//! contact details, with the middle stages configurable. Minimum solutions
//! are ~14 steps under the default config, so credit assignment over long
//! horizons actually matters here. The final submit is terminal; success is
//! judged on date, time, party size, and contact fields only (restaurant
//! and seating preference are recorded but not judged).

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{
    Cursor, ElementRole, EnvState, InteractiveElement, Observation, ObservationKind, TaskSpec,
    Verb,
};
use crate::error::{Error, Result};
use crate::util::fnv1a64_str;

pub const RESTAURANTS: &[&str] = &[
    "verdi trattoria",
    "lotus garden",
    "cafe meridian",
    "the copper pot",
    "harbor house",
    "juniper and sage",
    "old mill tavern",
    "casa azul",
];
pub const DATES: &[&str] = &["may 22", "june 3", "june 14", "july 1", "july 19", "august 7"];
pub const TIMES: &[&str] = &["6:00 pm", "6:30 pm", "7:00 pm", "7:30 pm", "8:00 pm", "8:30 pm"];
pub const PARTIES: &[&str] = &["2", "4", "6"];
pub const SEATS: &[&str] = &["indoor", "outdoor", "bar"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BookConfig {
    pub n_restaurants: u32,
    pub restaurants_per_page: u32,
    pub n_dates: u32,
    pub n_times: u32,
    pub n_parties: u32,
    pub n_seats: u32,
    pub include_party: bool,
    pub include_seating: bool,
    /// 3 for name/email/phone, 1 for a single contact field.
    pub contact_fields: u32,
    pub horizon: u32,
}

impl Default for BookConfig {
    fn default() -> Self {
        BookConfig {
            n_restaurants: 4,
            restaurants_per_page: 2,
            n_dates: 3,
            n_times: 3,
            n_parties: 3,
            n_seats: 3,
            include_party: true,
            include_seating: true,
            contact_fields: 3,
            horizon: 30,
        }
    }
}

impl BookConfig {
    /// A small instance whose full state space the oracle can enumerate.
    pub fn reduced() -> Self {
        BookConfig {
            n_restaurants: 2,
            restaurants_per_page: 2,
            n_dates: 2,
            n_times: 2,
            n_parties: 2,
            n_seats: 2,
            include_party: false,
            include_seating: false,
            contact_fields: 1,
            horizon: 10,
        }
    }

    pub fn contact_field_names(&self) -> Vec<&'static str> {
        if self.contact_fields >= 3 {
            vec!["name", "email", "phone"]
        } else {
            vec!["name"]
        }
    }

    /// Stage page ids in visit order.
    pub fn stages(&self) -> Vec<&'static str> {
        let mut v = vec!["search", "restaurants", "datetime"];
        if self.include_party {
            v.push("party");
        }
        if self.include_seating {
            v.push("seating");
        }
        v.push("contact");
        v
    }
}

/// Per-task option lists, deterministic in (task, seed). The target value
/// for every stage is guaranteed to appear among the options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BookLayout {
    pub restaurants: Vec<String>,
    pub dates: Vec<String>,
    pub times: Vec<String>,
    pub parties: Vec<String>,
    pub seats: Vec<String>,
}

impl BookLayout {
    pub fn generate(task: &TaskSpec, seed: u64, cfg: &BookConfig) -> BookLayout {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ fnv1a64_str(&task.task_id) ^ 0x3b81_44d2);
        let t = &task.target_attributes;
        let pick = |rng: &mut ChaCha8Rng, pool: &[&str], target: Option<&String>, n: u32| {
            let mut opts: Vec<String> = Vec::new();
            if let Some(tv) = target {
                opts.push(tv.clone());
            }
            let mut rest: Vec<&&str> = pool
                .iter()
                .filter(|v| target.map_or(true, |t| t != **v))
                .collect();
            rest.shuffle(rng);
            for v in rest {
                if opts.len() >= n as usize {
                    break;
                }
                opts.push(v.to_string());
            }
            opts.shuffle(rng);
            opts
        };
        BookLayout {
            restaurants: pick(&mut rng, RESTAURANTS, t.get("restaurant"), cfg.n_restaurants),
            dates: pick(&mut rng, DATES, t.get("date"), cfg.n_dates),
            times: pick(&mut rng, TIMES, t.get("time"), cfg.n_times),
            parties: pick(&mut rng, PARTIES, t.get("party_size"), cfg.n_parties),
            seats: pick(&mut rng, SEATS, t.get("seating"), cfg.n_seats),
        }
    }

    pub fn restaurant_pages(&self, cfg: &BookConfig) -> u32 {
        let per = cfg.restaurants_per_page.max(1);
        ((self.restaurants.len() as u32) + per - 1) / per
    }
}

// ---------------------------------------------------------------------------
// Cursor and dynamics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookCursor {
    /// Index into `BookConfig::stages()`.
    pub stage: u32,
    pub restaurant_page: u32,
    /// Selections made so far, keyed like target attributes
    /// ("restaurant", "date", "time", "party_size", "seating", "contact_*").
    pub fields: BTreeMap<String, String>,
    pub submitted: bool,
}

impl BookCursor {
    pub fn start() -> Self {
        BookCursor {
            stage: 0,
            restaurant_page: 0,
            fields: BTreeMap::new(),
            submitted: false,
        }
    }
}

fn layout_for(cfg: &BookConfig, state: &EnvState) -> BookLayout {
    BookLayout::generate(&state.task, state.seed, cfg)
}

fn cursor_of(state: &EnvState) -> Result<BookCursor> {
    match &state.cursor {
        Cursor::Book(c) => Ok(c.clone()),
        Cursor::Shop(_) => Err(Error::InvalidTask("shop cursor in bookworld".into())),
    }
}

/// Stage requirements before "continue" advances past it.
fn stage_complete(stage: &str, cfg: &BookConfig, cur: &BookCursor) -> bool {
    match stage {
        "datetime" => cur.fields.contains_key("date") && cur.fields.contains_key("time"),
        "party" => cur.fields.contains_key("party_size"),
        "seating" => cur.fields.contains_key("seating"),
        "contact" => cfg
            .contact_field_names()
            .iter()
            .all(|f| cur.fields.contains_key(&format!("contact_{f}"))),
        _ => true,
    }
}

pub(super) fn apply(
    cfg: &BookConfig,
    state: &mut EnvState,
    cmd: &super::EnvCommand,
) -> Result<Option<String>> {
    let layout = layout_for(cfg, state);
    let stages = cfg.stages();
    let mut cur = cursor_of(state)?;
    let stage = stages[cur.stage as usize];
    let mut banner = None;

    match (stage, cmd.verb) {
        ("search", Verb::Search) => {
            cur.stage = 1;
            cur.restaurant_page = 0;
        }
        ("restaurants", Verb::Click) => {
            let target = cmd.target.as_deref().unwrap_or_default();
            let per = cfg.restaurants_per_page.max(1) as usize;
            let lo = cur.restaurant_page as usize * per;
            let hi = (lo + per).min(layout.restaurants.len());
            let hit = (lo..hi).find(|i| format!("rest_{i}") == target);
            match hit {
                Some(i) => {
                    cur.fields
                        .insert("restaurant".to_string(), layout.restaurants[i].clone());
                    cur.stage += 1;
                }
                None => banner = Some(format!("no such element: {target}")),
            }
        }
        ("restaurants", Verb::Next) => {
            if cur.restaurant_page + 1 < layout.restaurant_pages(cfg) {
                cur.restaurant_page += 1;
            } else {
                banner = Some("already on the last page".to_string());
            }
        }
        ("restaurants", Verb::Prev) => {
            if cur.restaurant_page > 0 {
                cur.restaurant_page -= 1;
            } else {
                banner = Some("already on the first page".to_string());
            }
        }
        ("datetime", Verb::Click) | ("party", Verb::Click) | ("seating", Verb::Click) => {
            let target = cmd.target.as_deref().unwrap_or_default();
            if target == "continue" {
                if stage_complete(stage, cfg, &cur) {
                    cur.stage += 1;
                } else {
                    banner = Some("selection incomplete".to_string());
                }
            } else if let Some((key, value)) = option_lookup(stage, &layout, target) {
                cur.fields.insert(key, value);
            } else {
                banner = Some(format!("no such element: {target}"));
            }
        }
        ("contact", Verb::Type) => {
            let target = cmd.target.as_deref().unwrap_or_default();
            let field = target.strip_prefix("field_").unwrap_or_default();
            if cfg.contact_field_names().contains(&field) {
                cur.fields.insert(
                    format!("contact_{field}"),
                    cmd.payload.clone().unwrap_or_default(),
                );
            } else {
                banner = Some(format!("no such element: {target}"));
            }
        }
        ("contact", Verb::Submit) => {
            let target = cmd.target.as_deref().unwrap_or_default();
            if target != "complete" {
                banner = Some(format!("no such element: {target}"));
            } else if stage_complete("contact", cfg, &cur) {
                cur.submitted = true;
                state.terminal = true;
            } else {
                banner = Some("contact details incomplete".to_string());
            }
        }
        (_, Verb::Back) => {
            if cur.stage > 0 {
                cur.stage -= 1;
            } else {
                banner = Some("cannot go back from here".to_string());
            }
        }
        (_, Verb::AskUser) => {
            banner = Some("ok: the goal is unchanged".to_string());
        }
        _ => {
            banner = Some(format!("cannot {} here", cmd.verb.name()));
        }
    }

    state.cursor = Cursor::Book(cur);
    Ok(banner)
}

/// Maps an option element id on a stage page to the (field key, value) it
/// selects.
fn option_lookup(stage: &str, layout: &BookLayout, target: &str) -> Option<(String, String)> {
    let take = |prefix: &str, key: &str, opts: &[String]| -> Option<(String, String)> {
        let i: usize = target.strip_prefix(prefix)?.parse().ok()?;
        opts.get(i).map(|v| (key.to_string(), v.clone()))
    };
    match stage {
        "datetime" => take("date_", "date", &layout.dates)
            .or_else(|| take("time_", "time", &layout.times)),
        "party" => take("party_", "party_size", &layout.parties),
        "seating" => take("seat_", "seating", &layout.seats),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn option_row(
    els: &mut Vec<InteractiveElement>,
    prefix: &str,
    opts: &[String],
    selected: Option<&String>,
    suffix: &str,
) {
    for (i, v) in opts.iter().enumerate() {
        let label = if Some(v) == selected {
            format!("{v}{suffix} *")
        } else {
            format!("{v}{suffix}")
        };
        els.push(InteractiveElement::new(
            &format!("{prefix}{i}"),
            ElementRole::Option,
            label,
        ));
    }
}

pub(super) fn render(cfg: &BookConfig, state: &EnvState) -> Result<Observation> {
    let layout = layout_for(cfg, state);
    let stages = cfg.stages();
    let cur = cursor_of(state)?;
    let sel = |k: &str| cur.fields.get(k);
    let shown = |k: &str| sel(k).cloned().unwrap_or_else(|| "-".to_string());

    let (text, page_id, elements) = if cur.submitted {
        let mut els = vec![InteractiveElement::new(
            "banner_confirmed",
            ElementRole::Button,
            "reservation confirmed",
        )];
        for (k, v) in &cur.fields {
            els.push(InteractiveElement::new(
                &format!("booked_{k}"),
                ElementRole::Button,
                format!("{k}={v}"),
            ));
        }
        (
            "reservation confirmed".to_string(),
            "confirmation".to_string(),
            els,
        )
    } else {
        let stage = stages[cur.stage as usize];
        match stage {
            "search" => (
                "restaurant search".to_string(),
                "search".to_string(),
                vec![InteractiveElement::new(
                    "search",
                    ElementRole::TextInput,
                    "search restaurants",
                )],
            ),
            "restaurants" => {
                let per = cfg.restaurants_per_page.max(1) as usize;
                let page = cur.restaurant_page;
                let pages = layout.restaurant_pages(cfg);
                let lo = page as usize * per;
                let hi = (lo + per).min(layout.restaurants.len());
                let mut els = Vec::new();
                for i in lo..hi {
                    els.push(InteractiveElement::new(
                        &format!("rest_{i}"),
                        ElementRole::Link,
                        layout.restaurants[i].clone(),
                    ));
                }
                if page > 0 {
                    els.push(InteractiveElement::new("prev", ElementRole::Button, "previous page"));
                }
                if page + 1 < pages {
                    els.push(InteractiveElement::new("next", ElementRole::Button, "next page"));
                }
                els.push(InteractiveElement::new("back", ElementRole::Link, "back"));
                (
                    format!("restaurants page {} of {pages}", page + 1),
                    format!("restaurants:{page}"),
                    els,
                )
            }
            "datetime" => {
                let mut els = Vec::new();
                option_row(&mut els, "date_", &layout.dates, sel("date"), "");
                option_row(&mut els, "time_", &layout.times, sel("time"), "");
                els.push(InteractiveElement::new("continue", ElementRole::Button, "continue"));
                els.push(InteractiveElement::new("back", ElementRole::Link, "back"));
                (
                    format!("choose date and time (date: {}; time: {})", shown("date"), shown("time")),
                    "datetime".to_string(),
                    els,
                )
            }
            "party" => {
                let mut els = Vec::new();
                option_row(&mut els, "party_", &layout.parties, sel("party_size"), " people");
                els.push(InteractiveElement::new("continue", ElementRole::Button, "continue"));
                els.push(InteractiveElement::new("back", ElementRole::Link, "back"));
                (
                    format!("choose party size (current: {})", shown("party_size")),
                    "party".to_string(),
                    els,
                )
            }
            "seating" => {
                let mut els = Vec::new();
                option_row(&mut els, "seat_", &layout.seats, sel("seating"), "");
                els.push(InteractiveElement::new("continue", ElementRole::Button, "continue"));
                els.push(InteractiveElement::new("back", ElementRole::Link, "back"));
                (
                    format!("choose seating (current: {})", shown("seating")),
                    "seating".to_string(),
                    els,
                )
            }
            "contact" => {
                let mut els = Vec::new();
                for f in cfg.contact_field_names() {
                    let key = format!("contact_{f}");
                    let label = match cur.fields.get(&key) {
                        Some(v) => format!("{f}: {v} *"),
                        None => f.to_string(),
                    };
                    els.push(InteractiveElement::new(
                        &format!("field_{f}"),
                        ElementRole::TextInput,
                        label,
                    ));
                }
                els.push(InteractiveElement::new(
                    "complete",
                    ElementRole::Submit,
                    "complete reservation",
                ));
                els.push(InteractiveElement::new("back", ElementRole::Link, "back"));
                ("contact details".to_string(), "contact".to_string(), els)
            }
            other => return Err(Error::InvalidTask(format!("unknown stage {other}"))),
        }
    };
    Ok(Observation {
        kind: ObservationKind::Page,
        text,
        page_id,
        elements,
        task_id: state.task.task_id.clone(),
    })
}

// ---------------------------------------------------------------------------
