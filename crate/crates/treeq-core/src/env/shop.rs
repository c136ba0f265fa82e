//! shopworld: paged product search with a terminal buy.
//!
//! A task's catalog is generated deterministically from (task, seed). The
//! query result list is ordered by a generator-assigned relevance score the
//! agent never sees; the target product's rank is drawn so that with
//! probability `p_deep` it lands beyond page 0, which is what makes
//! pagination worth learning.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{
    Cursor, ElementRole, EnvState, InteractiveElement, Observation, ObservationKind, TaskSpec,
    Verb,
};
use crate::error::{Error, Result};
use crate::util::{fnv1a64_str, tokenize};

pub const CATEGORIES: &[&str] = &[
    "mug", "lamp", "clock", "vase", "kettle", "scarf", "wallet", "chair",
];
pub const COLORS: &[&str] = &["red", "blue", "green", "black", "white", "amber"];
pub const MATERIALS: &[&str] = &["ceramic", "steel", "wood", "glass", "cotton", "leather"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ShopConfig {
    /// Results shown per page.
    pub page_size: u32,
    /// Total products in a task's catalog.
    pub catalog_size: u32,
    /// Result lists are truncated to this many pages.
    pub max_pages: u32,
    /// Probability the target product ranks below page 0 of its query.
    pub p_deep: f64,
    /// Step budget per episode.
    pub horizon: u32,
}

impl Default for ShopConfig {
    fn default() -> Self {
        ShopConfig {
            page_size: 10,
            catalog_size: 50,
            max_pages: 5,
            p_deep: 0.7,
            horizon: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub idx: u32,
    pub attributes: BTreeMap<String, String>,
    /// Opaque ranking score; higher sorts earlier. Zero for products the
    /// generator considers off-topic for the task's canonical query.
    pub relevance: u32,
}

impl Product {
    pub fn label(&self) -> String {
        ["color", "material", "category"]
            .iter()
            .filter_map(|k| self.attributes.get(*k).cloned())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShopCatalog {
    pub products: Vec<Product>,
}

impl ShopCatalog {
    /// Deterministic catalog for (task, seed). Exactly one product carries
    /// the task's exact target attributes.
    pub fn generate(task: &TaskSpec, seed: u64, cfg: &ShopConfig) -> ShopCatalog {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ fnv1a64_str(&task.task_id) ^ 0x5a0c_97e1);
        let target = &task.target_attributes;
        let t_color = target.get("color").cloned().unwrap_or_default();
        let t_material = target.get("material").cloned().unwrap_or_default();
        let t_category = target.get("category").cloned().unwrap_or_default();

        let page = cfg.page_size.max(1);
        let cap = cfg.catalog_size.max(page + 1);
        let lo = (2 * page).min(cap);
        let n_results = rng.gen_range(lo..=cap) as usize;

        let deep = rng.gen_bool(cfg.p_deep.clamp(0.0, 1.0)) && n_results > page as usize;
        let target_rank = if deep {
            rng.gen_range(page as usize..n_results)
        } else {
            rng.gen_range(0..n_results.min(page as usize))
        };

        // In-category decoys share the category but never the exact
        // (color, material) pair, so the target stays unique.
        let mut ranked: Vec<BTreeMap<String, String>> = Vec::with_capacity(n_results);
        for _ in 0..n_results - 1 {
            loop {
                let c = COLORS[rng.gen_range(0..COLORS.len())];
                let m = MATERIALS[rng.gen_range(0..MATERIALS.len())];
                if c != t_color || m != t_material {
                    ranked.push(attrs(&t_category, c, m));
                    break;
                }
            }
        }
        ranked.insert(target_rank, target.clone());

        let mut products: Vec<Product> = ranked
            .into_iter()
            .enumerate()
            .map(|(pos, attributes)| Product {
                idx: pos as u32,
                attributes,
                relevance: (n_results - pos) as u32,
            })
            .collect();

        // Filler from other categories; relevance 0 keeps them behind every
        // in-category result when a query happens to match them too.
        for i in n_results..cfg.catalog_size as usize {
            let cat = loop {
                let c = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
                if c != t_category {
                    break c;
                }
            };
            let c = COLORS[rng.gen_range(0..COLORS.len())];
            let m = MATERIALS[rng.gen_range(0..MATERIALS.len())];
            products.push(Product {
                idx: i as u32,
                attributes: attrs(cat, c, m),
                relevance: 0,
            });
        }
        ShopCatalog { products }
    }

    /// Products matching the query (any token overlap with the product
    /// label), ordered by relevance then index, truncated to the page cap.
    pub fn query_results(&self, query: &str, cfg: &ShopConfig) -> Vec<&Product> {
        let q: Vec<String> = tokenize(query);
        let mut hits: Vec<&Product> = self
            .products
            .iter()
            .filter(|p| {
                let label = p.label();
                let toks = tokenize(&label);
                q.iter().any(|t| toks.contains(t))
            })
            .collect();
        hits.sort_by(|a, b| b.relevance.cmp(&a.relevance).then(a.idx.cmp(&b.idx)));
        hits.truncate((cfg.max_pages * cfg.page_size) as usize);
        hits
    }
}

fn attrs(category: &str, color: &str, material: &str) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("category".to_string(), category.to_string());
    m.insert("color".to_string(), color.to_string());
    m.insert("material".to_string(), material.to_string());
    m
}

/// One page of query results. Errors when `page` is outside the query's
/// page range (an empty result list has zero pages).
pub fn paginate<'a>(
    catalog: &'a ShopCatalog,
    query: &str,
    page: u32,
    cfg: &ShopConfig,
) -> Result<Vec<&'a Product>> {
    let results = catalog.query_results(query, cfg);
    let pages = page_count(results.len(), cfg);
    if page >= pages {
        return Err(Error::PageOutOfRange { page, pages });
    }
    let lo = (page * cfg.page_size) as usize;
    let hi = (lo + cfg.page_size as usize).min(results.len());
    Ok(results[lo..hi].to_vec())
}

pub fn page_count(n_results: usize, cfg: &ShopConfig) -> u32 {
    ((n_results as u32) + cfg.page_size - 1) / cfg.page_size
}

// ---------------------------------------------------------------------------
// Cursor and dynamics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "at")]
pub enum ShopCursor {
    Landing,
    Results { query: String, page: u32 },
    Item { query: String, page: u32, product_idx: u32 },
    Purchased { product_idx: u32 },
}

fn catalog_for(cfg: &ShopConfig, state: &EnvState) -> ShopCatalog {
    ShopCatalog::generate(&state.task, state.seed, cfg)
}

/// Applies a well-formed command to a shop state. Returns a banner message
/// when the command self-loops instead of transitioning.
pub(super) fn apply(
    cfg: &ShopConfig,
    state: &mut EnvState,
    cmd: &super::EnvCommand,
) -> Result<Option<String>> {
    let catalog = catalog_for(cfg, state);
    let cursor = match &state.cursor {
        Cursor::Shop(c) => c.clone(),
        Cursor::Book(_) => return Err(Error::InvalidTask("book cursor in shopworld".into())),
    };
    let mut banner = None;
    let next = match (&cursor, cmd.verb) {
        // The search box exists on the landing page only.
        (ShopCursor::Landing, Verb::Search) => {
            let query = cmd.payload.clone().unwrap_or_default();
            ShopCursor::Results { query, page: 0 }
        }
        (ShopCursor::Results { query, page }, Verb::Click) => {
            let target = cmd.target.as_deref().unwrap_or_default();
            let on_page = paginate(&catalog, query, *page, cfg).unwrap_or_default();
            match on_page
                .iter()
                .find(|p| format!("item_{}", p.idx) == target)
            {
                Some(p) => ShopCursor::Item {
                    query: query.clone(),
                    page: *page,
                    product_idx: p.idx,
                },
                None => {
                    banner = Some(format!("no such element: {target}"));
                    cursor.clone()
                }
            }
        }
        (ShopCursor::Results { query, page }, Verb::Next) => {
            let pages = page_count(catalog.query_results(query, cfg).len(), cfg);
            if page + 1 < pages {
                ShopCursor::Results { query: query.clone(), page: page + 1 }
            } else {
                banner = Some("already on the last page".to_string());
                cursor.clone()
            }
        }
        (ShopCursor::Results { query, page }, Verb::Prev) => {
            if *page > 0 {
                ShopCursor::Results { query: query.clone(), page: page - 1 }
            } else {
                banner = Some("already on the first page".to_string());
                cursor.clone()
            }
        }
        (ShopCursor::Results { .. }, Verb::Back) => ShopCursor::Landing,
        (ShopCursor::Item { query, page, .. }, Verb::Back) => {
            ShopCursor::Results { query: query.clone(), page: *page }
        }
        (ShopCursor::Item { product_idx, .. }, Verb::Buy) => {
            state.terminal = true;
            ShopCursor::Purchased { product_idx: *product_idx }
        }
        (_, Verb::AskUser) => {
            banner = Some("ok: the goal is unchanged".to_string());
            cursor.clone()
        }
        _ => {
            banner = Some(format!("cannot {} here", cmd.verb.name()));
            cursor.clone()
        }
    };
    state.cursor = Cursor::Shop(next);
    Ok(banner)
}

pub(super) fn render(cfg: &ShopConfig, state: &EnvState) -> Result<Observation> {
    let catalog = catalog_for(cfg, state);
    let cursor = match &state.cursor {
        Cursor::Shop(c) => c,
        Cursor::Book(_) => return Err(Error::InvalidTask("book cursor in shopworld".into())),
    };
    let (text, page_id, elements) = match cursor {
        ShopCursor::Landing => (
            "storefront".to_string(),
            "landing".to_string(),
            vec![InteractiveElement::new(
                "search",
                ElementRole::TextInput,
                "search products",
            )],
        ),
        ShopCursor::Results { query, page } => {
            let results = catalog.query_results(query, cfg);
            let pages = page_count(results.len(), cfg);
            let mut els = Vec::new();
            let text = if results.is_empty() {
                format!("no results for '{query}'")
            } else {
                let on_page = paginate(&catalog, query, *page, cfg)?;
                for p in &on_page {
                    els.push(InteractiveElement::new(
                        &format!("item_{}", p.idx),
                        ElementRole::Link,
                        p.label(),
                    ));
                }
                format!("results for '{query}' page {} of {pages}", page + 1)
            };
            if *page > 0 {
                els.push(InteractiveElement::new("prev", ElementRole::Button, "previous page"));
            }
            if page + 1 < pages {
                els.push(InteractiveElement::new("next", ElementRole::Button, "next page"));
            }
            els.push(InteractiveElement::new("back", ElementRole::Link, "back"));
            (text, format!("results:{page}"), els)
        }
        ShopCursor::Item { product_idx, .. } => {
            let p = catalog
                .products
                .get(*product_idx as usize)
                .ok_or_else(|| Error::InvalidTask(format!("no product {product_idx}")))?;
            let text = format!(
                "item: {} (category {}; color {}; material {})",
                p.label(),
                p.attributes.get("category").cloned().unwrap_or_default(),
                p.attributes.get("color").cloned().unwrap_or_default(),
                p.attributes.get("material").cloned().unwrap_or_default(),
            );
            let els = vec![
                InteractiveElement::new("buy", ElementRole::Button, p.label()),
                InteractiveElement::new("back", ElementRole::Link, "back"),
            ];
            (text, format!("item:{product_idx}"), els)
        }
        ShopCursor::Purchased { product_idx } => {
            let p = catalog
                .products
                .get(*product_idx as usize)
                .ok_or_else(|| Error::InvalidTask(format!("no product {product_idx}")))?;
            let mut els = vec![InteractiveElement::new(
                "banner_confirmed",
                ElementRole::Button,
                "order confirmed",
            )];
            for (k, v) in &p.attributes {
                els.push(InteractiveElement::new(
                    &format!("attr_{k}"),
                    ElementRole::Button,
                    format!("{k}={v}"),
                ));
            }
            ("order confirmed".to_string(), "confirmation".to_string(), els)
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
