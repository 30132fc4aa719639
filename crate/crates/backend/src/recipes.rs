//! Recipe catalog and suggestions from current counts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

/// Recipe name to required quantity per class.
pub type Catalog = BTreeMap<String, BTreeMap<String, u32>>;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("reading recipe catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing recipe catalog {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

pub fn load_catalog(path: &Path) -> Result<Catalog, CatalogError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: display.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CatalogError::Parse {
        path: display,
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Recipe {
    pub name: String,
    pub ingredients: BTreeMap<String, u32>,
}

/// Recipes whose every requirement is covered by `counts`, most distinct
/// ingredients first, ties by name.
pub fn suggest_recipes(counts: &BTreeMap<String, u32>, catalog: &Catalog) -> Vec<Recipe> {
    let mut out: Vec<Recipe> = catalog
        .iter()
        .filter(|(_, needs)| {
            needs
                .iter()
                .all(|(class, &qty)| counts.get(class).copied().unwrap_or(0) >= qty)
        })
        .map(|(name, needs)| Recipe {
            name: name.clone(),
            ingredients: needs.clone(),
        })
        .collect();
    out.sort_by(|a, b| {
        let distinct = |r: &Recipe| r.ingredients.values().filter(|&&q| q > 0).count();
        distinct(b).cmp(&distinct(a)).then_with(|| a.name.cmp(&b.name))
    });
    out
}
