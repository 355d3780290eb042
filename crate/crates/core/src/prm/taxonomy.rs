use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PrmError;

const DEFAULT_TAXONOMY: &str = include_str!("../../data/taxonomy.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Specification,
    Reasoning,
    Coordination,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Specification, Family::Reasoning, Family::Coordination];

    pub fn title(self) -> &'static str {
        match self {
            Family::Specification => "Specification errors (violations of task setup)",
            Family::Reasoning => "Reasoning errors (decision-making failures)",
            Family::Coordination => "Coordination errors (multi-step process management failures)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyCategory {
    pub id: String,
    pub family: Family,
    pub name: String,
    pub definition: String,
    pub recovery_action: String,
}

/// The twelve trajectory-level inefficiency categories, four per family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    categories: Vec<TaxonomyCategory>,
}

impl Taxonomy {
    pub const SIZE: usize = 12;
    pub const PER_FAMILY: usize = 4;

    pub fn new(categories: Vec<TaxonomyCategory>) -> Result<Self, PrmError> {
        if categories.len() != Self::SIZE {
            return Err(PrmError::Taxonomy(format!(
                "expected {} categories, found {}",
                Self::SIZE,
                categories.len()
            )));
        }
        for family in Family::ALL {
            let n = categories.iter().filter(|c| c.family == family).count();
            if n != Self::PER_FAMILY {
                return Err(PrmError::Taxonomy(format!("family {family:?} has {n} categories")));
            }
        }
        let mut ids: Vec<&str> = categories.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(PrmError::Taxonomy(format!("duplicate category id {}", w[0])));
        }
        Ok(Taxonomy { categories })
    }

    pub fn from_json(text: &str) -> Result<Self, PrmError> {
        let categories: Vec<TaxonomyCategory> =
            serde_json::from_str(text).map_err(|e| PrmError::Taxonomy(e.to_string()))?;
        Self::new(categories)
    }

    pub fn load(path: &Path) -> Result<Self, PrmError> {
        let text = fs::read_to_string(path).map_err(|e| PrmError::Taxonomy(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn categories(&self) -> &[TaxonomyCategory] {
        &self.categories
    }

    pub fn get(&self, id: &str) -> Option<&TaxonomyCategory> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Matches an id, or a display name case-insensitively.
    pub fn resolve(&self, token: &str) -> Option<&TaxonomyCategory> {
        let norm = normalize(token);
        self.categories.iter().find(|c| c.id == norm || normalize(&c.name) == norm)
    }

    /// Categories whose id or name appears in `text`.
    pub fn mentioned_in(&self, text: &str) -> Vec<&TaxonomyCategory> {
        let lower = text.to_lowercase();
        self.categories
            .iter()
            .filter(|c| lower.contains(&c.id) || lower.contains(&c.name.to_lowercase()))
            .collect()
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::from_json(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }
}

fn normalize(token: &str) -> String {
    token
        .trim()
        .trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c == '*')
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_taxonomy_shape() {
        let t = Taxonomy::default();
        assert_eq!(t.categories().len(), 12);
        for family in Family::ALL {
            assert_eq!(t.categories().iter().filter(|c| c.family == family).count(), 4);
        }
        assert!(t.get("step_repetition").is_some());
        assert!(t.get("termination_unawareness").unwrap().recovery_action.contains("submit"));
    }

    #[test]
    fn resolve_names_and_ids() {
        let t = Taxonomy::default();
        assert_eq!(t.resolve("Step Repetition").unwrap().id, "step_repetition");
        assert_eq!(t.resolve(" `task-derailment` ").unwrap().id, "task_derailment");
        assert!(t.resolve("looping").is_none());
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut cats = Taxonomy::default().categories().to_vec();
        cats.pop();
        assert!(Taxonomy::new(cats.clone()).is_err());
        let mut dup = Taxonomy::default().categories().to_vec();
        dup[1].id = dup[0].id.clone();
        assert!(Taxonomy::new(dup).is_err());
        let mut fam = Taxonomy::default().categories().to_vec();
        fam[0].family = Family::Reasoning;
        assert!(Taxonomy::new(fam).is_err());
    }
}
