//! Per-operator byte, round and wall-time accounting.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::transport::Tag;

/// Operator categories of the cost breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    MatMul,
    Softmax,
    #[serde(rename = "GELU")]
    Gelu,
    LayerNorm,
    EleMul,
    Truncation,
    Other,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::MatMul,
        Category::Softmax,
        Category::Gelu,
        Category::LayerNorm,
        Category::EleMul,
        Category::Truncation,
        Category::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::MatMul => "MatMul",
            Category::Softmax => "Softmax",
            Category::Gelu => "GELU",
            Category::LayerNorm => "LayerNorm",
            Category::EleMul => "EleMul",
            Category::Truncation => "Truncation",
            Category::Other => "Other",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryCost {
    pub bytes_c2s: u64,
    pub bytes_s2c: u64,
    pub rounds: u64,
    pub wall_time_s: f64,
}

impl CategoryCost {
    pub fn bytes(&self) -> u64 {
        self.bytes_c2s + self.bytes_s2c
    }

    fn accumulate(&mut self, other: &CategoryCost) {
        self.bytes_c2s += other.bytes_c2s;
        self.bytes_s2c += other.bytes_s2c;
        self.rounds += other.rounds;
        self.wall_time_s += other.wall_time_s;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TagBytes {
    pub sent: u64,
    pub received: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub category: Category,
    #[serde(flatten)]
    pub cost: CategoryCost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagEntry {
    pub tag: String,
    #[serde(flatten)]
    pub bytes: TagBytes,
}

/// Cost summary of one session, as emitted to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub party: String,
    pub backend: String,
    pub insecure: bool,
    pub categories: Vec<CategoryEntry>,
    pub totals: CategoryCost,
    pub tags: Vec<TagEntry>,
}

impl CostReport {
    pub fn category(&self, cat: Category) -> &CategoryCost {
        &self
            .categories
            .iter()
            .find(|e| e.category == cat)
            .expect("every category is present")
            .cost
    }

    pub fn total_bytes(&self) -> u64 {
        self.totals.bytes()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mutable accumulators owned by a session.
#[derive(Clone, Debug, Default)]
pub(crate) struct CostLedger {
    pub categories: [CategoryCost; 7],
    pub tags: [TagBytes; 11],
}

impl CostLedger {
    pub fn add_bytes(&mut self, cat: Category, tag: Tag, bytes: u64, sent: bool, client: bool) {
        let c = &mut self.categories[cat.index()];
        if sent == client {
            c.bytes_c2s += bytes;
        } else {
            c.bytes_s2c += bytes;
        }
        let t = &mut self.tags[tag as usize - 1];
        if sent {
            t.sent += bytes;
        } else {
            t.received += bytes;
        }
    }

    pub fn add_round(&mut self, cat: Category) {
        self.categories[cat.index()].rounds += 1;
    }

    pub fn add_time(&mut self, cat: Category, d: Duration) {
        self.categories[cat.index()].wall_time_s += d.as_secs_f64();
    }

    pub fn report(&self, party: &str, backend: &str, insecure: bool) -> CostReport {
        let mut totals = CategoryCost::default();
        let categories = Category::ALL
            .iter()
            .map(|&c| {
                let cost = self.categories[c.index()].clone();
                totals.accumulate(&cost);
                CategoryEntry { category: c, cost }
            })
            .collect();
        let tags = Tag::ALL
            .iter()
            .map(|&t| TagEntry {
                tag: t.name().to_string(),
                bytes: self.tags[t as usize - 1].clone(),
            })
            .collect();
        CostReport {
            party: party.to_string(),
            backend: backend.to_string(),
            insecure,
            categories,
            totals,
            tags,
        }
    }
}
