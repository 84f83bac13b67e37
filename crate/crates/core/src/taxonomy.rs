//! Brand / series / character hierarchy for scope-bearing erasure targets.
//!
//! Characters are the unit concepts and receive `ConceptId`s in file
//! order; the concept scope of any node is the number of unit concepts
//! beneath it. The loader validates that the rows describe a tree: a name
//! may repeat across rows only as the same node under the same parent,
//! and names are unique across levels so lookups by name are unambiguous.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::attention::ConceptId;
use crate::error::{Error, Result};
use crate::world::ConceptWorld;

/// Where a name points inside the taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Brand(usize),
    Series(usize),
    Character(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Brand {
    name: String,
    series: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Series {
    name: String,
    brand: usize,
    characters: Vec<ConceptId>,
}

#[derive(Debug, Clone, PartialEq)]
struct Character {
    name: String,
    series: usize,
}

/// A validated brand → series → character tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    brands: Vec<Brand>,
    series: Vec<Series>,
    characters: Vec<Character>,
    by_name: HashMap<String, Node>,
}

/// Hierarchy level whose nodes can be bucketed or enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Series,
    Brand,
}

/// Nodes at one level split by the empirical tertiles of concept scope.
#[derive(Debug, Clone, PartialEq)]
pub struct TertileBuckets {
    pub small: Vec<String>,
    pub medium: Vec<String>,
    pub large: Vec<String>,
}

/// Parses and validates taxonomy CSV with header `brand,series,character`.
pub fn load_taxonomy(csv_text: &str) -> Result<Taxonomy> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();
    let want = ["brand", "series", "character"];
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(Error::Parse {
            line: 1,
            reason: format!("header must be brand,series,character, got {headers:?}"),
        });
    }
    let mut tax = Taxonomy {
        brands: Vec::new(),
        series: Vec::new(),
        characters: Vec::new(),
        by_name: HashMap::new(),
    };
    let mut n_rows = 0usize;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 3 || record.iter().any(str::is_empty) {
            return Err(Error::Parse {
                line,
                reason: format!("expected 3 non-empty fields, got {record:?}"),
            });
        }
        tax.insert_row(line, &record[0], &record[1], &record[2])?;
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Parse { line: 1, reason: "taxonomy has no character rows".into() });
    }
    Ok(tax)
}

impl Taxonomy {
    fn insert_row(&mut self, line: usize, brand: &str, series: &str, character: &str) -> Result<()> {
        let b = match self.by_name.get(brand) {
            None => {
                let idx = self.brands.len();
                self.brands.push(Brand { name: brand.into(), series: Vec::new() });
                self.by_name.insert(brand.into(), Node::Brand(idx));
                idx
            }
            Some(Node::Brand(idx)) => *idx,
            Some(other) => {
                return Err(Error::HierarchyViolation {
                    line,
                    name: brand.into(),
                    existing: self.parent_of(*other),
                })
            }
        };
        let s = match self.by_name.get(series) {
            None => {
                let idx = self.series.len();
                self.series.push(Series { name: series.into(), brand: b, characters: Vec::new() });
                self.brands[b].series.push(idx);
                self.by_name.insert(series.into(), Node::Series(idx));
                idx
            }
            Some(Node::Series(idx)) if self.series[*idx].brand == b => *idx,
            Some(other) => {
                return Err(Error::HierarchyViolation {
                    line,
                    name: series.into(),
                    existing: self.parent_of(*other),
                })
            }
        };
        match self.by_name.get(character) {
            None => {
                let id = self.characters.len();
                self.characters.push(Character { name: character.into(), series: s });
                self.series[s].characters.push(id);
                self.by_name.insert(character.into(), Node::Character(id));
                Ok(())
            }
            Some(Node::Character(id)) if self.characters[*id].series == s => {
                Err(Error::DuplicateConcept { line, name: character.into() })
            }
            Some(other) => Err(Error::HierarchyViolation {
                line,
                name: character.into(),
                existing: self.parent_of(*other),
            }),
        }
    }

    // Human-readable owner of an already-registered name.
    fn parent_of(&self, node: Node) -> String {
        match node {
            Node::Brand(_) => "the brand level".into(),
            Node::Series(i) => format!("brand {:?}", self.brands[self.series[i].brand].name),
            Node::Character(i) => {
                format!("series {:?}", self.series[self.characters[i].series].name)
            }
        }
    }

    pub fn n_brands(&self) -> usize {
        self.brands.len()
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    /// Unit-concept count; character ids equal their file order.
    pub fn n_characters(&self) -> usize {
        self.characters.len()
    }

    /// Node names at `level`, in first-appearance order.
    pub fn names_at(&self, level: Level) -> Vec<&str> {
        match level {
            Level::Brand => self.brands.iter().map(|b| b.name.as_str()).collect(),
            Level::Series => self.series.iter().map(|s| s.name.as_str()).collect(),
        }
    }

    /// The character name holding `id`.
    pub fn character_name(&self, id: ConceptId) -> Result<&str> {
        self.characters
            .get(id)
            .map(|c| c.name.as_str())
            .ok_or(Error::UnknownConcept { id, n: self.characters.len() })
    }

    /// Unit concepts beneath `name` (a character names itself).
    pub fn characters_under(&self, name: &str) -> Result<Vec<ConceptId>> {
        match self.by_name.get(name) {
            Some(Node::Character(id)) => Ok(vec![*id]),
            Some(Node::Series(i)) => Ok(self.series[*i].characters.clone()),
            Some(Node::Brand(i)) => Ok(self.brands[*i]
                .series
                .iter()
                .flat_map(|&s| self.series[s].characters.iter().copied())
                .collect()),
            None => Err(Error::UnknownNode { name: name.into() }),
        }
    }

    /// Number of unit concepts `name` subsumes.
    pub fn concept_scope(&self, name: &str) -> Result<usize> {
        Ok(self.characters_under(name)?.len())
    }

    /// Serializes back to loader-compatible CSV, rows in ConceptId order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("brand,series,character\n");
        for ch in &self.characters {
            let s = &self.series[ch.series];
            let b = &self.brands[s.brand];
            let _ = writeln!(out, "{},{},{}", b.name, s.name, ch.name);
        }
        out
    }
}

/// Splits the nodes at `level` into scope tertiles: stable ascending sort
/// by scope (file order breaks ties), bucket sizes differing by at most
/// one with earlier buckets taking the remainder.
pub fn tertile_buckets(tax: &Taxonomy, level: Level) -> Result<TertileBuckets> {
    let names = tax.names_at(level);
    if names.len() < 3 {
        return Err(Error::InvalidRequest {
            reason: format!("tertile split needs at least 3 nodes, got {}", names.len()),
        });
    }
    let mut scoped: Vec<(&str, usize)> =
        names.iter().map(|&n| (n, tax.concept_scope(n).expect("listed node"))).collect();
    scoped.sort_by_key(|&(_, scope)| scope);
    let n = scoped.len();
    let sizes = [n / 3 + usize::from(n % 3 > 0), n / 3 + usize::from(n % 3 > 1), n / 3];
    let mut it = scoped.into_iter().map(|(name, _)| name.to_string());
    Ok(TertileBuckets {
        small: it.by_ref().take(sizes[0]).collect(),
        medium: it.by_ref().take(sizes[1]).collect(),
        large: it.take(sizes[2]).collect(),
    })
}

/// Built-in taxonomy for the toy world: one brand per cluster, one series
/// per adjacent concept pair, characters named `c0..` in id order.
pub fn toy_taxonomy(world: &ConceptWorld) -> Result<Taxonomy> {
    let mut out = String::from("brand,series,character\n");
    for c in 0..world.n_concepts() {
        let _ = writeln!(out, "brand{},series{},c{}", world.cluster(c)?, c / 2, c);
    }
    load_taxonomy(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "brand,series,character\n\
                       acme,alpha,a1\n\
                       acme,alpha,a2\n\
                       acme,alpha,a3\n\
                       acme,beta,b1\n\
                       zenith,gamma,g1\n\
                       zenith,gamma,g2\n";

    #[test]
    fn toy_csv_counts_and_scopes() {
        let tax = load_taxonomy(TOY).unwrap();
        assert_eq!(tax.n_brands(), 2);
        assert_eq!(tax.n_series(), 3);
        assert_eq!(tax.n_characters(), 6);
        assert_eq!(tax.concept_scope("acme").unwrap(), 4);
        assert_eq!(tax.concept_scope("zenith").unwrap(), 2);
        assert_eq!(tax.concept_scope("alpha").unwrap(), 3);
        assert_eq!(tax.concept_scope("b1").unwrap(), 1);
        // ConceptIds follow file order.
        assert_eq!(tax.character_name(0).unwrap(), "a1");
        assert_eq!(tax.character_name(5).unwrap(), "g2");
        assert_eq!(tax.characters_under("acme").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(tax.characters_under("gamma").unwrap(), vec![4, 5]);
        assert_eq!(tax.characters_under("g1").unwrap(), vec![4]);
        assert!(matches!(
            tax.characters_under("nobody"),
            Err(Error::UnknownNode { name }) if name == "nobody"
        ));
    }

    #[test]
    fn round_trips_through_csv() {
        let tax = load_taxonomy(TOY).unwrap();
        let again = load_taxonomy(&tax.to_csv()).unwrap();
        assert_eq!(tax, again);
    }

    #[test]
    fn duplicate_character_in_same_series_is_rejected() {
        let text = "brand,series,character\nacme,alpha,a1\nacme,alpha,a1\n";
        assert!(matches!(
            load_taxonomy(text),
            Err(Error::DuplicateConcept { line: 3, name }) if name == "a1"
        ));
    }

    #[test]
    fn reparenting_is_a_hierarchy_violation() {
        let char_moved = "brand,series,character\nacme,alpha,a1\nacme,beta,a1\n";
        assert!(matches!(
            load_taxonomy(char_moved),
            Err(Error::HierarchyViolation { line: 3, name, existing })
                if name == "a1" && existing.contains("alpha")
        ));
        let series_moved = "brand,series,character\nacme,alpha,a1\nzenith,alpha,a2\n";
        assert!(matches!(
            load_taxonomy(series_moved),
            Err(Error::HierarchyViolation { line: 3, name, existing })
                if name == "alpha" && existing.contains("acme")
        ));
        let cross_level = "brand,series,character\nacme,alpha,a1\nacme,a1,x\n";
        assert!(matches!(
            load_taxonomy(cross_level),
            Err(Error::HierarchyViolation { line: 3, name, .. }) if name == "a1"
        ));
    }

    #[test]
    fn malformed_rows_carry_line_numbers() {
        let missing = "brand,series,character\nacme,alpha,a1\nacme,alpha\n";
        assert!(matches!(load_taxonomy(missing), Err(Error::Parse { line: 3, .. })));
        let empty_field = "brand,series,character\nacme,,a1\n";
        assert!(matches!(load_taxonomy(empty_field), Err(Error::Parse { line: 2, .. })));
        let bad_header = "make,model,year\nacme,alpha,a1\n";
        assert!(matches!(load_taxonomy(bad_header), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load_taxonomy(""), Err(Error::Parse { .. })));
        assert!(matches!(
            load_taxonomy("brand,series,character\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn tertiles_split_scopes_with_stable_ties() {
        let tax = load_taxonomy(TOY).unwrap();
        // Series scopes: alpha 3, beta 1, gamma 2 → one per bucket.
        let buckets = tertile_buckets(&tax, Level::Series).unwrap();
        assert_eq!(buckets.small, vec!["beta"]);
        assert_eq!(buckets.medium, vec!["gamma"]);
        assert_eq!(buckets.large, vec!["alpha"]);
        assert!(tertile_buckets(&tax, Level::Brand).is_err(), "only 2 brands");
        // Equal scopes fall back to file order deterministically.
        let flat = "brand,series,character\nb,s1,x1\nb,s2,x2\nb,s3,x3\nb,s4,x4\n";
        let tax = load_taxonomy(flat).unwrap();
        let buckets = tertile_buckets(&tax, Level::Series).unwrap();
        assert_eq!(buckets.small, vec!["s1", "s2"]);
        assert_eq!(buckets.medium, vec!["s3"]);
        assert_eq!(buckets.large, vec!["s4"]);
    }

    #[test]
    fn wide_taxonomy_splits_25_24_24() {
        // 73 series of varying size: the sorted split takes 25/24/24.
        let mut text = String::from("brand,series,character\n");
        let mut next = 0usize;
        for s in 0..73 {
            for _ in 0..(s % 4 + 1) {
                text.push_str(&format!("b{},s{},ch{}\n", s % 9, s, next));
                next += 1;
            }
        }
        let tax = load_taxonomy(&text).unwrap();
        let buckets = tertile_buckets(&tax, Level::Series).unwrap();
        assert_eq!(buckets.small.len(), 25);
        assert_eq!(buckets.medium.len(), 24);
        assert_eq!(buckets.large.len(), 24);
        // Independent check: sort scopes and compare bucket boundaries.
        let mut scopes: Vec<usize> =
            (0..73).map(|s| tax.concept_scope(&format!("s{s}")).unwrap()).collect();
        scopes.sort_unstable();
        let max_small = buckets.small.iter().map(|n| tax.concept_scope(n).unwrap()).max().unwrap();
        let min_large = buckets.large.iter().map(|n| tax.concept_scope(n).unwrap()).min().unwrap();
        assert_eq!(max_small, scopes[24]);
        assert_eq!(min_large, scopes[73 - 24]);
        assert!(max_small <= min_large);
    }

    #[test]
    fn toy_world_taxonomy_mirrors_clusters() {
        let world = crate::world::ConceptWorld::default_world(0);
        let tax = toy_taxonomy(&world).unwrap();
        assert_eq!(tax.n_brands(), 2);
        assert_eq!(tax.n_series(), 4);
        assert_eq!(tax.n_characters(), 8);
        assert_eq!(tax.characters_under("brand0").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(tax.characters_under("brand1").unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(tax.characters_under("series2").unwrap(), vec![4, 5]);
    }
}
