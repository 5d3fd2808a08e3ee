//! Queries, rewrite options, and synthetic workload generation.
//!
//! A rewrite option pairs a hint set (which attribute indexes to force, plus
//! an optional join method) with an optional approximation rule. The
//! enumerated option space is deterministic: the identity option (no hints,
//! no approximation) comes first, then the remaining hint sets in mask
//! order, then hint-by-rule combinations.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrKind {
    Keyword,
    TemporalRange,
    SpatialRange,
    NumericRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttrKind,
}

/// Shape of the queries in a workload: which attributes can carry filtering
/// conditions (each backed by an index the hints can force), and whether the
/// query joins a second table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySchema {
    pub name: String,
    pub attributes: Vec<AttributeDef>,
    #[serde(default)]
    pub join_arms: u32,
    #[serde(default)]
    pub join_methods: Vec<String>,
}

impl QuerySchema {
    pub fn single_table(name: &str, attributes: Vec<AttributeDef>) -> Self {
        QuerySchema {
            name: name.to_string(),
            attributes,
            join_arms: 0,
            join_methods: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute name `{}`",
                    attr.name
                )));
            }
        }
        if self.join_arms > 0 && self.join_methods.is_empty() {
            return Err(Error::InvalidSchema(
                "join_arms > 0 requires at least one join method".into(),
            ));
        }
        if self.join_arms == 0 && !self.join_methods.is_empty() {
            return Err(Error::InvalidSchema(
                "join methods listed but join_arms = 0".into(),
            ));
        }
        Ok(())
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }
}

/// One filtering condition of a query, carrying its true selectivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub attr: String,
    pub zoom: u32,
    pub selectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: u64,
    pub conditions: Vec<Condition>,
    pub schema_ref: String,
}

impl Query {
    pub fn selectivities(&self) -> Vec<f64> {
        self.conditions.iter().map(|c| c.selectivity).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxKind {
    LimitFraction,
    SampleTable,
}

/// An approximation rule: run the query against a `fraction`-sized subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxRule {
    pub kind: ApproxKind,
    pub fraction: f64,
}

impl ApproxRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "approximation fraction {} not in (0, 1]",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Hint half of a rewrite option: a bitmask over schema attributes whose
/// index is forced on, plus an optional join-method choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintSet {
    pub index_mask: u32,
    pub join_method: Option<usize>,
}

impl HintSet {
    pub const EMPTY: HintSet = HintSet {
        index_mask: 0,
        join_method: None,
    };

    pub fn is_empty(&self) -> bool {
        self.index_mask == 0 && self.join_method.is_none()
    }

    pub fn hinted_attrs(&self) -> impl Iterator<Item = usize> + '_ {
        (0..32).filter(move |i| self.index_mask & (1 << i) != 0)
    }

    pub fn n_hinted(&self) -> usize {
        self.index_mask.count_ones() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteOption {
    pub hint: HintSet,
    pub approx: Option<ApproxRule>,
}

impl RewriteOption {
    pub fn identity() -> Self {
        RewriteOption {
            hint: HintSet::EMPTY,
            approx: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.hint.is_empty() && self.approx.is_none()
    }

    pub fn is_pure_hint(&self) -> bool {
        self.approx.is_none()
    }
}

/// A query with one rewrite option applied: what the planner prices and the
/// database executes. Applying the identity option leaves the query's
/// behavior unchanged in every environment lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewrittenQuery {
    pub query_id: u64,
    pub ro_index: usize,
}

impl RewrittenQuery {
    pub fn new(query_id: u64, ro_index: usize) -> Self {
        RewrittenQuery { query_id, ro_index }
    }
}

/// The enumerated rewrite-option space for one schema. Pure-hint options
/// always precede hint-by-rule combinations, and indexes are stable.
#[derive(Debug, Clone)]
pub struct RoSpace {
    options: Vec<RewriteOption>,
    attr_names: Vec<String>,
    pure_hint_count: usize,
    identity_index: Option<usize>,
}

impl RoSpace {
    pub fn new(schema: &QuerySchema, approx_rules: &[ApproxRule]) -> Result<Self> {
        Self::with_identity(schema, approx_rules, true)
    }

    pub fn hint_only(schema: &QuerySchema) -> Result<Self> {
        Self::new(schema, &[])
    }

    /// `include_identity = false` drops the no-hint option, matching setups
    /// that count only non-empty index combinations.
    pub fn with_identity(
        schema: &QuerySchema,
        approx_rules: &[ApproxRule],
        include_identity: bool,
    ) -> Result<Self> {
        schema.validate()?;
        for rule in approx_rules {
            rule.validate()?;
        }
        let hints = enumerate_hint_sets(schema, include_identity);
        let mut options: Vec<RewriteOption> = hints
            .iter()
            .map(|&hint| RewriteOption { hint, approx: None })
            .collect();
        let pure_hint_count = options.len();
        for rule in approx_rules {
            for &hint in &hints {
                options.push(RewriteOption {
                    hint,
                    approx: Some(rule.clone()),
                });
            }
        }
        let identity_index = options.iter().position(RewriteOption::is_identity);
        Ok(RoSpace {
            options,
            attr_names: schema.attributes.iter().map(|a| a.name.clone()).collect(),
            pure_hint_count,
            identity_index,
        })
    }

    /// The combination-only space (every hint set crossed with every rule),
    /// used as the second stage of the two-stage rewriter.
    pub fn approx_only(schema: &QuerySchema, approx_rules: &[ApproxRule]) -> Result<Self> {
        if approx_rules.is_empty() {
            return Err(Error::InvalidConfig(
                "approx-only space requires at least one approximation rule".into(),
            ));
        }
        let full = Self::new(schema, approx_rules)?;
        let options = full.options[full.pure_hint_count..].to_vec();
        Ok(RoSpace {
            options,
            attr_names: full.attr_names,
            pure_hint_count: 0,
            identity_index: None,
        })
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn get(&self, index: usize) -> &RewriteOption {
        &self.options[index]
    }

    pub fn options(&self) -> &[RewriteOption] {
        &self.options
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    /// Number of leading options that carry no approximation rule.
    pub fn pure_hint_count(&self) -> usize {
        self.pure_hint_count
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.identity_index
    }

    pub fn is_pure_hint(&self, index: usize) -> bool {
        index < self.pure_hint_count
    }
}

fn enumerate_hint_sets(schema: &QuerySchema, include_identity: bool) -> Vec<HintSet> {
    let m = schema.n_attributes() as u32;
    let mut hints = Vec::new();
    if include_identity {
        hints.push(HintSet::EMPTY);
    }
    if schema.join_arms == 0 {
        for mask in 1..(1u32 << m) {
            hints.push(HintSet {
                index_mask: mask,
                join_method: None,
            });
        }
    } else {
        // Join queries pair each non-empty index combination with each
        // join method (the 7-by-3 layout for three attributes).
        for mask in 1..(1u32 << m) {
            for jm in 0..schema.join_methods.len() {
                hints.push(HintSet {
                    index_mask: mask,
                    join_method: Some(jm),
                });
            }
        }
    }
    hints
}

/// Enumerate the full rewrite-option space: pure-hint options first, then
/// hint-by-rule combinations. Output order is a pure function of the inputs.
pub fn enumerate_rewrite_options(
    schema: &QuerySchema,
    approx_rules: &[ApproxRule],
) -> Result<Vec<RewriteOption>> {
    Ok(RoSpace::new(schema, approx_rules)?.options)
}

/// Maximum zoom level for an extent of `l_days`: ceil(log2 L).
pub fn max_zoom_level(l_days: f64) -> Result<u32> {
    if l_days.is_nan() || l_days < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "extent {l_days} days must be >= 1"
        )));
    }
    Ok(l_days.log2().ceil() as u32)
}

/// Length in days of a range condition at zoom level `z`: max(L / 2^z, 1).
pub fn zoom_range_length(l_days: f64, z: u32) -> Result<f64> {
    let max_z = max_zoom_level(l_days)?;
    if z > max_z {
        return Err(Error::InvalidConfig(format!(
            "zoom level {z} exceeds maximum {max_z} for extent {l_days}"
        )));
    }
    Ok((l_days / 2f64.powi(z as i32)).max(1.0))
}

/// Per-attribute generation policy: the attribute's base selectivity at zoom
/// level 0, and an optional fixed zoom level overriding the uniform draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttrGenPolicy {
    pub base_selectivity: f64,
    #[serde(default)]
    pub fixed_zoom: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadGenConfig {
    pub num_queries: usize,
    /// Maximum extent L in days; the zoom ladder has ceil(log2 L) + 1 levels.
    pub max_extent_days: f64,
    /// Sigma of the multiplicative log-normal noise on selectivities.
    pub noise_sigma: f64,
    pub seed: u64,
    pub attr_policies: Vec<AttrGenPolicy>,
    pub schema_ref: String,
}

impl WorkloadGenConfig {
    pub fn validate(&self, schema: &QuerySchema) -> Result<()> {
        if self.max_extent_days < 1.0 {
            return Err(Error::InvalidConfig("max_extent_days must be >= 1".into()));
        }
        if self.attr_policies.len() != schema.n_attributes() {
            return Err(Error::ShapeMismatch {
                expected: schema.n_attributes(),
                got: self.attr_policies.len(),
            });
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        for (i, p) in self.attr_policies.iter().enumerate() {
            if !(p.base_selectivity > 0.0 && p.base_selectivity <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "base_selectivity of attribute {i} not in (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Generate a synthetic workload. Each condition samples a zoom level
/// uniformly from [0, ceil(log2 L)] (unless fixed by policy) and derives its
/// selectivity as base * 2^-z perturbed by log-normal noise, clamped to
/// [0, 1]. Fully determined by the seed.
pub fn generate_workload(schema: &QuerySchema, config: &WorkloadGenConfig) -> Result<Vec<Query>> {
    schema.validate()?;
    config.validate(schema)?;
    let max_z = max_zoom_level(config.max_extent_days)?;
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::InvalidConfig(format!("noise sigma: {e}")))?;

    let mut queries = Vec::with_capacity(config.num_queries);
    for qid in 0..config.num_queries as u64 {
        let mut rng = derive(config.seed, stream::WORKLOAD, qid);
        let mut conditions = Vec::with_capacity(schema.n_attributes());
        for (attr, policy) in schema.attributes.iter().zip(&config.attr_policies) {
            let zoom = match policy.fixed_zoom {
                Some(z) if z <= max_z => z,
                Some(z) => {
                    return Err(Error::InvalidConfig(format!(
                        "fixed zoom {z} exceeds maximum {max_z}"
                    )))
                }
                None => rng.random_range(0..=max_z),
            };
            let factor = 2f64.powi(-(zoom as i32));
            let eps: f64 = noise.sample(&mut rng);
            let selectivity = (policy.base_selectivity * factor * eps.exp()).clamp(0.0, 1.0);
            conditions.push(Condition {
                attr: attr.name.clone(),
                zoom,
                selectivity,
            });
        }
        queries.push(Query {
            id: qid,
            conditions,
            schema_ref: config.schema_ref.clone(),
        });
    }
    queries.sort_by_key(|q| q.id);
    Ok(queries)
}

/// Split a workload into (train, validation, eval) parts. The workload is
/// shuffled deterministically, then partitioned at cumulative-rounded
/// boundaries so the sizes track the ratios exactly where possible.
pub fn split_workload(
    mut workload: Vec<Query>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Query>, Vec<Query>, Vec<Query>)> {
    let total = ratios.0 + ratios.1 + ratios.2;
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios sum to {total}, expected 1"
        )));
    }
    if ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(Error::InvalidConfig("split ratios must be >= 0".into()));
    }
    let n = workload.len();
    let mut rng = derive(seed, stream::SPLIT, 0);
    workload.shuffle(&mut rng);

    let bound = |cum: f64| -> usize { ((n as f64 * cum) + 0.5).floor() as usize };
    let b1 = bound(ratios.0).min(n);
    let b2 = bound(ratios.0 + ratios.1).min(n).max(b1);

    let eval = workload.split_off(b2);
    let valid = workload.split_off(b1);
    Ok((workload, valid, eval))
}

pub fn save_workload(path: &std::path::Path, workload: &[Query]) -> Result<()> {
    let mut sorted: Vec<&Query> = workload.iter().collect();
    sorted.sort_by_key(|q| q.id);
    let text = serde_json::to_string_pretty(&sorted)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_workload(path: &std::path::Path) -> Result<Vec<Query>> {
    let text = std::fs::read_to_string(path)?;
    let queries: Vec<Query> = serde_json::from_str(&text)?;
    Ok(queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_attr_schema() -> QuerySchema {
        QuerySchema::single_table(
            "tweets",
            vec![
                AttributeDef {
                    name: "content".into(),
                    kind: AttrKind::Keyword,
                },
                AttributeDef {
                    name: "created_at".into(),
                    kind: AttrKind::TemporalRange,
                },
                AttributeDef {
                    name: "location".into(),
                    kind: AttrKind::SpatialRange,
                },
            ],
        )
    }

    fn join_schema() -> QuerySchema {
        let mut s = three_attr_schema();
        s.join_arms = 1;
        s.join_methods = vec!["nest-loop".into(), "hash".into(), "merge".into()];
        s
    }

    fn gen_config(n: usize, seed: u64) -> WorkloadGenConfig {
        WorkloadGenConfig {
            num_queries: n,
            max_extent_days: 64.0,
            noise_sigma: 0.25,
            seed,
            attr_policies: vec![
                AttrGenPolicy {
                    base_selectivity: 0.02,
                    fixed_zoom: None,
                },
                AttrGenPolicy {
                    base_selectivity: 0.05,
                    fixed_zoom: None,
                },
                AttrGenPolicy {
                    base_selectivity: 0.1,
                    fixed_zoom: None,
                },
            ],
            schema_ref: "tweets".into(),
        }
    }

    #[test]
    fn three_attrs_no_rules_gives_eight_options() {
        let space = RoSpace::hint_only(&three_attr_schema()).unwrap();
        assert_eq!(space.len(), 8);
        assert_eq!(space.identity_index(), Some(0));
        assert!(space.get(0).is_identity());
        assert_eq!(space.pure_hint_count(), 8);
    }

    #[test]
    fn join_schema_nonempty_subsets_give_21_options() {
        let space = RoSpace::with_identity(&join_schema(), &[], false).unwrap();
        assert_eq!(space.len(), 21);
        assert!(space.options().iter().all(|o| !o.is_identity()));
        // Default keeps the identity, one extra action.
        let with_id = RoSpace::hint_only(&join_schema()).unwrap();
        assert_eq!(with_id.len(), 22);
        assert_eq!(with_id.identity_index(), Some(0));
    }

    #[test]
    fn empty_attribute_list_gives_identity_only() {
        let schema = QuerySchema::single_table("empty", vec![]);
        let options = enumerate_rewrite_options(&schema, &[]).unwrap();
        assert_eq!(options.len(), 1);
        assert!(options[0].is_identity());
    }

    #[test]
    fn invalid_schema_rejected() {
        let mut schema = three_attr_schema();
        schema.attributes[1].name = "content".into();
        assert!(enumerate_rewrite_options(&schema, &[]).is_err());
        let mut schema = three_attr_schema();
        schema.join_arms = 1; // no join methods
        assert!(enumerate_rewrite_options(&schema, &[]).is_err());
    }

    #[test]
    fn three_rules_give_24_combined_options_after_the_pure_hints() {
        let rules: Vec<ApproxRule> = [0.2, 0.4, 0.8]
            .iter()
            .map(|&f| ApproxRule {
                kind: ApproxKind::SampleTable,
                fraction: f,
            })
            .collect();
        let space = RoSpace::new(&three_attr_schema(), &rules).unwrap();
        assert_eq!(space.pure_hint_count(), 8);
        let combined: Vec<_> = space.options().iter().filter(|o| o.approx.is_some()).collect();
        assert_eq!(combined.len(), 24);
        assert_eq!(space.len(), 32);
        // Pure hints strictly precede combinations.
        assert!(space.options()[..8].iter().all(|o| o.approx.is_none()));

        let stage2 = RoSpace::approx_only(&three_attr_schema(), &rules).unwrap();
        assert_eq!(stage2.len(), 24);
        assert_eq!(stage2.identity_index(), None);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let rules = vec![ApproxRule {
            kind: ApproxKind::LimitFraction,
            fraction: 0.5,
        }];
        let a = enumerate_rewrite_options(&three_attr_schema(), &rules).unwrap();
        let b = enumerate_rewrite_options(&three_attr_schema(), &rules).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zoom_lengths_match_the_formula() {
        assert_eq!(zoom_range_length(64.0, 3).unwrap(), 8.0);
        assert_eq!(zoom_range_length(64.0, 6).unwrap(), 1.0);
        assert_eq!(zoom_range_length(100.0, 7).unwrap(), 1.0); // 100/128 clamps to 1
        assert!(zoom_range_length(64.0, 7).is_err());
        assert!(zoom_range_length(0.5, 0).is_err());
    }

    #[test]
    fn zoom_length_monotone_in_z() {
        let l = 100.0;
        let max_z = max_zoom_level(l).unwrap();
        let mut prev = f64::INFINITY;
        for z in 0..=max_z {
            let len = zoom_range_length(l, z).unwrap();
            assert!(len <= prev && len >= 1.0);
            prev = len;
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let schema = three_attr_schema();
        let a = generate_workload(&schema, &gen_config(50, 9)).unwrap();
        let b = generate_workload(&schema, &gen_config(50, 9)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = generate_workload(&schema, &gen_config(50, 10)).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn generation_ranges_hold() {
        let schema = three_attr_schema();
        let queries = generate_workload(&schema, &gen_config(100, 3)).unwrap();
        assert_eq!(queries.len(), 100);
        for q in &queries {
            assert_eq!(q.conditions.len(), 3);
            for c in &q.conditions {
                assert!(c.zoom <= 6);
                assert!((0.0..=1.0).contains(&c.selectivity));
            }
        }
    }

    #[test]
    fn empty_workload_request() {
        let schema = three_attr_schema();
        let queries = generate_workload(&schema, &gen_config(0, 3)).unwrap();
        assert!(queries.is_empty());
    }

    #[test]
    fn split_sizes_and_partition() {
        let schema = three_attr_schema();
        let w = generate_workload(&schema, &gen_config(6, 1)).unwrap();
        let (a, b, c) = split_workload(w.clone(), (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0), 5).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (2, 2, 2));

        let w12 = generate_workload(&schema, &gen_config(12, 1)).unwrap();
        let (a, b, c) =
            split_workload(w12, (2.0 / 3.0 * 0.5, 1.0 / 3.0 * 0.5, 0.5), 5).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (4, 2, 6));

        let (a, b, c) = split_workload(w.clone(), (1.0, 0.0, 0.0), 5).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 0, 0));

        assert!(split_workload(w, (0.5, 0.2, 0.2), 5).is_err());
    }

    #[test]
    fn split_is_a_disjoint_cover() {
        let schema = three_attr_schema();
        let w = generate_workload(&schema, &gen_config(31, 2)).unwrap();
        let ids: BTreeSet<u64> = w.iter().map(|q| q.id).collect();
        let (a, b, c) = split_workload(w, (0.5, 0.25, 0.25), 11).unwrap();
        let mut got = BTreeSet::new();
        for q in a.iter().chain(&b).chain(&c) {
            assert!(got.insert(q.id), "query {} appears twice", q.id);
        }
        assert_eq!(got, ids);
    }
}
