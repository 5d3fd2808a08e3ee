//! The simulated database: ground-truth plan times, hint adherence, and
//! result quality for every (query, rewrite option) pair.
//!
//! Plan times come from a fixed per-operator cost model. A hinted plan scans
//! the cheapest hinted index path (cost proportional to that attribute's
//! selectivity times the table size) and pays a fixed overhead per extra
//! intersected index; the no-hint plan pays the full-scan cost. Approximate
//! options scale time by their sampling fraction and trade quality for it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, stream};
use crate::time::Micros;
use crate::workload::{Query, QuerySchema, RoSpace};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisProfile {
    /// Rows in the (simulated) base table.
    pub table_rows: f64,
    /// Microseconds per qualifying row when scanning through an index.
    pub per_row_index_cost_us: f64,
    /// Cost added per extra hinted index that must be intersected.
    pub intersection_overhead_ms: f64,
    /// Cost of the no-index full scan.
    pub full_scan_ms: f64,
    /// Multipliers per join method, aligned with `QuerySchema::join_methods`.
    #[serde(default)]
    pub join_method_factors: Vec<f64>,
    /// Probability that the optimizer picks a disastrous plan for the
    /// original query, in which case the identity option's time is set to
    /// `optimizer_error_factor` times the best hinted plan.
    pub optimizer_error_prob: f64,
    pub optimizer_error_factor: f64,
    /// Sigma of the per-entry multiplicative log-normal noise on times.
    pub time_noise_sigma: f64,
    /// Quality of a fraction-f approximation is f^quality_exponent.
    pub quality_exponent: f64,
    /// Synthesized times are clamped to this ceiling.
    pub max_time_ms: f64,
}

impl Default for SynthesisProfile {
    fn default() -> Self {
        SynthesisProfile {
            table_rows: 5_000_000.0,
            per_row_index_cost_us: 50.0,
            intersection_overhead_ms: 150.0,
            full_scan_ms: 1_500.0,
            join_method_factors: Vec::new(),
            optimizer_error_prob: 0.0,
            optimizer_error_factor: 10.0,
            time_noise_sigma: 0.25,
            quality_exponent: 0.3,
            max_time_ms: 8_000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub tau_ms: u64,
    /// Probability the database honors the hints of a rewritten query.
    pub hint_adherence_prob: f64,
    pub synthesis: SynthesisProfile,
    pub seed: u64,
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_ms == 0 {
            return Err(Error::InvalidConfig("time budget must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.hint_adherence_prob) {
            return Err(Error::InvalidConfig(
                "hint_adherence_prob must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn tau(&self) -> Micros {
        Micros::from_ms(self.tau_ms)
    }
}

/// Ground-truth execution time and result quality for every (query, RO)
/// pair in scope. Immutable once synthesized; the simulated database oracle.
#[derive(Debug, Clone)]
pub struct PlanTimeTable {
    entries: BTreeMap<u64, Vec<(Micros, f64)>>,
    pure_hint_count: usize,
    identity_index: Option<usize>,
    hint_adherence_prob: f64,
}

impl PlanTimeTable {
    pub fn n_options(&self) -> usize {
        self.entries.values().next().map_or(0, Vec::len)
    }

    pub fn n_queries(&self) -> usize {
        self.entries.len()
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.identity_index
    }

    pub fn hint_adherence_prob(&self) -> f64 {
        self.hint_adherence_prob
    }

    fn row(&self, query_id: u64, ro_index: usize) -> Result<(Micros, f64)> {
        self.entries
            .get(&query_id)
            .and_then(|v| v.get(ro_index))
            .copied()
            .ok_or(Error::MissingEntry { query_id, ro_index })
    }

    /// The stored (noise-free of adherence effects) plan time.
    pub fn time_of(&self, query_id: u64, ro_index: usize) -> Result<Micros> {
        Ok(self.row(query_id, ro_index)?.0)
    }

    /// Stored result quality; 1.0 for every non-approximate option.
    pub fn quality_of(&self, query_id: u64, ro_index: usize) -> Result<f64> {
        Ok(self.row(query_id, ro_index)?.1)
    }

    /// Execute a rewritten query: with probability `hint_adherence_prob` the
    /// database honors the hints and the stored time applies; otherwise it
    /// ignores them and runs the identity plan. Options with no hints have
    /// nothing to ignore and always take their own time.
    pub fn true_execution_time<R: Rng + ?Sized>(
        &self,
        space: &RoSpace,
        query_id: u64,
        ro_index: usize,
        rng: &mut R,
    ) -> Result<Micros> {
        let own = self.time_of(query_id, ro_index)?;
        if space.get(ro_index).hint.is_empty() {
            return Ok(own);
        }
        match self.identity_index {
            Some(id_index) if self.hint_adherence_prob < 1.0 => {
                if rng.random::<f64>() < self.hint_adherence_prob {
                    Ok(own)
                } else {
                    self.time_of(query_id, id_index)
                }
            }
            _ => Ok(own),
        }
    }

    /// Number of pure-hint plans whose stored time fits the budget: the
    /// difficulty metric used to bucket evaluation workloads.
    pub fn viable_plan_count(&self, query_id: u64, tau: Micros) -> Result<usize> {
        let row = self
            .entries
            .get(&query_id)
            .ok_or(Error::MissingEntry { query_id, ro_index: 0 })?;
        Ok(row[..self.pure_hint_count]
            .iter()
            .filter(|(t, _)| *t <= tau)
            .count())
    }

    /// Error if any (query, option) pair lacks an entry.
    pub fn check_coverage(&self, workload: &[Query], n_options: usize) -> Result<()> {
        for q in workload {
            let row = self
                .entries
                .get(&q.id)
                .ok_or(Error::MissingEntry { query_id: q.id, ro_index: 0 })?;
            if row.len() < n_options {
                return Err(Error::MissingEntry {
                    query_id: q.id,
                    ro_index: row.len(),
                });
            }
        }
        Ok(())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    /// CSV rows `query_id,ro_index,time_us,quality`, sorted by key.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,ro_index,time_us,quality\n");
        for (qid, row) in &self.entries {
            for (i, (t, q)) in row.iter().enumerate() {
                out.push_str(&format!("{qid},{i},{},{q}\n", t.as_us()));
            }
        }
        out
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parse the CSV form. The option space the table was synthesized over
    /// must be supplied again so pure-hint and identity bookkeeping can be
    /// reconstructed.
    pub fn from_csv(text: &str, space: &RoSpace, hint_adherence_prob: f64) -> Result<Self> {
        let mut entries: BTreeMap<u64, Vec<(Micros, f64)>> = BTreeMap::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "query_id,ro_index,time_us,quality" => {}
            Some((_, header)) => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unexpected header `{header}`"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty file".into(),
                })
            }
        }
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |what: &str| {
                fields.next().ok_or(Error::Parse {
                    line: lineno,
                    msg: format!("missing field {what}"),
                })
            };
            let qid: u64 = next("query_id")?.trim().parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("query_id: {e}"),
            })?;
            let ro: usize = next("ro_index")?.trim().parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("ro_index: {e}"),
            })?;
            let t: u64 = next("time_us")?.trim().parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("time_us: {e}"),
            })?;
            let quality: f64 = next("quality")?.trim().parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("quality: {e}"),
            })?;
            if ro >= space.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("ro_index {ro} outside option space of size {}", space.len()),
                });
            }
            let row = entries.entry(qid).or_default();
            if row.len() != ro {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected ro_index {} for query {qid}, got {ro}", row.len()),
                });
            }
            row.push((Micros(t), quality));
        }
        for (qid, row) in &entries {
            if row.len() != space.len() {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!(
                        "query {qid} has {} entries, option space has {}",
                        row.len(),
                        space.len()
                    ),
                });
            }
        }
        Ok(PlanTimeTable {
            entries,
            pure_hint_count: space.pure_hint_count(),
            identity_index: space.identity_index(),
            hint_adherence_prob,
        })
    }

    pub fn load_csv(
        path: &std::path::Path,
        space: &RoSpace,
        hint_adherence_prob: f64,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text, space, hint_adherence_prob)
    }
}

/// Synthesize ground-truth plan times for a workload over an option space.
/// Deterministic under the config seed; per-query noise streams keep entries
/// independent of workload ordering.
pub fn synthesize_plan_times(
    workload: &[Query],
    schema: &QuerySchema,
    space: &RoSpace,
    config: &EnvironmentConfig,
) -> Result<PlanTimeTable> {
    config.validate()?;
    schema.validate()?;
    let p = &config.synthesis;
    if schema.join_arms > 0 && p.join_method_factors.len() != schema.join_methods.len() {
        return Err(Error::ShapeMismatch {
            expected: schema.join_methods.len(),
            got: p.join_method_factors.len(),
        });
    }
    let noise = Normal::new(0.0, p.time_noise_sigma)
        .map_err(|e| Error::InvalidConfig(format!("time noise sigma: {e}")))?;
    let cap = Micros::from_ms_f64(p.max_time_ms);

    let mut entries = BTreeMap::new();
    for query in workload {
        if query.conditions.len() != schema.n_attributes() {
            return Err(Error::ShapeMismatch {
                expected: schema.n_attributes(),
                got: query.conditions.len(),
            });
        }
        let mut rng = derive(config.seed, stream::ENV_SYNTH, query.id);
        let sels = query.selectivities();

        let mut row: Vec<(Micros, f64)> = Vec::with_capacity(space.len());
        for ro in space.options() {
            let base_ms = if ro.hint.is_empty() {
                p.full_scan_ms
            } else {
                let min_sel = ro
                    .hint
                    .hinted_attrs()
                    .map(|a| sels[a])
                    .fold(f64::INFINITY, f64::min);
                let scan_ms = p.per_row_index_cost_us * min_sel * p.table_rows / 1_000.0;
                let extra = ro.hint.n_hinted().saturating_sub(1) as f64;
                let join_factor = ro
                    .hint
                    .join_method
                    .map_or(1.0, |jm| p.join_method_factors[jm]);
                (scan_ms + extra * p.intersection_overhead_ms) * join_factor
            };
            let eps: f64 = noise.sample(&mut rng);
            let mut ms = base_ms * eps.exp();
            let mut quality = 1.0;
            if let Some(rule) = &ro.approx {
                ms *= rule.fraction;
                quality = rule.fraction.powf(p.quality_exponent);
            }
            let t = Micros::from_ms_f64(ms).min(cap).max(Micros(1));
            row.push((t, quality));
        }

        // Optimizer-error knob: with probability p_err the database's own
        // plan for the original query lands far above the best hinted plan.
        if let Some(id_index) = space.identity_index() {
            if p.optimizer_error_prob > 0.0 && rng.random::<f64>() < p.optimizer_error_prob {
                let best_hinted = space
                    .options()
                    .iter()
                    .enumerate()
                    .filter(|(i, ro)| ro.is_pure_hint() && !ro.hint.is_empty() && *i < row.len())
                    .map(|(i, _)| row[i].0)
                    .min()
                    .unwrap_or(Micros::from_ms_f64(p.full_scan_ms));
                let bad = best_hinted.scale(p.optimizer_error_factor).min(cap);
                row[id_index].0 = row[id_index].0.max(bad);
            }
        }
        entries.insert(query.id, row);
    }
    Ok(PlanTimeTable {
        entries,
        pure_hint_count: space.pure_hint_count(),
        identity_index: space.identity_index(),
        hint_adherence_prob: config.hint_adherence_prob,
    })
}
