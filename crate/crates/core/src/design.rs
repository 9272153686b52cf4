//! Blocked main-effects referendum designs and the annuity rule for levy
//! bounds.
//!
//! No orthogonal array exists for a 3 x 4^3 x 8 profile in 48 runs, so the
//! generator starts from level-balanced shuffled columns and swaps entries
//! within a column while the maximum absolute correlation between coded main
//! effects (sum of squared correlations as tie-break) goes down. Swaps keep
//! every column exactly balanced.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coding::OrthoPolyCoding;
use crate::data::{csv_err, task_record, AttributeKind, AttributeSchema, ReferendumTask, TaskColumns};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyBounds {
    pub annuity_factor: f64,
    pub base: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Present value of 1 per year for `years` years at `rate`.
pub fn annuity_factor(rate: f64, years: u32) -> f64 {
    (1.0 - (1.0 + rate).powi(-(years as i32))) / rate
}

/// Per-household annual levy that funds `target_npv` over `years` at `rate`,
/// spread across `total_households`, widened by `adjustment` either side.
pub fn levy_bounds(
    target_npv: f64,
    total_households: f64,
    rate: f64,
    years: u32,
    adjustment: f64,
) -> Result<LevyBounds> {
    if !(total_households > 0.0) {
        return Err(Error::Design("number of households must be positive".into()));
    }
    if !(rate > 0.0) || years < 1 {
        return Err(Error::Design("need rate > 0 and at least one year".into()));
    }
    if !(target_npv >= 0.0) || !(0.0..1.0).contains(&adjustment.abs()) {
        return Err(Error::Design("need target >= 0 and |adjustment| < 1".into()));
    }
    let a = annuity_factor(rate, years);
    let base = target_npv / (total_households * a);
    Ok(LevyBounds {
        annuity_factor: a,
        base,
        lower: (1.0 - adjustment) * base,
        upper: (1.0 + adjustment) * base,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignConfig {
    pub attributes: AttributeSchema,
    pub tasks: usize,
    pub blocks: usize,
    /// Swap proposals per restart.
    pub iterations: usize,
    pub restarts: usize,
    pub threshold: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            attributes: AttributeSchema::table1(),
            tasks: 48,
            blocks: 8,
            iterations: 20_000,
            restarts: 4,
            threshold: 0.05,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        self.attributes.validate()?;
        if self.tasks == 0 || self.blocks == 0 {
            return Err(Error::Design("tasks and blocks must be positive".into()));
        }
        for a in &self.attributes.attributes {
            if self.tasks % a.levels.len() != 0 {
                return Err(Error::Design(format!(
                    "{} tasks are not divisible by the {} levels of '{}'",
                    self.tasks,
                    a.levels.len(),
                    a.name
                )));
            }
        }
        if self.tasks % self.blocks != 0 {
            return Err(Error::Design(format!(
                "{} tasks are not divisible into {} blocks",
                self.tasks, self.blocks
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Design("need at least one restart".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    /// Per attribute, the count of each level over the whole design.
    pub level_counts: Vec<(String, Vec<usize>)>,
    /// Labels of the coded main-effect columns.
    pub columns: Vec<String>,
    pub correlation: Vec<Vec<f64>>,
    /// Largest |correlation| between columns of different attributes.
    pub max_abs_correlation: f64,
    pub d_efficiency: f64,
    /// Sum over blocks, attributes and levels of squared deviation from
    /// proportional counts.
    pub block_imbalance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub schema: AttributeSchema,
    pub tasks: Vec<ReferendumTask>,
    pub diagnostics: DesignDiagnostics,
    /// Set when the search stopped above the correlation threshold.
    pub warning: bool,
}

impl Design {
    pub fn n_blocks(&self) -> usize {
        let mut b: Vec<u32> = self.tasks.iter().map(|t| t.block_id).collect();
        b.sort_unstable();
        b.dedup();
        b.len()
    }

    pub fn block(&self, block_id: u32) -> Vec<&ReferendumTask> {
        self.tasks.iter().filter(|t| t.block_id == block_id).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(self.schema.task_header()).map_err(|e| csv_err(path, e))?;
        for t in &self.tasks {
            w.write_record(task_record(&self.schema, t)).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a design CSV (`task_id,block_id,<attribute columns>`).
pub fn load_design(path: &Path, schema: &AttributeSchema) -> Result<Design> {
    schema.validate()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = TaskColumns::locate(path, &header, schema)?;
    let mut tasks = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(k + 2);
        tasks.push(cols.parse(path, row, &rec, schema)?);
    }
    if tasks.is_empty() {
        return Err(Error::Design(format!("{}: no tasks", path.display())));
    }
    let diagnostics = evaluate_tasks(schema, &tasks);
    Ok(Design {
        schema: schema.clone(),
        tasks,
        diagnostics,
        warning: false,
    })
}

/// Level indices per attribute (schema order) for each task.
type LevelGrid = Vec<Vec<usize>>;

fn to_levels(schema: &AttributeSchema, tasks: &[ReferendumTask]) -> LevelGrid {
    tasks
        .iter()
        .map(|t| {
            let mut ci = 0;
            schema
                .attributes
                .iter()
                .map(|a| match a.kind {
                    AttributeKind::Categorical => t.category,
                    AttributeKind::Continuous => {
                        let v = t.values[ci];
                        ci += 1;
                        a.level_index(v).expect("task value is a level")
                    }
                })
                .collect()
        })
        .collect()
}

fn to_tasks(schema: &AttributeSchema, grid: &LevelGrid, blocks: &[u32]) -> Vec<ReferendumTask> {
    grid.iter()
        .zip(blocks)
        .enumerate()
        .map(|(i, (row, &block_id))| {
            let mut category = 0;
            let mut values = Vec::new();
            for (a, &l) in schema.attributes.iter().zip(row) {
                match a.kind {
                    AttributeKind::Categorical => category = l,
                    AttributeKind::Continuous => values.push(a.values()[l]),
                }
            }
            ReferendumTask {
                task_id: i as u32 + 1,
                block_id,
                category,
                values,
            }
        })
        .collect()
}

/// Coded main-effect columns: effects coding for the category, degree-1
/// orthogonal polynomial for continuous attributes. Each column is scaled to
/// unit mean square under level balance.
struct Coder {
    /// (attribute index, per-level codes)
    columns: Vec<(usize, Vec<f64>)>,
    labels: Vec<String>,
}

impl Coder {
    fn new(schema: &AttributeSchema) -> Self {
        let mut columns = Vec::new();
        let mut labels = Vec::new();
        for (ai, a) in schema.attributes.iter().enumerate() {
            let k = a.levels.len();
            match a.kind {
                AttributeKind::Categorical => {
                    let s = (k as f64 / 2.0).sqrt();
                    for l in 0..k.saturating_sub(1) {
                        let codes = (0..k)
                            .map(|m| {
                                if m == l {
                                    s
                                } else if m == k - 1 {
                                    -s
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        columns.push((ai, codes));
                        labels.push(format!("{}:{}", a.name, a.labels()[l]));
                    }
                }
                AttributeKind::Continuous => {
                    if k < 2 {
                        continue;
                    }
                    let c = OrthoPolyCoding::new(a.values(), 1).expect("validated levels");
                    let s = (k as f64).sqrt();
                    columns.push((ai, a.values().iter().map(|&x| s * c.eval_degree(x, 1)).collect()));
                    labels.push(a.name.clone());
                }
            }
        }
        Self { columns, labels }
    }

    fn matrix(&self, grid: &LevelGrid) -> Vec<Vec<f64>> {
        self.columns
            .iter()
            .map(|(ai, codes)| grid.iter().map(|row| codes[row[*ai]]).collect())
            .collect()
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        // a constant column is undefined; count it as fully confounded
        return 1.0;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Objective {
    max_abs: f64,
    sum_sq: f64,
}

fn objective(coder: &Coder, grid: &LevelGrid) -> Objective {
    let cols = coder.matrix(grid);
    let mut max_abs: f64 = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            if coder.columns[i].0 == coder.columns[j].0 {
                continue;
            }
            let r = correlation(&cols[i], &cols[j]);
            max_abs = max_abs.max(r.abs());
            sum_sq += r * r;
        }
    }
    Objective { max_abs, sum_sq }
}

fn improves(new: Objective, old: Objective) -> bool {
    new.max_abs < old.max_abs || (new.max_abs == old.max_abs && new.sum_sq < old.sum_sq)
}

fn d_efficiency(cols: &[Vec<f64>], n: usize) -> f64 {
    let p = cols.len() + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    let m = (x.transpose() * &x) / n as f64;
    let det = m.determinant();
    if det <= 1e-12 {
        0.0
    } else {
        det.powf(1.0 / p as f64)
    }
}

fn imbalance(schema: &AttributeSchema, grid: &LevelGrid, blocks: &[u32]) -> f64 {
    let n = grid.len() as f64;
    let mut ids: Vec<u32> = blocks.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut total = 0.0;
    for &b in &ids {
        let members: Vec<usize> = (0..grid.len()).filter(|&i| blocks[i] == b).collect();
        let size = members.len() as f64;
        for (ai, a) in schema.attributes.iter().enumerate() {
            let k = a.levels.len();
            let mut overall = vec![0usize; k];
            for row in grid {
                overall[row[ai]] += 1;
            }
            let mut counts = vec![0usize; k];
            for &i in &members {
                counts[grid[i][ai]] += 1;
            }
            for l in 0..k {
                let expected = size * overall[l] as f64 / n;
                total += (counts[l] as f64 - expected).powi(2);
            }
        }
    }
    total
}

fn evaluate_grid(schema: &AttributeSchema, grid: &LevelGrid, blocks: &[u32]) -> DesignDiagnostics {
    let coder = Coder::new(schema);
    let cols = coder.matrix(grid);
    let level_counts = schema
        .attributes
        .iter()
        .enumerate()
        .map(|(ai, a)| {
            let mut c = vec![0; a.levels.len()];
            for row in grid {
                c[row[ai]] += 1;
            }
            (a.name.clone(), c)
        })
        .collect();
    let k = cols.len();
    let mut corr = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            corr[i][j] = if i == j { 1.0 } else { correlation(&cols[i], &cols[j]) };
        }
    }
    DesignDiagnostics {
        level_counts,
        columns: coder.labels.clone(),
        correlation: corr,
        max_abs_correlation: objective(&coder, grid).max_abs,
        d_efficiency: d_efficiency(&cols, grid.len()),
        block_imbalance: imbalance(schema, grid, blocks),
    }
}

fn evaluate_tasks(schema: &AttributeSchema, tasks: &[ReferendumTask]) -> DesignDiagnostics {
    let grid = to_levels(schema, tasks);
    let blocks: Vec<u32> = tasks.iter().map(|t| t.block_id).collect();
    evaluate_grid(schema, &grid, &blocks)
}

/// Recomputes balance, correlation, D-efficiency and block imbalance.
pub fn evaluate_design(design: &Design) -> DesignDiagnostics {
    evaluate_tasks(&design.schema, &design.tasks)
}

fn balanced_grid(schema: &AttributeSchema, tasks: usize, rng: &mut ChaCha8Rng) -> LevelGrid {
    let columns: Vec<Vec<usize>> = schema
        .attributes
        .iter()
        .map(|a| {
            let k = a.levels.len();
            let mut col: Vec<usize> = (0..tasks).map(|i| i % k).collect();
            col.shuffle(rng);
            col
        })
        .collect();
    (0..tasks).map(|i| columns.iter().map(|c| c[i]).collect()).collect()
}

fn search(config: &DesignConfig, seed: u64, restart: usize) -> (LevelGrid, Objective) {
    let schema = &config.attributes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let coder = Coder::new(schema);
    let mut grid = balanced_grid(schema, config.tasks, &mut rng);
    let mut best = objective(&coder, &grid);
    let n_attr = schema.attributes.len();
    for _ in 0..config.iterations {
        if best.max_abs <= config.threshold {
            break;
        }
        let a = rng.gen_range(0..n_attr);
        let i = rng.gen_range(0..config.tasks);
        let j = rng.gen_range(0..config.tasks);
        if grid[i][a] == grid[j][a] {
            continue;
        }
        let (vi, vj) = (grid[i][a], grid[j][a]);
        grid[i][a] = vj;
        grid[j][a] = vi;
        let obj = objective(&coder, &grid);
        if improves(obj, best) {
            best = obj;
        } else {
            grid[i][a] = vi;
            grid[j][a] = vj;
        }
    }
    (grid, best)
}

/// Balanced random start plus pairwise-swap descent, best of
/// `config.restarts` independent seeded restarts, then blocked.
pub fn generate_design(config: &DesignConfig, seed: u64) -> Result<Design> {
    config.validate()?;
    let results: Vec<(LevelGrid, Objective)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| search(config, seed, r))
        .collect();
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if improves(r.1, results[best].1) {
            best = i;
        }
    }
    let (grid, obj) = results.into_iter().nth(best).unwrap();
    let unblocked = to_tasks(&config.attributes, &grid, &vec![1; grid.len()]);
    let mut design = Design {
        schema: config.attributes.clone(),
        diagnostics: evaluate_tasks(&config.attributes, &unblocked),
        tasks: unblocked,
        warning: obj.max_abs > config.threshold,
    };
    let blocks = block_design(&design, config.blocks, seed)?;
    for (t, b) in design.tasks.iter_mut().zip(blocks) {
        t.block_id = b;
    }
    design.diagnostics = evaluate_design(&design);
    if design.warning {
        log::warn!(
            "design search stopped at max |correlation| {:.4} above threshold {}",
            design.diagnostics.max_abs_correlation,
            config.threshold
        );
    }
    Ok(design)
}

/// Equal-size blocks (ids `1..=n_blocks`) from a seeded shuffle followed by
/// first-improvement swaps between blocks until within-block level
/// imbalance stops decreasing.
pub fn block_design(design: &Design, n_blocks: usize, seed: u64) -> Result<Vec<u32>> {
    let n = design.tasks.len();
    if n_blocks == 0 || n % n_blocks != 0 {
        return Err(Error::Design(format!("{n} tasks are not divisible into {n_blocks} blocks")));
    }
    let size = n / n_blocks;
    let grid = to_levels(&design.schema, &design.tasks);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB10C);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut blocks = vec![0u32; n];
    for (pos, &i) in order.iter().enumerate() {
        blocks[i] = (pos / size) as u32 + 1;
    }
    if n_blocks == 1 {
        return Ok(blocks);
    }
    let mut current = imbalance(&design.schema, &grid, &blocks);
    loop {
        let mut improved = false;
        for i in 0..n {
            for j in i + 1..n {
                if blocks[i] == blocks[j] {
                    continue;
                }
                blocks.swap(i, j);
                let v = imbalance(&design.schema, &grid, &blocks);
                if v < current - 1e-12 {
                    current = v;
                    improved = true;
                } else {
                    blocks.swap(i, j);
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annuity_matches_direct_sum() {
        let direct: f64 = (1..=50).map(|t| 1.03f64.powi(-t)).sum();
        assert!((annuity_factor(0.03, 50) - direct).abs() < 1e-10);
        assert!((annuity_factor(0.03, 50) - 25.7298).abs() < 1e-4);
    }

    #[test]
    fn bounds_scale_with_households() {
        let a = levy_bounds(1e12, 1e5, 0.03, 50, 0.25).unwrap();
        let b = levy_bounds(1e12, 2e5, 0.03, 50, 0.25).unwrap();
        assert!((a.base / b.base - 2.0).abs() < 1e-12);
        assert!((a.upper / a.base - 1.25).abs() < 1e-12 && (a.lower / a.base - 0.75).abs() < 1e-12);
        let c = levy_bounds(1e12, 1e5, 0.03, 50, 0.0).unwrap();
        assert_eq!(c.lower, c.upper);
        assert!(levy_bounds(1e12, 0.0, 0.03, 50, 0.25).is_err());
    }

    #[test]
    fn indivisible_tasks_rejected() {
        let cfg = DesignConfig {
            tasks: 47,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn correlation_of_constant_column_is_one() {
        assert_eq!(correlation(&[1.0, 1.0], &[0.0, 1.0]), 1.0);
    }
}
