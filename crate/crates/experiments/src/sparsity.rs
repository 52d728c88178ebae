//! Row counts of lumped and consistent mass matrices and their inverses.

use std::sync::Arc;

use dualcell::assembly::{consistent_mass, lumped_mass, MaterialField};
use dualcell::mesh::{six_element_square, MicroCellMesh, Triangulation};
use dualcell::sparse::SparseOperator;
use dualcell::spaces::{DofMap, SpaceSpec};

use crate::config::{ExperimentConfig, MeshSource};
use crate::output::{num, Check, CsvTable, Report};
use crate::{map_cases, Result};

/// Nonzeros per row: maximum and mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowStats {
    pub max: usize,
    pub mean: f64,
}

impl RowStats {
    pub fn of(a: &SparseOperator) -> Self {
        let n = a.rows().max(1);
        Self { max: a.max_row_nnz(), mean: a.nnz() as f64 / n as f64 }
    }

    fn from_counts(c: &[usize]) -> Self {
        let n = c.len().max(1);
        Self { max: c.iter().copied().max().unwrap_or(0), mean: c.iter().sum::<usize>() as f64 / n as f64 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityRow {
    pub space: &'static str,
    pub degree: usize,
    pub dofs: usize,
    pub lumped: RowStats,
    pub lumped_inverse: RowStats,
    /// Largest lumped block (structural).
    pub lumped_block: usize,
    pub consistent: RowStats,
    /// Inverse row counts from the connected components of the pattern.
    pub consistent_inverse: RowStats,
}

/// Connected-component size of every row of a symmetric pattern.
fn component_sizes(a: &SparseOperator) -> Vec<usize> {
    let n = a.rows();
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        comp[start] = id;
        let mut count = 0;
        while let Some(r) = stack.pop() {
            count += 1;
            for (c, _) in a.row(r) {
                if comp[c] == usize::MAX {
                    comp[c] = id;
                    stack.push(c);
                }
            }
        }
        sizes.push(count);
    }
    comp.iter().map(|&c| sizes[c]).collect()
}

pub fn measure(mesh: &Arc<MicroCellMesh>, spec: SpaceSpec, space: &'static str) -> Result<SparsityRow> {
    let d = DofMap::new(spec, mesh.clone())?;
    let one = MaterialField::uniform(mesh.triangulation().num_triangles(), 1.0)?;
    let lumped = lumped_mass(&d, &one)?;
    let inv = lumped.invert()?;
    let cons = consistent_mass(&d, &one)?;
    Ok(SparsityRow {
        space,
        degree: spec.degree,
        dofs: d.total_dofs(),
        lumped: RowStats::of(&lumped.to_sparse()),
        lumped_inverse: RowStats::of(&inv.to_sparse()),
        lumped_block: lumped.max_block_size(),
        consistent: RowStats::of(&cons),
        consistent_inverse: RowStats::from_counts(&component_sizes(&cons)),
    })
}

/// Scalar (primal) and vector (dual curl) rows for each degree.
pub fn sweep(tri: &Triangulation, degrees: &[usize], parallel: bool) -> Result<Vec<SparsityRow>> {
    let mesh = Arc::new(MicroCellMesh::from_triangulation(tri)?);
    let jobs: Vec<(usize, bool)> = degrees.iter().flat_map(|&p| [(p, false), (p, true)]).collect();
    map_cases(parallel, &jobs, |&(p, vector)| {
        if vector {
            measure(&mesh, SpaceSpec::dual_curl(p), "vector")
        } else {
            measure(&mesh, SpaceSpec::primal_grad(p), "scalar")
        }
    })
    .into_iter()
    .collect()
}

pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let tri = match &config.mesh {
        MeshSource::File(path) => {
            let f = std::fs::File::open(path)?;
            dualcell::mesh::load_triangulation(std::io::BufReader::new(f))?
        }
        MeshSource::Structured { .. } => six_element_square(),
    };
    let rows = sweep(&tri, &config.degrees, config.parallel)?;
    let mut table = CsvTable::new(&[
        "space",
        "P",
        "dofs",
        "lumped_max",
        "lumped_mean",
        "lumped_inverse_max",
        "lumped_inverse_mean",
        "lumped_block",
        "consistent_max",
        "consistent_mean",
        "consistent_inverse_max",
        "consistent_inverse_mean",
    ]);
    for r in &rows {
        table.push(vec![
            r.space.into(),
            r.degree.to_string(),
            r.dofs.to_string(),
            r.lumped.max.to_string(),
            num(r.lumped.mean),
            r.lumped_inverse.max.to_string(),
            num(r.lumped_inverse.mean),
            r.lumped_block.to_string(),
            r.consistent.max.to_string(),
            num(r.consistent.mean),
            r.consistent_inverse.max.to_string(),
            num(r.consistent_inverse.mean),
        ]);
    }
    let mut report = Report::default();
    report.files.push(table.write(&config.out, "sparsity.csv", &format!("config: {config}"))?);
    let scalar: Vec<&SparsityRow> = rows.iter().filter(|r| r.space == "scalar").collect();
    let vector: Vec<&SparsityRow> = rows.iter().filter(|r| r.space == "vector").collect();
    let smax = scalar.iter().map(|r| r.lumped_inverse.max).max().unwrap_or(0);
    report.checks.push(Check::at_most("sparsity scalar lumped inverse nnz/row", smax as f64, 1.0));
    let vmax = vector.iter().map(|r| r.lumped_inverse.max).max().unwrap_or(0);
    report.checks.push(Check::at_most("sparsity vector lumped inverse nnz/row", vmax as f64, 2.0));
    let blocks: Vec<usize> = vector.iter().filter(|r| r.degree >= 1).map(|r| r.lumped_block).collect();
    if blocks.len() >= 2 {
        report.checks.push(Check::flag(
            "sparsity vector lumped block size independent of P",
            blocks.iter().all(|&b| b == blocks[0]),
        ));
    }
    let grow: Vec<usize> = [1, 2, 4]
        .iter()
        .filter_map(|p| vector.iter().find(|r| r.degree == *p).map(|r| r.consistent_inverse.max))
        .collect();
    if grow.len() == 3 {
        report.checks.push(Check::flag(
            "sparsity consistent vector inverse grows over P=1,2,4",
            grow[0] < grow[1] && grow[1] < grow[2],
        ));
    }
    Ok(report)
}
