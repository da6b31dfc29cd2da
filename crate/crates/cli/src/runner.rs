//! Experiment drivers producing result tables.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use elastolod::correctors::default_chunk;
use elastolod::fe::DofMap;
use elastolod::linalg::{factorize_symmetric, C64};
use elastolod::mesh::{BoundaryKind, DomainSpec, StructuredMesh};
use elastolod::solver::{
    assemble_system, compute_error, manufactured_solution_3d, point_source_2d, quasi_optimality_ratio,
    solve_mspg_on, solve_standard_fem, FemSystem, MspgOptions, ProblemData, Reference, TwoLevel,
};
use elastolod::stability::{estimate_sweep, fit_growth, InfSupSample};
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig, Method};
use crate::kupradze_checks;
use crate::report::{ReportError, SolveRow, Table};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Result of one `run`.
#[derive(Debug)]
pub struct RunOutcome {
    pub table: Table,
    /// Rows whose solve failed.
    pub failures: usize,
    /// Written CSV file, if an output directory was given.
    pub csv: Option<PathBuf>,
    /// Extra comment lines written after the config echo.
    pub notes: Vec<String>,
}

/// Runs `cfg` on a pool of `cfg.threads` threads and writes the CSV (and any
/// field dumps) into `out_dir` when given.
pub fn run(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.into(), source })?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build()?;
    let (table, failures, notes) = pool.install(|| -> Result<_, RunError> {
        Ok(match cfg.experiment {
            Experiment::Cube3d | Experiment::Hole2d => {
                let rows = solve_rows(cfg, out_dir)?;
                let failures = rows.iter().filter(|r| r.failed()).count();
                (Table::from_solve_rows(&rows), failures, Vec::new())
            }
            Experiment::Infsup => infsup_table(cfg)?,
            Experiment::KupradzeVerify => {
                let t = kupradze_checks::verify_table(cfg);
                (t, 0, Vec::new())
            }
        })
    })?;
    let csv = match out_dir {
        Some(dir) => {
            let path = dir.join(&cfg.output);
            let mut comments = cfg.echo();
            comments.extend(notes.iter().cloned());
            table.write(&path, &comments)?;
            Some(path)
        }
        None => None,
    };
    Ok(RunOutcome { table, failures, csv, notes })
}

fn problem(cfg: &ExperimentConfig, k: f64) -> Result<ProblemData, ConfigError> {
    let material = cfg.material(k)?;
    Ok(match cfg.experiment {
        Experiment::Cube3d => manufactured_solution_3d(k, cfg.lambda, cfg.mu),
        _ => ProblemData { material, ..point_source_2d(k) },
    })
}

fn levels_between(coarse_h: f64, fine_h: f64) -> usize {
    (coarse_h / fine_h).log2().round() as usize
}

struct FineReference {
    system: FemSystem,
    u: Vec<C64>,
}

fn solve_rows(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<SolveRow>, RunError> {
    let h = cfg.fine_h[0];
    let mut rows = Vec::new();
    for &k in &cfg.k {
        let data = problem(cfg, k)?;
        let mut reference: Option<Result<FineReference, String>> = None;
        for &big_h in &cfg.coarse_h {
            let base = SolveRow {
                experiment: cfg.experiment.to_string(),
                k,
                coarse_h: big_h,
                fine_h: h,
                m: None,
                method: String::new(),
                dofs_coarse: 0,
                dofs_fine: 0,
                err_l2_rel: None,
                err_v_rel: None,
                galerkin_residual: None,
                quasi_opt_ratio: None,
                time_assembly_s: 0.0,
                time_correctors_s: 0.0,
                time_solve_s: 0.0,
                status: "ok".into(),
            };
            let mut planned: Vec<SolveRow> = Vec::new();
            for &method in &cfg.methods {
                match method {
                    Method::Fem => planned.push(SolveRow { method: "fem".into(), ..base.clone() }),
                    Method::Mspg => planned.extend(
                        cfg.m.iter().map(|&m| SolveRow { method: "mspg".into(), m: Some(m), ..base.clone() }),
                    ),
                }
            }
            let two = match TwoLevel::new(&data.domain, big_h, levels_between(big_h, h)) {
                Ok(t) => t,
                Err(e) => {
                    log::error!("k={k} H={big_h}: {e}");
                    rows.extend(planned.into_iter().map(|r| SolveRow { status: format!("failed: {e}"), ..r }));
                    continue;
                }
            };
            // one fine solve per k; every H shares the fine mesh
            let fine = reference.get_or_insert_with(|| {
                let t0 = Instant::now();
                let system = assemble_system(&two.fine, &data);
                let u = factorize_symmetric(&system.matrix, 0)
                    .and_then(|f| f.solve(&system.load))
                    .map_err(|e| e.to_string())?;
                log::info!("k={k}: fine reference with {} dofs in {:.2}s", u.len(), t0.elapsed().as_secs_f64());
                Ok(FineReference { system, u })
            });
            let fine = match fine {
                Ok(f) if f.system.dofs == two.interp.fine_dofs => f,
                Ok(_) => {
                    let msg = "failed: fine mesh of this H differs from the reference mesh".to_string();
                    rows.extend(planned.into_iter().map(|r| SolveRow { status: msg.clone(), ..r }));
                    continue;
                }
                Err(e) => {
                    let msg = format!("failed: fine reference: {e}");
                    rows.extend(planned.into_iter().map(|r| SolveRow { status: msg.clone(), ..r }));
                    continue;
                }
            };
            for row in planned {
                let done = solve_one(cfg, &data, &two, fine, row, out_dir)?;
                if done.failed() {
                    log::error!("k={k} H={big_h} {} m={:?}: {}", done.method, done.m, done.status);
                }
                rows.push(done);
            }
        }
    }
    Ok(rows)
}

fn solve_one(
    cfg: &ExperimentConfig,
    data: &ProblemData,
    two: &TwoLevel,
    fine: &FineReference,
    mut row: SolveRow,
    out_dir: Option<&Path>,
) -> Result<SolveRow, RunError> {
    let k = row.k;
    let fine_dofs = &two.interp.fine_dofs;
    row.dofs_fine = fine_dofs.num_dofs();
    row.dofs_coarse = two.interp.coarse_dofs.num_dofs();
    let u_fine = if row.method == "fem" {
        match solve_standard_fem(&two.coarse, data) {
            Ok(sol) => {
                row.time_assembly_s = sol.time_assembly_s;
                row.time_solve_s = sol.time_solve_s;
                two.interp.prolong(&sol.u).expect("coarse dofs")
            }
            Err(e) => return Ok(SolveRow { status: format!("failed: {e}"), ..row }),
        }
    } else {
        let opts = MspgOptions { m: row.m.unwrap_or(1), max_kh: cfg.max_kh, chunk: default_chunk() };
        match solve_mspg_on(two, data, &fine.system, Some(&fine.u), &opts) {
            Ok(sol) => {
                row.time_assembly_s = sol.time_assembly_s;
                row.time_correctors_s = sol.time_correctors_s;
                row.time_solve_s = sol.time_solve_s;
                row.galerkin_residual = sol.galerkin_residual;
                row.quasi_opt_ratio = Some(quasi_optimality_ratio(two, &fine.u, &sol.u_fine, k));
                sol.u_fine
            }
            Err(e) => return Ok(SolveRow { status: format!("failed: {e}"), ..row }),
        }
    };
    let err = match &data.exact {
        Some(ex) => compute_error(&two.fine, fine_dofs, &u_fine, Reference::Exact(ex.as_ref()), k),
        None => compute_error(&two.fine, fine_dofs, &u_fine, Reference::Discrete(&fine.u), k),
    };
    row.err_l2_rel = Some(err.rel_l2);
    row.err_v_rel = Some(err.rel_v);
    if cfg.dump_fields {
        if let Some(dir) = out_dir {
            let name = match row.m {
                Some(m) => format!("field_{}_k{}_H{}_{}_m{m}.txt", row.experiment, k, row.coarse_h, row.method),
                None => format!("field_{}_k{}_H{}_{}.txt", row.experiment, k, row.coarse_h, row.method),
            };
            let path = dir.join(name);
            dump_field(&path, &two.fine, fine_dofs, &u_fine).map_err(|source| RunError::Io { path, source })?;
        }
    }
    Ok(row)
}

/// `|u|` at every fine vertex: a header line, then `x y [z] |u|` per vertex.
pub fn dump_field(path: &Path, mesh: &StructuredMesh, dofs: &DofMap, u: &[C64]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let cells = mesh.cells_per_axis();
    writeln!(w, "# structured-grid dim={} h={:e} cells={} {} {} value=|u|", mesh.dim(), mesh.h(), cells[0], cells[1], cells[2])?;
    let d = mesh.dim();
    for v in 0..mesh.num_vertices() {
        let x = mesh.vertex_coords(v);
        let mag = dofs.first_dof(v).map_or(0.0, |f| u[f..f + d].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        let coords: Vec<String> = x[..d].iter().map(|c| format!("{c:.17e}")).collect();
        writeln!(w, "{} {mag:.17e}", coords.join(" "))?;
    }
    w.flush()
}

pub const INFSUP_HEADER: [&str; 6] = ["k", "h", "gamma", "iterations", "dofs", "status"];

fn infsup_table(cfg: &ExperimentConfig) -> Result<(Table, usize, Vec<String>), RunError> {
    let spec = DomainSpec::unit(cfg.dim, BoundaryKind::Robin);
    let points: Vec<(f64, f64)> = cfg.fine_h.iter().flat_map(|&h| cfg.k.iter().map(move |&k| (h, k))).collect();
    let mat = cfg.material(cfg.k[0])?;
    let results = estimate_sweep(&spec, &points, &mat);
    let mut table = Table::new(&INFSUP_HEADER);
    let mut failures = 0;
    let mut notes = Vec::new();
    for &h in &cfg.fine_h {
        let mut good: Vec<InfSupSample> = Vec::new();
        for (&(ph, k), res) in points.iter().zip(&results) {
            if ph != h {
                continue;
            }
            match res {
                Ok(s) => {
                    table.rows.push(vec![
                        k.to_string(),
                        h.to_string(),
                        s.gamma.to_string(),
                        s.iterations.to_string(),
                        s.dofs.to_string(),
                        "ok".into(),
                    ]);
                    good.push(*s);
                }
                Err(e) => {
                    failures += 1;
                    log::error!("inf-sup k={k} h={h}: {e}");
                    table.rows.push(vec![k.to_string(), h.to_string(), String::new(), String::new(), String::new(), format!("failed: {e}")]);
                }
            }
        }
        match fit_growth(&good) {
            Ok(fit) => notes.push(format!(
                "growth fit h={h}: exponent={} prefactor={} residual={}",
                fit.exponent, fit.prefactor, fit.residual
            )),
            Err(e) => notes.push(format!("growth fit h={h}: {e}")),
        }
    }
    Ok((table, failures, notes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text, None).unwrap()
    }

    #[test]
    fn hole2d_writes_one_row_per_method_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("experiment = hole2d\nk = 4\nH = 2^-3\nh = 2^-5\nm = 1, 2\nmethods = fem, mspg\noutput = r.csv\n");
        let out = run(&c, Some(dir.path())).unwrap();
        assert_eq!(out.failures, 0);
        assert_eq!(out.table.rows.len(), 3);
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(text.starts_with("# experiment = hole2d\n"));
        assert!(text.contains("\nexperiment,k,H,h,m,method,dofs_coarse"));
        let back = Table::read(&dir.path().join("r.csv")).unwrap();
        assert_eq!(back, out.table);
    }

    #[test]
    fn degenerate_mesh_pair_matches_fem() {
        let c = cfg("experiment = hole2d\nk = 4\nH = 2^-3\nh = 2^-3\nm = 1\n");
        let out = run(&c, None).unwrap();
        let err = out.table.column("err_V_rel").unwrap();
        let (a, b): (f64, f64) = (out.table.rows[0][err].parse().unwrap(), out.table.rows[1][err].parse().unwrap());
        // both are rounding-level: the reference is the same fine solve
        assert!((a - b).abs() <= 1e-12, "{a} {b}");
    }

    #[test]
    fn field_dump_has_one_line_per_vertex() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("experiment = hole2d\nk = 2\nH = 2^-3\nh = 2^-4\nmethods = fem\ndump_fields = true\n");
        run(&c, Some(dir.path())).unwrap();
        let dump = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("field_"))
            .unwrap();
        let text = std::fs::read_to_string(dump).unwrap();
        let mesh = StructuredMesh::build(&DomainSpec::square_with_hole(), 1.0 / 16.0).unwrap();
        assert_eq!(text.lines().count(), 1 + mesh.num_vertices());
    }

    #[test]
    fn infsup_rows_and_fit_note() {
        let c = cfg("experiment = infsup\ndim = 2\nk = 1, 2, 3\nh = 2^-3\n");
        let out = run(&c, None).unwrap();
        assert_eq!(out.table.rows.len(), 3);
        assert!(out.notes[0].starts_with("growth fit h=0.125: exponent="));
    }
}
