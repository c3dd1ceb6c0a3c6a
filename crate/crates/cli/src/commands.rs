use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pqcrit::eigen::{
    eigen_gap_report, eigs_continuation, eigs_linear_p2, first_eigen_p, parse_eigen_sequence, EigenMethod,
    EigenPair, EigenSequence,
};
use pqcrit::fem::{holder_audit, FemFunction, FemSpace, HolderSlack, Regularization};
use pqcrit::json::to_json_string;
use pqcrit::mesh::{build_box_mesh, parse_mesh};
use pqcrit::thresholds::ThresholdResult;
use pqcrit::variational::{
    geometry_audit, mountain_pass, origin_audit, predicted_threshold, ps_diagnostic, scan_lambda, seed_endpoints,
    GeometryAuditReport, OriginAuditReport, PsReport, SolverConfig,
};
use pqcrit::ProblemParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::settings::{usage, CliError, CliResult, Run, Settings};

/// Shared execution context of one command.
pub struct Ctx {
    pub settings: Settings,
    pub run: Run,
    pub threads: usize,
}

impl Ctx {
    fn parallel(&self) -> bool {
        self.threads > 1
    }
}

fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn load_space(ctx: &mut Ctx) -> CliResult<Arc<FemSpace>> {
    let path = ctx.settings.opt_path("mesh")?.ok_or_else(|| usage("missing required setting 'mesh'"))?;
    let text = ctx.settings.input(&path)?;
    let mesh = parse_mesh(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(FemSpace::with_parallel(mesh, ctx.parallel())?)
}

fn params_from(ctx: &mut Ctx, n: usize, volume: f64) -> CliResult<ProblemParams> {
    let p = ctx.settings.get("p", 2.0)?;
    let r: f64 = ctx.settings.require("r")?;
    let mut params = ProblemParams::new(n, p, r, volume)?;
    if let Some(q) = ctx.settings.opt::<f64>("q")? {
        params = params.with_q(q)?;
    }
    Ok(params)
}

fn solver_config(ctx: &mut Ctx) -> CliResult<SolverConfig> {
    let d = SolverConfig::default();
    let s = &mut ctx.settings;
    let cfg = SolverConfig {
        grad_tol: s.get("grad-tol", d.grad_tol)?,
        max_iter: s.get("max-iter", d.max_iter)?,
        nodes: s.get("nodes", d.nodes)?,
        delta: s.get("delta", d.delta)?,
        energy_sep: s.get("energy-sep", d.energy_sep)?,
        seed: s.get("seed", d.seed)?,
        step: s.get("step", d.step)?,
        newton_switch: s.get("newton-switch", d.newton_switch)?,
        max_newton: s.get("max-newton", d.max_newton)?,
        max_rounds: s.get("max-rounds", d.max_rounds)?,
        regularization: Regularization {
            enabled: true,
            epsilon: s.get("epsilon", d.regularization.epsilon)?,
        },
        parallel: ctx.threads > 1,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Eigenpairs from `eigs` (a JSON file) or computed on `space`.
fn obtain_eigs(ctx: &mut Ctx, space: &Arc<FemSpace>, p: f64, m: usize, save: bool) -> CliResult<EigenSequence> {
    if let Some(path) = ctx.settings.opt_path("eigs")? {
        return load_eigs(ctx, space, &path, m);
    }
    let method: String = ctx.settings.get("method", "auto".to_string())?;
    let steps: usize = ctx.settings.get("steps", 8)?;
    let seed: u64 = ctx.settings.get("seed", 0)?;
    let seq = compute_eigs(space, p, m, &method, steps, seed)?;
    if save {
        write_eigs(ctx, &seq)?;
    }
    Ok(seq)
}

fn compute_eigs(space: &Arc<FemSpace>, p: f64, m: usize, method: &str, steps: usize, seed: u64) -> CliResult<EigenSequence> {
    match method {
        "auto" if p == 2.0 => Ok(eigs_linear_p2(space, m)?),
        "linear" => {
            if p != 2.0 {
                return Err(usage("method linear requires p = 2"));
            }
            Ok(eigs_linear_p2(space, m)?)
        }
        "auto" | "continuation" => Ok(eigs_continuation(space, p, m, steps)?),
        "first" => {
            if m != 1 {
                return Err(usage("method first computes only m = 1"));
            }
            let pair = first_eigen_p(space, p, seed)?;
            Ok(EigenSequence {
                pairs: vec![pair],
                p,
                method: EigenMethod::InverseIterationFirst,
                mesh_id: space.checksum().to_string(),
            })
        }
        other => Err(usage(format!("unknown eigen method '{other}'"))),
    }
}

fn write_eigs(ctx: &mut Ctx, seq: &EigenSequence) -> CliResult<()> {
    let mut files = Vec::with_capacity(seq.len());
    for (i, pair) in seq.pairs.iter().enumerate() {
        let name = format!("eig_{:03}.txt", i + 1);
        ctx.run.write(&ctx.settings, &name, &pair.function.to_text())?;
        files.push(name);
    }
    let json = to_json_string(&seq.to_record(&files))?;
    ctx.run.write(&ctx.settings, "eigs.json", &json)?;
    Ok(())
}

fn load_eigs(ctx: &mut Ctx, space: &Arc<FemSpace>, path: &Path, m: usize) -> CliResult<EigenSequence> {
    let text = ctx.settings.input(path)?;
    let rec = parse_eigen_sequence(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if rec.mesh_checksum != space.checksum() {
        return Err(usage(format!(
            "{} belongs to mesh {}, not {}",
            path.display(),
            rec.mesh_checksum,
            space.checksum()
        )));
    }
    if rec.pairs.len() < m {
        return Err(usage(format!("{} has {} pairs, need {m}", path.display(), rec.pairs.len())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::with_capacity(rec.pairs.len());
    for (i, e) in rec.pairs.iter().enumerate() {
        let file = e
            .coefficients
            .as_ref()
            .ok_or_else(|| usage(format!("pair {} has no coefficient file", i + 1)))?;
        let text = ctx.settings.input(&base.join(file))?;
        pairs.push(EigenPair {
            value: e.value,
            function: FemFunction::from_text(space.clone(), &text)?,
            residual: e.residual,
        });
    }
    Ok(EigenSequence {
        pairs,
        p: rec.p,
        method: rec.method,
        mesh_id: rec.mesh_checksum,
    })
}

pub fn mesh(ctx: &mut Ctx) -> CliResult<()> {
    let dim: usize = ctx.settings.require("dim")?;
    let mut divisions: Vec<usize> = ctx.settings.opt_list("divisions")?.ok_or_else(|| usage("missing required setting 'divisions'"))?;
    if divisions.len() == 1 {
        divisions = vec![divisions[0]; dim];
    }
    let lengths: Vec<f64> = match ctx.settings.opt_list("lengths")? {
        Some(l) if l.len() == 1 => vec![l[0]; dim],
        Some(l) => l,
        None => vec![1.0; dim],
    };
    let mesh = build_box_mesh(dim, &divisions, &lengths)?;
    ctx.run.write(&ctx.settings, "mesh.txt", &mesh.to_text())?;
    println!("vertices {}", mesh.num_vertices());
    println!("cells {}", mesh.num_cells());
    println!("volume {}", g17(mesh.volume()));
    println!("checksum {}", mesh.checksum());
    Ok(())
}

pub fn eigs(ctx: &mut Ctx) -> CliResult<()> {
    let space = load_space(ctx)?;
    let p = ctx.settings.get("p", 2.0)?;
    let m: usize = ctx.settings.require("m")?;
    let seq = obtain_eigs(ctx, &space, p, m, true)?;
    println!("method {}", seq.method.as_str());
    for (i, pair) in seq.pairs.iter().enumerate() {
        println!("lambda_{} {} residual {}", i + 1, g17(pair.value), g17(pair.residual));
    }
    if seq.len() >= 2 {
        let gaps = eigen_gap_report(&seq)?;
        let mut cluster: Vec<usize> = Vec::new();
        for g in &gaps {
            if g.near_multiple {
                for k in [g.m, g.m + 1] {
                    if !cluster.contains(&k) {
                        cluster.push(k);
                    }
                }
            }
            println!("gap {} {}{}", g.m, g17(g.gap), if g.near_multiple { " near-multiple" } else { "" });
        }
        if !cluster.is_empty() {
            let list: Vec<String> = cluster.iter().map(|k| k.to_string()).collect();
            println!("cluster m = {}", list.join(","));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ThresholdTable {
    model: String,
    eigen_method: String,
    n: usize,
    p: f64,
    q: Option<f64>,
    r: f64,
    volume: f64,
    rows: Vec<ThresholdResult>,
}

pub fn threshold_rows_csv(rows: &[ThresholdResult], method: &str) -> String {
    let mut s = String::from("m,lambda_m,tau_star,sup_value,threshold,all_lambda_admissible,eigen_method\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.m,
            g17(r.lambda_m),
            g17(r.tau_star),
            g17(r.sup_value),
            g17(r.threshold),
            r.all_lambda_admissible,
            method
        );
    }
    s
}

pub fn threshold(ctx: &mut Ctx) -> CliResult<()> {
    let mesh_path = ctx.settings.opt_path("mesh")?;
    let (n, volume, space) = match &mesh_path {
        Some(_) => {
            let space = load_space(ctx)?;
            if let Some(n) = ctx.settings.opt::<usize>("n")? {
                if n != space.dim() {
                    return Err(usage(format!("n = {n} but the mesh has dimension {}", space.dim())));
                }
            }
            (space.dim(), space.volume(), Some(space))
        }
        None => {
            let n: usize = ctx.settings.require("n")?;
            let volume: f64 = ctx.settings.require("volume")?;
            (n, volume, None)
        }
    };
    let params = params_from(ctx, n, volume)?;
    let (values, method) = match ctx.settings.opt_list::<f64>("lambdas-m")? {
        Some(v) => (v, "direct".to_string()),
        None => {
            let path: PathBuf = ctx
                .settings
                .opt_path("eigs")?
                .ok_or_else(|| usage("need lambdas-m values or an eigs file"))?;
            let text = ctx.settings.input(&path)?;
            let rec = parse_eigen_sequence(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if let Some(space) = &space {
                if rec.mesh_checksum != space.checksum() {
                    return Err(usage("eigs file belongs to a different mesh"));
                }
            }
            (rec.values(), rec.method.as_str().to_string())
        }
    };
    if values.is_empty() {
        return Err(usage("no eigenvalues given"));
    }
    let m_max: usize = ctx.settings.get("m-max", values.len())?;
    if m_max == 0 || m_max > values.len() {
        return Err(usage(format!("m-max must lie in 1..={}", values.len())));
    }
    let rows = (1..=m_max)
        .map(|m| predicted_threshold(m, values[m - 1], &params))
        .collect::<pqcrit::Result<Vec<_>>>()?;
    let table = ThresholdTable {
        model: params.model().as_str().to_string(),
        eigen_method: method.clone(),
        n,
        p: params.p,
        q: params.q,
        r: params.r,
        volume,
        rows: rows.clone(),
    };
    ctx.run.write(&ctx.settings, "thresholds.json", &to_json_string(&table)?)?;
    ctx.run.write(&ctx.settings, "thresholds.csv", &threshold_rows_csv(&rows, &method))?;
    for r in &rows {
        println!("m {} lambda_m {} threshold {}{}", r.m, g17(r.lambda_m), g17(r.threshold), if r.all_lambda_admissible { " all-lambda" } else { "" });
    }
    Ok(())
}

#[derive(Serialize)]
struct HolderRow {
    function: String,
    slack: HolderSlack,
    min: f64,
}

#[derive(Serialize)]
struct AuditReport {
    lambda: f64,
    origin: OriginAuditReport,
    geometry: GeometryAuditReport,
    geometry_both_hold: bool,
    envelope_ok: bool,
    holder: Vec<HolderRow>,
    holder_min: f64,
}

pub fn energy_audit(ctx: &mut Ctx) -> CliResult<()> {
    let space = load_space(ctx)?;
    let lambda: f64 = ctx.settings.require("lambda")?;
    let params = params_from(ctx, space.dim(), space.volume())?.with_lambda(lambda)?;
    let m: usize = ctx.settings.get("m", 1)?;
    let radii: Vec<f64> = match ctx.settings.opt_list("radii")? {
        Some(r) => r,
        None => vec![0.01, 0.1, 0.5, 1.0, 2.0],
    };
    let cfg = solver_config(ctx)?;
    let eigs = obtain_eigs(ctx, &space, params.p, m, false)?;
    let origin = origin_audit(&space, &params, &radii, &cfg)?;
    let geometry = geometry_audit(&space, &params, m, &eigs)?;
    let mut holder = Vec::new();
    for (i, e) in eigs.pairs.iter().enumerate() {
        let s = holder_audit(&e.function, &params)?;
        holder.push(HolderRow {
            function: format!("eig_{}", i + 1),
            min: s.min(),
            slack: s,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..10 {
        let u = FemFunction::random(space.clone(), &mut rng);
        let s = holder_audit(&u, &params)?;
        holder.push(HolderRow {
            function: format!("random_{}", i + 1),
            min: s.min(),
            slack: s,
        });
    }
    let holder_min = holder.iter().map(|h| h.min).fold(f64::INFINITY, f64::min);
    for row in &origin.rows {
        println!("origin radius {} min_energy {}{}", g17(row.radius), g17(row.min_energy), if row.positive { "" } else { " nonpositive" });
    }
    println!("ray audit {}/{}", origin.ray.passed, origin.ray.directions);
    match geometry.feasible_radius {
        Some(r) => println!("geometry both inequalities hold at R = {}", g17(r)),
        None => println!("geometry inequalities not both satisfied on the R grid"),
    }
    println!("envelope max violation {}", g17(geometry.envelope_max_violation));
    println!("holder min slack {}", g17(holder_min));
    let report = AuditReport {
        lambda,
        geometry_both_hold: geometry.both_hold(),
        envelope_ok: geometry.envelope_ok(),
        origin,
        geometry,
        holder,
        holder_min,
    };
    ctx.run.write(&ctx.settings, "audit.json", &to_json_string(&report)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SolveReport {
    lambda: f64,
    direction: usize,
    flipped: bool,
    ceiling: f64,
    converged: bool,
    energy: Option<f64>,
    grad_dual_norm: Option<f64>,
    pair_tag: Option<String>,
    iterations: Option<usize>,
    reason: Option<String>,
    function: Option<String>,
    ps: PsReport,
}

pub fn solve(ctx: &mut Ctx) -> CliResult<()> {
    let space = load_space(ctx)?;
    let lambda: f64 = ctx.settings.require("lambda")?;
    let params = params_from(ctx, space.dim(), space.volume())?.with_lambda(lambda)?;
    let direction: usize = ctx.settings.get("direction", 1)?;
    if direction == 0 {
        return Err(usage("direction counts from 1"));
    }
    let flip = ctx.settings.flag("flip")?;
    let cfg = solver_config(ctx)?;
    let eigs = obtain_eigs(ctx, &space, params.p, direction, false)?;
    let mut endpoint = seed_endpoints(&params, &cfg, direction, &eigs)?.swap_remove(direction - 1);
    if flip {
        endpoint = endpoint.scaled(-1.0);
    }
    let ceiling = pqcrit::sobolev::ps_ceiling(params.n, params.p)?;
    let (report, result) = match mountain_pass(&params, &cfg, &endpoint) {
        Ok(cp) => {
            ctx.run.write(&ctx.settings, "critical.txt", &cp.function.to_text())?;
            println!("energy {}", g17(cp.energy));
            println!("grad_dual_norm {}", g17(cp.grad_dual_norm));
            println!("ceiling {}", g17(ceiling));
            (
                SolveReport {
                    lambda,
                    direction,
                    flipped: flip,
                    ceiling,
                    converged: true,
                    energy: Some(cp.energy),
                    grad_dual_norm: Some(cp.grad_dual_norm),
                    pair_tag: Some(cp.pair_tag.clone()),
                    iterations: Some(cp.iterations),
                    reason: None,
                    function: Some("critical.txt".into()),
                    ps: ps_diagnostic(&cp.trace, ceiling),
                },
                Ok(()),
            )
        }
        Err(f) => {
            eprintln!("{f}");
            (
                SolveReport {
                    lambda,
                    direction,
                    flipped: flip,
                    ceiling,
                    converged: false,
                    energy: f.candidate.as_ref().map(|c| c.1),
                    grad_dual_norm: None,
                    pair_tag: None,
                    iterations: Some(f.trace.len()),
                    reason: Some(f.reason.clone()),
                    function: None,
                    ps: f.ps.clone(),
                },
                Err(CliError::Solver(f.to_string())),
            )
        }
    };
    ctx.run.write(&ctx.settings, "critical.json", &to_json_string(&report)?)?;
    result
}

pub fn scan(ctx: &mut Ctx) -> CliResult<()> {
    let space = load_space(ctx)?;
    let params = params_from(ctx, space.dim(), space.volume())?;
    let lambdas: Vec<f64> = ctx.settings.opt_list("lambdas")?.unwrap_or_default();
    if lambdas.is_empty() {
        return Err(usage("empty lambda grid"));
    }
    let m_max: usize = ctx.settings.get("m-max", 2)?;
    let cfg = solver_config(ctx)?;
    let eigs = obtain_eigs(ctx, &space, params.p, m_max, true)?;
    let scan = scan_lambda(&params, &lambdas, &cfg, m_max, &eigs)?;
    ctx.run.write(&ctx.settings, "scan.json", &scan.report.to_json()?)?;
    ctx.run.write(&ctx.settings, "scan.csv", &scan.report.to_csv())?;
    for (i, pairs) in scan.pairs.iter().enumerate() {
        for (k, cp) in pairs.iter().enumerate() {
            let name = format!("pairs/lambda_{:02}_pair_{:02}.txt", i + 1, k + 1);
            ctx.run.write(&ctx.settings, &name, &cp.function.to_text())?;
        }
    }
    for (l, c) in scan.report.lambdas.iter().zip(&scan.report.counts) {
        println!("lambda {} count {c}", g17(*l));
    }
    for t in &scan.report.thresholds {
        println!("m {} predicted_threshold {}", t.m, g17(t.threshold));
    }
    Ok(())
}
