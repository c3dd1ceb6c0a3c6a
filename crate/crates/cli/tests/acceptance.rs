//! The twelve acceptance criteria, run in order with one summary line each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use pqcrit::bracket::{sup_tau, BracketFunction, PowerTerm};
use pqcrit::eigen::{eigs_linear_p2, first_eigen_p};
use pqcrit::fem::{
    assemble_potentials, holder_audit, pair_operators, Exponents, FemFunction, FemSpace, Regularization,
};
use pqcrit::mesh::build_box_mesh;
use pqcrit::sobolev::{ps_ceiling, sobolev_constant, sobolev_radial_quadrature};
use pqcrit::thresholds::{nu_general, nu_resonant, threshold_bracket, threshold_p, threshold_pq};
use pqcrit::variational::{endpoint_scale, mountain_pass, SolverConfig};
use pqcrit::{HypothesisConstants, ProblemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn term(coeff: f64, exponent: f64) -> PowerTerm {
    PowerTerm { coeff, exponent }
}

/// Max of `f` over `points` log-uniform samples of `[1e-6, 1e6]`.
fn grid_max(f: &BracketFunction, points: usize) -> f64 {
    let (lo, hi) = (1e-6f64.ln(), 1e6f64.ln());
    (0..points)
        .into_par_iter()
        .map(|i| f.eval((lo + (hi - lo) * i as f64 / (points - 1) as f64).exp()))
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

fn random_p_params(rng: &mut ChaCha8Rng) -> ProblemParams {
    let n = rng.gen_range(3..=5usize);
    let p = rng.gen_range(1.4..(n as f64 - 0.4).min(2.6));
    let pstar = n as f64 * p / (n as f64 - p);
    let r = p + rng.gen_range(0.1..0.9) * (pstar - p);
    ProblemParams::new(n, p, r, rng.gen_range(0.3..3.0)).unwrap()
}

fn random_constants(rng: &mut ChaCha8Rng, resonant: bool) -> HypothesisConstants {
    let p = rng.gen_range(1.5..2.5);
    let pstar = p + rng.gen_range(1.0..4.0);
    let r = if resonant { p } else { p + rng.gen_range(0.1..0.9) * (pstar - p) };
    HypothesisConstants {
        alpha0: 0.0,
        alpha: rng.gen_range(0.1..3.0),
        beta: rng.gen_range(0.3..3.0),
        gamma: rng.gen_range(0.3..3.0),
        cstar: rng.gen_range(0.1..3.0),
        p,
        q: Some(rng.gen_range(1.05..p - 0.05)),
        r,
        pstar,
    }
}

/// One bracket of each family per round: the p-Laplacian bound, its (p,q)
/// variant, the abstract bound and the resonant bound.
fn bracket_battery(count: usize, seed: u64) -> Vec<(&'static str, BracketFunction)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let lm = rng.gen_range(1.0..300.0);
        let f = match out.len() % 4 {
            0 => {
                let params = random_p_params(&mut rng);
                let s = sobolev_constant(params.n, params.p).unwrap();
                ("p", threshold_bracket(lm, &params, s, 0.0))
            }
            1 => {
                let params = random_p_params(&mut rng);
                let q = rng.gen_range(1.05..params.p - 0.05);
                let params = params.with_q(q).unwrap();
                let s = sobolev_constant(params.n, params.p).unwrap();
                ("pq", threshold_bracket(lm, &params, s, 1.0))
            }
            2 => {
                let h = random_constants(&mut rng, false);
                let (p, q, r) = (h.p, h.q.unwrap(), h.r);
                let terms = vec![
                    term(lm / p, -(r - p)),
                    term(h.alpha * lm.powf(q / p) / q, -(r - q)),
                    term(-h.cstar, -r),
                    term(-h.gamma / h.pstar, h.pstar - r),
                ];
                let b = BracketFunction::new(terms).unwrap();
                let lib = nu_general(1, &h, lm).unwrap().sup_value;
                assert_eq!(lib, sup_tau(&b, 1e-12).unwrap().value);
                ("general", b)
            }
            _ => {
                let h = random_constants(&mut rng, true);
                let (p, q) = (h.p, h.q.unwrap());
                let terms = vec![
                    term(h.alpha * lm.powf(q / p) / q, -(p - q)),
                    term(-h.cstar, -p),
                    term(-h.gamma / h.pstar, h.pstar - p),
                ];
                let b = BracketFunction::new(terms).unwrap();
                let lib = nu_resonant(1, &h, lm).unwrap().sup_value;
                assert_eq!(lib, sup_tau(&b, 1e-12).unwrap().value);
                ("resonant", b)
            }
        };
        let s = sup_tau(&f.1, 1e-12).unwrap();
        if s.tau_star > 1e-5 && s.tau_star < 1e5 {
            out.push(f);
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let battery = bracket_battery(100, 1);
    let mut worst: f64 = 0.0;
    for (_, f) in &battery {
        let s = sup_tau(f, 1e-12).map_err(|e| e.to_string())?;
        let g = grid_max(f, 1_000_000);
        worst = worst.max(rel(s.value, g));
    }
    check(worst < 1e-6, format!("max rel err {worst:.2e} over {} brackets", battery.len()))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let params = random_p_params(&mut rng);
        let (n, p, r, vol) = (params.n, params.p, params.r, params.volume);
        let lm = rng.gen_range(1.0..500.0);
        let h = HypothesisConstants {
            alpha0: 0.0,
            alpha: 0.0,
            beta: vol.powf(1.0 - r / p),
            gamma: vol.powf(-p / (n as f64 - p)),
            cstar: ps_ceiling(n, p).unwrap(),
            p,
            q: None,
            r,
            pstar: params.pstar(),
        };
        let a = nu_general(1, &h, lm).unwrap().threshold;
        let b = threshold_p(1, lm, &params).unwrap().threshold;
        worst = worst.max(rel(a, b));
    }
    check(worst < 1e-10, format!("max rel err {worst:.2e} over 50 parameter sets"))
}

fn criterion_3() -> Outcome {
    let battery = bracket_battery(40, 3);
    for (family, f) in &battery {
        let s = sup_tau(f, 1e-12).unwrap();
        if !(f.eval(1e-9) < s.value && f.eval(1e9) < s.value) {
            return Err(format!("{family} bracket end value above its supremum"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..10 {
        let params = random_p_params(&mut rng);
        let q = rng.gen_range(1.05..params.p - 0.05);
        let pq = params.with_q(q).unwrap();
        let (mut prev_p, mut prev_q) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut lm = 0.5;
        for _ in 0..40 {
            let a = threshold_p(1, lm, &params).unwrap().threshold;
            let b = threshold_pq(1, lm, &pq).unwrap().threshold;
            if a < prev_p || b < prev_q {
                return Err(format!("threshold decreased at lambda_m = {lm}"));
            }
            prev_p = a;
            prev_q = b;
            lm *= 2.0;
        }
        if prev_p < 1e9 {
            return Err(format!("threshold only reached {prev_p:.3e} along the doubling sequence"));
        }
    }
    Ok(format!("{} bracket ends below sup; 10 doubling sequences pass 1e9", battery.len()))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (n, p) in [(3, 2.0), (4, 2.0), (3, 1.5)] {
        let a = sobolev_constant(n, p).map_err(|e| e.to_string())?;
        let b = sobolev_radial_quadrature(n, p).map_err(|e| e.to_string())?;
        worst = worst.max(rel(a, b));
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4 && secs < 5.0, format!("max rel err {worst:.2e} in {secs:.2} s"))
}

/// Divisions whose Kuhn cells have diameter at most `h` on the unit box.
fn divisions_for(dim: usize, h: f64) -> usize {
    ((dim as f64).sqrt() / h).ceil() as usize
}

fn unit_box(dim: usize, div: usize) -> Arc<FemSpace> {
    FemSpace::new(build_box_mesh(dim, &vec![div; dim], &vec![1.0; dim]).unwrap()).unwrap()
}

fn criterion_5_6() -> (Outcome, Outcome) {
    let pi2 = std::f64::consts::PI.powi(2);
    let start = Instant::now();
    let cube = unit_box(3, divisions_for(3, 1.0 / 16.0));
    let square = unit_box(2, divisions_for(2, 1.0 / 32.0));
    let c = match eigs_linear_p2(&cube, 4) {
        Ok(c) => c,
        Err(e) => return (Err(e.to_string()), Err("no linear sequence".into())),
    };
    let s = match eigs_linear_p2(&square, 1) {
        Ok(s) => s,
        Err(e) => return (Err(e.to_string()), Err("no linear sequence".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    let e1 = rel(c.pairs[0].value, 3.0 * pi2);
    let e24 = (1..4).map(|k| rel(c.pairs[k].value, 6.0 * pi2)).fold(0.0, f64::max);
    let es = rel(s.pairs[0].value, 2.0 * pi2);
    let five = check(
        e1 < 0.02 && e24 < 0.02 && es < 0.01 && secs < 60.0,
        format!("cube l1 {:.2}%, l2..l4 {:.2}%, square l1 {:.2}% in {secs:.1} s", 100.0 * e1, 100.0 * e24, 100.0 * es),
    );
    let mut worst: f64 = 0.0;
    for (space, lin) in [(&cube, c.pairs[0].value), (&square, s.pairs[0].value)] {
        match first_eigen_p(space, 2.0, 0) {
            Ok(e) => worst = worst.max(rel(e.value, lin)),
            Err(e) => return (five, Err(e.to_string())),
        }
    }
    (five, check(worst < 1e-6, format!("max rel err {worst:.2e} on both meshes")))
}

fn fd_error(space: &Arc<FemSpace>, ex: Exponents, lambda: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u = FemFunction::random(space.clone(), rng);
    let v = FemFunction::random(space.clone(), rng);
    let h = 1e-5;
    let e = |t: f64| space.potentials(u.add_scaled(t, &v).unwrap().coeffs(), &ex).energy(lambda);
    let fd = (e(h) - e(-h)) / (2.0 * h);
    let g = space.energy_gradient(u.coeffs(), &ex, lambda, Regularization::default());
    let an: f64 = g.iter().zip(v.coeffs()).map(|(a, b)| a * b).sum();
    (fd - an).abs() / an.abs()
}

fn criterion_7() -> Outcome {
    let cube = unit_box(3, 4);
    let square = unit_box(2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for p in [2.0, 2.5, 3.0] {
        for q in [None, Some(1.5)] {
            // three dimensions give p = 3 no Sobolev exponent; use a stand-in
            let pstar = if p < 3.0 { 3.0 * p / (3.0 - p) } else { 8.0 };
            let ex = Exponents { p, q, r: p + 0.7, pstar };
            for _ in 0..10 {
                worst = worst.max(fd_error(&cube, ex, 9.0, &mut rng));
            }
        }
    }
    let mut worst_reg: f64 = 0.0;
    for q in [None, Some(1.2)] {
        let ex = Exponents { p: 1.5, q, r: 2.0, pstar: 6.0 };
        for _ in 0..10 {
            worst_reg = worst_reg.max(fd_error(&square, ex, 4.0, &mut rng));
        }
    }
    check(
        worst < 1e-5 && worst_reg < 1e-3,
        format!("p >= 2 max rel err {worst:.2e}; p = 1.5 regularized {worst_reg:.2e}"),
    )
}

fn criterion_8() -> Outcome {
    let space = unit_box(2, 8);
    let params = ProblemParams::new(2, 1.5, 2.5, 1.0).unwrap().with_q(1.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut least = f64::INFINITY;
    for _ in 0..1000 {
        let u = FemFunction::random(space.clone(), &mut rng);
        least = least.min(holder_audit(&u, &params).map_err(|e| e.to_string())?.min());
    }
    check(least >= -1e-10, format!("least slack {least:.3e} over 1000 functions"))
}

fn criterion_9() -> Outcome {
    let space = unit_box(3, 4);
    let params = ProblemParams::new(3, 2.5, 3.5, 1.0).unwrap();
    let reg = Regularization::off();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut holder_ok = true;
    for _ in 0..500 {
        let u = FemFunction::random(space.clone(), &mut rng);
        let v = FemFunction::random(space.clone(), &mut rng);
        let pot = assemble_potentials(&u, &params).unwrap();
        let uu = pair_operators(&u, &u, &params, reg).unwrap();
        worst = worst.max(rel(uu.a_p, 2.5 * pot.i_p)).max(rel(uu.b_p, 2.5 * pot.j_p));
        let uv = pair_operators(&u, &v, &params, reg).unwrap();
        let vv = pair_operators(&v, &v, &params, reg).unwrap();
        let (nu, nv) = (space.w_norm(u.coeffs(), 2.5), space.w_norm(v.coeffs(), 2.5));
        holder_ok &= uv.a_p <= nu.powf(1.5) * nv + 1e-10;
        holder_ok &= uv.b_p <= uu.b_p.powf(1.5 / 2.5) * vv.b_p.powf(1.0 / 2.5) + 1e-10;
    }
    check(
        worst < 1e-12 && holder_ok,
        format!("identity rel err {worst:.2e}; Hölder pairings hold on 500 pairs: {holder_ok}"),
    )
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let space = unit_box(3, 8);
    let eigs = eigs_linear_p2(&space, 1).map_err(|e| e.to_string())?;
    let base = ProblemParams::new(3, 2.0, 4.0, space.volume()).unwrap();
    let t1 = threshold_p(1, eigs.pairs[0].value, &base).unwrap().threshold;
    let params = base.with_lambda(1.2 * t1).unwrap();
    let dir = &eigs.pairs[0].function;
    let end = dir.scaled(endpoint_scale(&params, dir).map_err(|e| e.to_string())?);
    let cfg = SolverConfig::default();
    let a = mountain_pass(&params, &cfg, &end).map_err(|f| f.reason)?;
    let b = mountain_pass(&params, &cfg, &end.scaled(-1.0)).map_err(|f| f.reason)?;
    let ceiling = ps_ceiling(3, 2.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let gap = (a.energy - b.energy).abs();
    check(
        a.grad_dual_norm < 1e-8 && b.grad_dual_norm < 1e-8 && a.energy > 0.0 && a.energy < ceiling && gap < 1e-10 && secs < 300.0,
        format!(
            "E = {:.10} in (0, {ceiling:.4}), grad {:.1e}, flipped gap {gap:.1e}, {secs:.1} s",
            a.energy, a.grad_dual_norm
        ),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pqcrit")
}

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_default()
}

struct ScanRuns {
    first: PathBuf,
    second: PathBuf,
    thresholds: PathBuf,
}

const SCAN_LAMBDAS: &str = "0,60,120,250,420,600";

fn scan_runs() -> Result<ScanRuns, String> {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mesh = root.join("mesh");
    let eigs = root.join("eigs");
    run(&["mesh", "--dim", "3", "--divisions", "4", "--out", &s(&mesh)])?;
    let mesh_file = s(&mesh.join("mesh.txt"));
    run(&["eigs", "--mesh", &mesh_file, "--m", "2", "--out", &s(&eigs)])?;
    let eigs_file = s(&eigs.join("eigs.json"));
    let thresholds = root.join("thresholds");
    run(&[
        "threshold", "--mesh", &mesh_file, "--eigs", &eigs_file, "--r", "4", "--m-max", "2", "--out", &s(&thresholds),
    ])?;
    let scan = |dir: &Path| {
        run(&[
            "scan", "--mesh", &mesh_file, "--eigs", &eigs_file, "--r", "4", "--lambdas", SCAN_LAMBDAS, "--m-max", "2",
            "--seed", "0", "--threads", "1", "--out", &s(dir),
        ])
    };
    let first = root.join("scan_a");
    let second = root.join("scan_b");
    scan(&first)?;
    scan(&second)?;
    Ok(ScanRuns { first, second, thresholds })
}

fn criterion_11(runs: &ScanRuns) -> Outcome {
    let csv = read(&runs.first.join("scan.csv"));
    let mut counts: Vec<(String, usize)> = Vec::new();
    let mut predicted: Vec<(usize, String)> = Vec::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(format!("malformed scan row '{line}'"));
        }
        let count: usize = f[3].parse().map_err(|_| format!("bad count in '{line}'"))?;
        if counts.last().map(|c| c.0 != f[0]).unwrap_or(true) {
            counts.push((f[0].to_string(), count));
        }
        predicted.push((f[1].parse().unwrap_or(0), f[2].to_string()));
    }
    let series: Vec<usize> = counts.iter().map(|c| c.1).collect();
    if series.len() != 6 {
        return Err(format!("expected 6 lambda values, got {}", series.len()));
    }
    let monotone = series.windows(2).all(|w| w[1] >= w[0]);
    let table = read(&runs.thresholds.join("thresholds.csv"));
    let direct: Vec<(usize, String)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap_or(0), f[4].to_string())
        })
        .collect();
    let echoed = predicted.iter().all(|(m, t)| direct.iter().any(|(dm, dt)| dm == m && dt == t)) && !direct.is_empty();
    check(monotone && echoed, format!("counts {series:?}; thresholds echoed bit-exactly: {echoed}"))
}

fn criterion_12(runs: &ScanRuns) -> Outcome {
    let mut same = Vec::new();
    for name in ["scan.csv", "scan.json"] {
        let a = std::fs::read(runs.first.join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(runs.second.join(name)).map_err(|e| e.to_string())?;
        same.push((name, a == b && !a.is_empty()));
    }
    check(same.iter().all(|s| s.1), format!("byte-identical {same:?}"))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn guarded_runs() -> Result<ScanRuns, String> {
    catch_unwind(scan_runs).unwrap_or_else(|_| Err("panicked".to_string()))
}

type Row = (usize, &'static str, Outcome, f64);

fn timed(n: usize, name: &'static str, f: impl FnOnce() -> Outcome) -> Row {
    let start = Instant::now();
    let out = guarded(f);
    (n, name, out, start.elapsed().as_secs_f64())
}

#[test]
fn acceptance() {
    let mut results: Vec<Row> = vec![
        timed(1, "supremum oracle", criterion_1),
        timed(2, "abstract bound specialization", criterion_2),
        timed(3, "bracket ends and threshold growth", criterion_3),
        timed(4, "Sobolev constant self-test", criterion_4),
    ];
    let start = Instant::now();
    let (five, six) = catch_unwind(criterion_5_6).unwrap_or_else(|_| {
        let e = Err("panicked".to_string());
        (e.clone(), e)
    });
    let secs = start.elapsed().as_secs_f64();
    results.push((5, "eigenvalue oracle", five, secs));
    results.push((6, "nonlinear vs linear first eigenvalue", six, secs));
    results.push(timed(7, "gradient checks", criterion_7));
    results.push(timed(8, "Hölder audit", criterion_8));
    results.push(timed(9, "operator identities", criterion_9));
    results.push(timed(10, "mountain-pass window", criterion_10));
    let start = Instant::now();
    let runs = guarded_runs();
    let secs = start.elapsed().as_secs_f64();
    match &runs {
        Ok(r) => {
            results.push((11, "scan monotonicity", guarded(|| criterion_11(r)), secs));
            results.push((12, "scan reproducibility", guarded(|| criterion_12(r)), secs));
        }
        Err(e) => {
            results.push((11, "scan monotonicity", Err(e.clone()), secs));
            results.push((12, "scan reproducibility", Err(e.clone()), secs));
        }
    }
    let mut failed = Vec::new();
    for (n, name, out, secs) in &results {
        let (tag, detail) = match out {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(*n);
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag} {name}: {detail} [{secs:.1} s]");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
