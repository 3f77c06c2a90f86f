//! Command-line front end: enumeration, decomposition, moment assembly,
//! norm experiments, intersection checks, machinery condition
//! verification, and PSD experiments, with CSV reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_rational::BigRational;
use num_traits::Zero;

use sosgm_core::error::Error;
use sosgm_core::fourier::{Dist, HermiteBasis, InputTensor};
use sosgm_core::harness;
use sosgm_core::machinery::{BoundParams, BoundVariant};
use sosgm_core::pseudocal::{
    assemble_moment_matrix, support_shapes, AssembledMatrix, AssemblyOrder, Problem,
    ProblemParams,
};
use sosgm_core::scalar::rat_to_f64;
use sosgm_core::separators::{
    decompose, leftmost_min_separator, min_separators_bruteforce, pattern_label, pattern_of,
    rightmost_min_separator, ShapeFamilies,
};
use sosgm_core::shape::{enumerate_shapes, EnumConfig, Shape, TypeTable};

#[derive(Parser)]
#[command(name = "sosgm", about = "Graph-matrix moment-matrix verification harness")]
struct Cli {
    /// Output directory for CSV reports (env SOSGM_OUT overrides).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enumerate canonical proper shapes, optionally grouped into the
    /// left/middle/gamma families.
    Enumerate(EnumerateArgs),
    /// Decompose a shape along its leftmost/rightmost minimum separators.
    Decompose(DecomposeArgs),
    /// Assemble the moment matrix on a seeded random input.
    Moment(MomentArgs),
    /// Monte-Carlo spectral norms against the closed-form bound.
    Norms(NormArgs),
    /// Intersection patterns: multiplicities, bounds, tradeoff.
    Intersections(IntersectionArgs),
    /// Machinery conditions 1-3 plus charging diagnostics.
    Verify(VerifyArgs),
    /// PSD experiment over seeded inputs.
    Psd(PsdArgs),
    /// Exact identity suites (orthonormality, products, decomposition,
    /// intersections).
    Identities(IdentityArgs),
}

#[derive(Args, Clone, Debug)]
struct ProblemArgs {
    /// Problem: clique | plds | tpca | spca.
    #[arg(long)]
    problem: String,
    /// Universe size (clique/plds/tpca).
    #[arg(long, default_value_t = 20)]
    n: u64,
    /// Dimension count d (spca).
    #[arg(long, default_value_t = 0)]
    d: u64,
    /// Sample count m (spca).
    #[arg(long, default_value_t = 0)]
    m: u64,
    /// Planted size / sparsity k.
    #[arg(long, default_value = "4")]
    k: String,
    /// Edge density p in (1/2, 1) for plds.
    #[arg(long, default_value = "9/10")]
    p: String,
    /// Signal strength.
    #[arg(long, default_value = "1")]
    lambda: String,
    /// Slack in (0, 1].
    #[arg(long, default_value = "1/2")]
    delta: String,
    /// Hyperedge arity (tensor order) for tpca.
    #[arg(long, default_value_t = 3)]
    arity: usize,
    #[arg(long, default_value_t = 2)]
    dsos: u32,
    #[arg(long, default_value_t = 3)]
    dv: usize,
    #[arg(long, default_value_t = 1)]
    de: u32,
    /// Divide the assembled matrix by its scale entry.
    #[arg(long, default_value_t = false)]
    normalize: bool,
    /// Edge-count cap for hyperedge family enumeration.
    #[arg(long)]
    max_edges: Option<usize>,
}

impl ProblemArgs {
    fn to_params(&self) -> Result<ProblemParams, Error> {
        let problem = Problem::parse(&self.problem)?;
        let table = match problem {
            Problem::Spca => {
                if self.d == 0 || self.m == 0 {
                    return Err(Error::InvalidParam("spca needs --d and --m".into()));
                }
                TypeTable::new(vec![self.d, self.m])?
            }
            _ => TypeTable::single(self.n),
        };
        let p = ProblemParams {
            problem,
            table,
            planted_size: parse_rational(&self.k)?,
            density: parse_rational(&self.p)?,
            signal: parse_rational(&self.lambda)?,
            slack: parse_rational(&self.delta)?,
            arity: self.arity,
            d_sos: self.dsos,
            d_v: self.dv,
            d_e: self.de,
            normalize: self.normalize,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args, Debug)]
struct EnumerateArgs {
    /// Type populations, comma separated.
    #[arg(long, default_value = "100")]
    sizes: String,
    #[arg(long, default_value_t = 3)]
    max_vertices: usize,
    #[arg(long, default_value_t = 1)]
    max_label: u32,
    #[arg(long, default_value_t = 2)]
    arity: usize,
    #[arg(long, default_value_t = false)]
    ordered: bool,
    /// Bipartite endpoint types, e.g. "0,1".
    #[arg(long)]
    bipartite: Option<String>,
    #[arg(long, default_value_t = 1)]
    index_degree: u32,
    #[arg(long, default_value_t = false)]
    allow_powers: bool,
    /// Also classify into families at these truncation caps, selecting
    /// which middle index pattern to report on, e.g. "U=t0p1x1".
    #[arg(long)]
    families: Option<String>,
    #[arg(long, default_value_t = 2)]
    dsos: u32,
    #[arg(long, default_value_t = 3)]
    dv: usize,
    #[arg(long, default_value_t = 1)]
    de: u32,
    #[arg(long)]
    max_edges: Option<usize>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Path to a structured-text shape file.
    #[arg(long)]
    shape: PathBuf,
    #[arg(long, default_value = "100")]
    sizes: String,
}

#[derive(Args, Debug)]
struct MomentArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Assembly walk order: shape | ribbon.
    #[arg(long, default_value = "shape")]
    order: String,
}

#[derive(Args, Debug)]
struct NormArgs {
    #[arg(long, default_value_t = 64)]
    n: u64,
    #[arg(long, default_value_t = 4)]
    max_vertices: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    allowed_violations: usize,
    /// Cap on injective embeddings per evaluation; the universe shrinks
    /// per shape to respect it.
    #[arg(long, default_value_t = 3_000_000)]
    embed_budget: u64,
}

#[derive(Args, Debug)]
struct IntersectionArgs {
    #[arg(long, default_value_t = 3)]
    part_cap: usize,
    #[arg(long, default_value_t = 2)]
    dsos: u32,
    /// Universe for the ribbon-triple census (omit to skip the census).
    #[arg(long)]
    census_n: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Bound variant: simplified | general.
    #[arg(long, default_value = "simplified")]
    variant: String,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    /// Relative eigenvalue tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args, Debug)]
struct PsdArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct IdentityArgs {
    #[arg(long, default_value_t = 5)]
    n: u64,
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Part-size cap for the intersection identity sweep.
    #[arg(long, default_value_t = 3)]
    part_cap: usize,
    /// Cap on identity triples (omit for the full sweep).
    #[arg(long)]
    max_triples: Option<usize>,
}

fn parse_rational(s: &str) -> Result<BigRational, Error> {
    sosgm_core::parse_rational(s)
}

fn out_dir(cli_out: &Option<PathBuf>) -> PathBuf {
    if let Ok(env) = std::env::var("SOSGM_OUT") {
        return PathBuf::from(env);
    }
    cli_out.clone().unwrap_or_else(|| PathBuf::from("sosgm-out"))
}

fn write_report(dir: &Path, name: &str, config: &str, header: &str, rows: &[String]) {
    fs::create_dir_all(dir).expect("create output directory");
    let mut body = String::new();
    body.push_str(&format!("# config: {config}\n"));
    body.push_str(header);
    body.push('\n');
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, body).expect("write report");
    println!("wrote {}", path.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = out_dir(&cli.out);
    let started = Instant::now();
    let result = match &cli.cmd {
        Cmd::Enumerate(a) => run_enumerate(a, &dir),
        Cmd::Decompose(a) => run_decompose(a),
        Cmd::Moment(a) => run_moment(a, &dir),
        Cmd::Norms(a) => run_norms(a, &dir),
        Cmd::Intersections(a) => run_intersections(a, &dir),
        Cmd::Verify(a) => run_verify(a, &dir),
        Cmd::Psd(a) => run_psd(a, &dir),
        Cmd::Identities(a) => run_identities(a, &dir),
    };
    match result {
        Ok(all_pass) => {
            println!("elapsed: {:.2}s", started.elapsed().as_secs_f64());
            if all_pass {
                ExitCode::SUCCESS
            } else {
                println!("verdict: FAIL");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn parse_sizes(s: &str) -> Result<TypeTable, Error> {
    let sizes: Result<Vec<u64>, Error> = s
        .split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|e| Error::Parse(e.to_string())))
        .collect();
    TypeTable::new(sizes?)
}

fn run_enumerate(a: &EnumerateArgs, dir: &Path) -> Result<bool, Error> {
    let table = parse_sizes(&a.sizes)?;
    let config = format!("{a:?}");
    if a.families.is_some() {
        let fam = ShapeFamilies::build(sosgm_core::separators::FamilyConfig {
            table,
            d_sos: a.dsos,
            d_v: a.dv,
            d_e: a.de,
            arity: a.arity,
            ordered_edges: a.ordered,
            bipartite: parse_bipartite(&a.bipartite)?,
            index_types: None,
            allow_powers: a.allow_powers,
            max_edges: a.max_edges,
            cap: 20_000_000,
        })?;
        let mut rows = Vec::new();
        let mut text = String::new();
        for pat in &fam.mid_patterns {
            for (tag, shapes) in [
                ("left", fam.left_of(pat).to_vec()),
                ("middle", fam.middle_of(pat).to_vec()),
                (
                    "gamma",
                    fam.gamma_u_star(pat).into_iter().cloned().collect::<Vec<_>>(),
                ),
            ] {
                rows.push(format!("{},{},{}", pattern_label(pat), tag, shapes.len()));
                for s in shapes {
                    text.push_str(&format!("# family {} {}\n", pattern_label(pat), tag));
                    text.push_str(&s.canonical_shape().to_text());
                }
            }
        }
        fs::create_dir_all(dir)?;
        fs::write(dir.join("families.txt"), text)?;
        write_report(dir, "families.csv", &config, "pattern,family,count", &rows);
        println!("families written for {} middle patterns", fam.mid_patterns.len());
        return Ok(true);
    }
    let cfg = EnumConfig {
        t_max: table.t_max(),
        max_vertices: a.max_vertices,
        max_label: a.max_label,
        arity: a.arity,
        ordered_edges: a.ordered,
        bipartite: parse_bipartite(&a.bipartite)?,
        max_index_degree: a.index_degree,
        allow_powers: a.allow_powers,
        index_types: None,
        tuple_orders: true,
        require_proper: true,
        max_edges: a.max_edges,
        cap: 20_000_000,
    };
    let shapes = enumerate_shapes(&cfg)?;
    let mut text = String::new();
    for s in &shapes {
        text.push_str(&s.to_text());
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("shapes.txt"), text)?;
    println!("{} canonical proper shapes", shapes.len());
    Ok(true)
}

fn parse_bipartite(s: &Option<String>) -> Result<Option<(usize, usize)>, Error> {
    match s {
        None => Ok(None),
        Some(s) => {
            let parts: Vec<&str> = s.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::Parse("bipartite wants two types: t1,t2".into()));
            }
            Ok(Some((
                parts[0].trim().parse().map_err(|_| Error::Parse("bad type".into()))?,
                parts[1].trim().parse().map_err(|_| Error::Parse("bad type".into()))?,
            )))
        }
    }
}

fn run_decompose(a: &DecomposeArgs) -> Result<bool, Error> {
    let table = parse_sizes(&a.sizes)?;
    let text = fs::read_to_string(&a.shape)?;
    let shape = Shape::from_text(&text)?;
    let mins = min_separators_bruteforce(&shape, &table, 14)?;
    println!("minimum separators ({}):", mins.len());
    for m in &mins {
        println!("  {:?} weight {:?}", m.set, m.weight.counts);
    }
    let lm = leftmost_min_separator(&shape, &table, 14)?;
    let rm = rightmost_min_separator(&shape, &table, 14)?;
    println!("leftmost:  {:?}", lm.set);
    println!("rightmost: {:?}", rm.set);
    let d = decompose(&shape, &table, None, None, 14)?;
    println!("left part:\n{}", d.left.to_text());
    println!("middle part:\n{}", d.middle.to_text());
    println!("right part:\n{}", d.right.to_text());
    let rejoined = d.left.compose(&d.middle)?.compose(&d.right)?;
    let ok = rejoined.equivalent(&shape);
    println!("recomposition: {}", if ok { "exact" } else { "MISMATCH" });
    Ok(ok)
}

fn run_moment(a: &MomentArgs, dir: &Path) -> Result<bool, Error> {
    let p = a.problem.to_params()?;
    let order = match a.order.as_str() {
        "shape" => AssemblyOrder::ByShape,
        "ribbon" => AssemblyOrder::ByRibbon,
        other => return Err(Error::InvalidParam(format!("unknown order: {other}"))),
    };
    let x = InputTensor::random(
        &p.table,
        p.slot_types(),
        p.ordered_edges(),
        p.problem.dist(),
        p.problem.basis(),
        p.d_e as usize,
        a.seed,
    );
    let m = assemble_moment_matrix(&p, &x, order)?;
    let config = format!("{a:?}");
    // Coefficient census.
    let mut census = Vec::new();
    for (s, lam) in support_shapes(&p)? {
        census.push(format!(
            "{},{},{},{},{}",
            s.nv(),
            s.edge_count(),
            s.u.degree(),
            s.v.degree(),
            rat_to_f64(&lam)
        ));
    }
    write_report(
        dir,
        "moment_census.csv",
        &config,
        "vertices,edges,u_degree,v_degree,lambda",
        &census,
    );
    // Matrix entries in structured text.
    let f = m.to_f64();
    let mut entries = Vec::new();
    for (i, row) in f.row_indices.iter().enumerate() {
        for (j, col) in f.col_indices.iter().enumerate() {
            let v = *f.data.at(i, j);
            if v != 0.0 {
                entries.push(format!("{row:?},{col:?},{v}"));
            }
        }
    }
    write_report(dir, "moment_matrix.csv", &config, "row,col,value", &entries);
    let min_eig = f.data.min_eigenvalue();
    println!(
        "moment matrix {}x{}, support shapes {}, min eigenvalue {:.3e}",
        f.data.rows,
        f.data.cols,
        census.len(),
        min_eig
    );
    if let AssembledMatrix::Exact(e) = &m {
        println!("scale entry: {}", e.data.at(0, 0));
    }
    Ok(true)
}

fn run_norms(a: &NormArgs, dir: &Path) -> Result<bool, Error> {
    let r = harness::norm_suite(
        a.n,
        a.max_vertices,
        a.trials,
        a.eps,
        a.seed,
        a.allowed_violations,
        a.embed_budget,
    )?;
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|x| {
            format!(
                "{},{},{},{},{},{}",
                x.shape_id, x.trial, x.norm, x.bound, x.violated, x.n_used
            )
        })
        .collect();
    write_report(
        dir,
        "norms.csv",
        &format!("{a:?}"),
        "shape_id,trial,norm,bound,violated,n_used",
        &rows,
    );
    println!(
        "{} shapes, {} trials each; {} shapes over the violation budget",
        r.shapes, a.trials, r.shapes_over_budget
    );
    Ok(r.shapes_over_budget == 0)
}

fn run_intersections(a: &IntersectionArgs, dir: &Path) -> Result<bool, Error> {
    let bounds = BoundParams::new(
        BoundVariant::Simplified,
        TypeTable::single(100),
        a.eps,
        0.05,
        a.part_cap,
        1,
        2,
    );
    let r = harness::intersection_pattern_suite(a.part_cap, a.dsos, a.census_n, &bounds)?;
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|x| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                x.gamma_desc,
                x.tau_desc,
                x.gamma2_desc,
                x.constraint_edges,
                x.multiplicity,
                x.multiplicity_bound,
                x.tradeoff_holds,
                x.norm_compat,
                x.census.map(|c| c.to_string()).unwrap_or_else(|| "skipped".into())
            )
        })
        .collect();
    write_report(
        dir,
        "intersections.csv",
        &format!("{a:?}"),
        "gamma,tau,gamma2,constraint_edges,multiplicity,bound,tradeoff,norm_compat,census",
        &rows,
    );
    println!(
        "{} patterns; tradeoff failures {}, census mismatches {} ({} skipped)",
        r.rows.len(),
        r.tradeoff_failures,
        r.census_mismatches,
        r.census_skipped
    );
    Ok(r.tradeoff_failures == 0 && r.census_mismatches == 0)
}

fn run_verify(a: &VerifyArgs, dir: &Path) -> Result<bool, Error> {
    let p = a.problem.to_params()?;
    let variant = match a.variant.as_str() {
        "simplified" => BoundVariant::Simplified,
        "general" => BoundVariant::General,
        other => return Err(Error::InvalidParam(format!("unknown variant: {other}"))),
    };
    let suite = harness::condition_suite(&p, variant, a.eps, a.tol, a.problem.max_edges)?;
    let rows: Vec<String> = suite
        .reports
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.condition, r.subject, r.min_eigenvalue, r.scale, r.tolerance, r.pass
            )
        })
        .collect();
    write_report(
        dir,
        "conditions.csv",
        &format!("{a:?}"),
        "condition,subject,min_eigenvalue,scale,tolerance,pass",
        &rows,
    );
    let charge_rows: Vec<String> = suite
        .charges
        .iter()
        .map(|r| format!("{},{},{},{}", r.kind, r.subject, r.lhs, r.pass))
        .collect();
    write_report(
        dir,
        "charges.csv",
        &format!("{a:?}"),
        "kind,subject,lhs,pass",
        &charge_rows,
    );
    let mut by_cond = [0usize; 4];
    let mut fails = [0usize; 4];
    for r in &suite.reports {
        by_cond[r.condition as usize] += 1;
        if !r.pass {
            fails[r.condition as usize] += 1;
        }
    }
    for c in 1..=3 {
        println!(
            "condition {}: {}/{} pass",
            c,
            by_cond[c] - fails[c],
            by_cond[c]
        );
    }
    println!(
        "charging rows: {}/{} pass",
        suite.charges.iter().filter(|r| r.pass).count(),
        suite.charges.len()
    );
    Ok(suite.all_conditions_pass)
}

fn run_psd(a: &PsdArgs, dir: &Path) -> Result<bool, Error> {
    let p = a.problem.to_params()?;
    let r = harness::psd_experiment(&p, a.trials, a.tol, a.seed)?;
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|x| format!("{},{},{}", x.trial, x.min_eigenvalue, x.pass))
        .collect();
    write_report(
        dir,
        "psd.csv",
        &format!("{a:?}"),
        "trial,min_eigenvalue,pass",
        &rows,
    );
    println!("pass fraction: {:.3}", r.pass_fraction);
    Ok(r.pass_fraction >= 0.9)
}

fn run_identities(a: &IdentityArgs, dir: &Path) -> Result<bool, Error> {
    let mut rows = Vec::new();
    let ortho = harness::ribbon_orthonormality_suite(4, 3)?;
    rows.push(format!(
        "orthonormality,{},{}",
        ortho.pairs_checked,
        ortho.failures
    ));
    let prod = harness::ribbon_product_suite(6, a.pairs, a.seed)?;
    rows.push(format!("ribbon_product,{},{}", prod.pairs_checked, prod.failures));
    let p = ProblemParams {
        problem: Problem::Plds,
        table: TypeTable::single(a.n),
        planted_size: parse_rational("2")?,
        density: parse_rational("4/5")?,
        signal: BigRational::zero(),
        slack: parse_rational("1/2")?,
        arity: 2,
        d_sos: 2,
        d_v: 3,
        d_e: 1,
        normalize: false,
    };
    let dec = harness::moment_decomposition_suite(&p, a.seed)?;
    rows.push(format!(
        "moment_decomposition,{},{}",
        dec.entries,
        if dec.max_residual_zero { 0 } else { 1 }
    ));
    let inter = harness::intersection_identity_suite(a.n, a.part_cap, 2, a.max_triples)?;
    rows.push(format!(
        "intersection_identity,{},{}",
        inter.triples_checked, inter.nonzero_residuals
    ));
    write_report(
        dir,
        "identities.csv",
        &format!("{a:?}"),
        "suite,checked,failures",
        &rows,
    );
    let all_pass = ortho.failures == 0
        && prod.failures == 0
        && dec.max_residual_zero
        && inter.nonzero_residuals == 0;
    for r in &rows {
        println!("{r}");
    }
    Ok(all_pass)
}
