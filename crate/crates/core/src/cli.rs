//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{HsaError, Result};
use crate::ff::FieldMatrix;
use crate::keygen::verify_gs;
use crate::metrics::measured_rates;
use crate::protocol::client_trace;
use crate::report::{build_report, parse_fields, ExperimentConfig};
use crate::scheme::Scheme;
use crate::vectors::ExampleVectors;

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CONSTRUCTION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hsa", about = "Hierarchical secure aggregation over unreliable links", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the bundled K=5, d=3, s=1 example symbol by symbol.
    VerifyExample {
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a scheme, run episodes under the drop model and write a report.
    Run(ExperimentArgs),
    /// Like `run`, with the drop model defaulting to an exhaustive sweep.
    Sweep(ExperimentArgs),
    /// Rank audits for every relay and server view, with enumeration where it fits.
    Audit(ExperimentArgs),
}

#[derive(Debug, Clone, Default, Args)]
#[allow(non_snake_case)]
pub struct ExperimentArgs {
    /// `key = value` lines or a JSON object; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "K")]
    pub K: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub q: Option<u64>,
    #[arg(long)]
    pub p: Option<u64>,
    #[arg(long = "L")]
    pub L: Option<usize>,
    /// Overridden by HSA_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// none | bernoulli:P1,P2 | fixed:r2s=1,3;c2r=2-1 | exhaustive[:r2s=N;c2r=N]
    #[arg(long)]
    pub drop: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Zero the key coefficient of RELAY,CLIENT (test hook).
    #[arg(long, hide = true, value_parser = parse_pair)]
    pub unmask: Option<(usize, usize)>,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected RELAY,CLIENT")?;
    Ok((a.trim().parse().map_err(|_| "bad relay")?, b.trim().parse().map_err(|_| "bad client")?))
}

impl ExperimentArgs {
    /// File values, then flags, then `HSA_SEED`.
    pub fn resolve(&self, default_drop: &str, env_seed: Option<&str>) -> Result<ExperimentConfig> {
        let mut map = match &self.config {
            Some(path) => parse_fields(&std::fs::read_to_string(path)?)?,
            None => Map::new(),
        };
        map.entry("drop").or_insert_with(|| Value::from(default_drop));
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                map.insert(key.into(), v);
            }
        };
        set("K", self.K.map(Value::from));
        set("d", self.d.map(Value::from));
        set("s", self.s.map(Value::from));
        set("q", self.q.map(Value::from));
        set("p", self.p.map(Value::from));
        set("L", self.L.map(Value::from));
        set("seed", self.seed.map(Value::from));
        set("drop", self.drop.clone().map(Value::from));
        set("trials", self.trials.map(Value::from));
        set("vectors", self.vectors.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())));
        set("budget", self.budget.map(Value::from));
        set("unmask", self.unmask.map(|(m, k)| Value::from(vec![m, k])));
        if let Some(s) = env_seed {
            let seed: u64 =
                s.trim().parse().map_err(|_| HsaError::InvalidParams(format!("HSA_SEED={s:?} is not an integer")))?;
            map.insert("seed".into(), Value::from(seed));
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| HsaError::InvalidParams(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub checks: Vec<Check>,
    pub errata_applied: Vec<String>,
    pub single_dropout_decodes: usize,
    pub pass: bool,
}

impl ExampleReport {
    pub fn first_mismatch(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.ok)
    }
}

struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, name: impl Into<String>, ok: bool, detail: impl FnOnce() -> String) {
        self.0.push(Check { name: name.into(), ok, detail: if ok { String::new() } else { detail() } });
    }
}

/// Every displayed generator row, key, client and relay message, key mixing
/// row, decode identity and rate of the worked example.
pub fn verify_example(v: &ExampleVectors) -> Result<ExampleReport> {
    let mut checks = Checks(Vec::new());
    let mut errata_applied = Vec::new();
    let scheme = Scheme::from_example(v, 0)?;
    let f = scheme.cfg.field();
    let g = &scheme.schedule.generator;
    let code = &scheme.code;
    let layout = scheme.layout();

    checks.push("verify_gs", verify_gs(g, v.d), || "G_S fails the zero-sum or independence conditions".into());

    for key in &v.expected_messages.keys {
        let row = g.row(key.client - 1);
        checks.push(format!("S_{}", key.client), row == key.source.as_slice(), || {
            format!("expected {:?}, got {row:?}", key.source)
        });
    }

    for x in &v.expected_messages.client {
        let (m, k) = (x.relay - 1, x.client - 1);
        let name = format!("X_{{{},{}}}", x.relay, x.client);
        let trace = client_trace(&scheme.cfg, &layout, &scheme.schedule, code, m, k)?;
        let theta: Vec<u64> = (0..v.l).map(|l| trace.theta.get(0, layout.theta_col(k, l))).collect();
        let shown: Vec<u64> = x
            .theta
            .iter()
            .enumerate()
            .map(|(l, &t)| {
                let c = v.corrected("X", x.relay, x.client, l + 1, t);
                if c != t {
                    errata_applied.push(format!("{name} coordinate {}: displayed {t}, corrected {c}", l + 1));
                }
                c
            })
            .collect();
        let key: Vec<u64> = g.row(k).iter().map(|&c| f.mul(x.key, c)).collect();
        let ok = theta == shown && trace.source.row(0) == key.as_slice();
        checks.push(name, ok, || format!("theta {theta:?} vs {shown:?}, key {:?} vs {key:?}", trace.source.row(0)));
    }

    for y in &v.expected_messages.relay {
        let m = y.relay - 1;
        let name = format!("Y_{}", y.relay);
        let mut ok = true;
        for k in 0..v.k {
            let w: Vec<u64> = code.encoder(m, k).map_or(vec![0; v.l], |w| w.as_slice().to_vec());
            let shown: Vec<u64> = y.theta[k]
                .iter()
                .enumerate()
                .map(|(l, &t)| {
                    let c = v.corrected("Y", y.relay, k + 1, l + 1, t);
                    if c != t {
                        errata_applied.push(format!(
                            "{name} client {} coordinate {}: displayed {t}, corrected {c}",
                            k + 1,
                            l + 1
                        ));
                    }
                    c
                })
                .collect();
            let key = if code.encoder(m, k).is_some() { code.mask_coefficient(m, k) } else { 0 };
            ok &= w == shown && key == y.keys[k];
        }
        checks.push(name, ok, || "relay message coefficients differ from the display".into());
    }

    let mixing = key_mixing(&scheme);
    let shown = FieldMatrix::from_rows(f, g.cols(), &v.expected_messages.key_mixing)?;
    checks.push("key mixing", mixing == shown, || format!("computed {:?}", mixing.to_rows()));

    let a = code.coefficient_matrix();
    let targets = code.sum_targets();
    let mut single = 0;
    for (pattern, c) in code.combos() {
        let name = format!("C_{}", pattern.iter().map(|m| (m + 1).to_string()).collect::<Vec<_>>().join(","));
        let silent = pattern.iter().all(|&m| c.column(m).iter().all(|&x| x == 0));
        let recovers = c.mul(&a)? == targets;
        let cancels = c.mul(&mixing)?.is_zero();
        let ok = silent && recovers && cancels;
        if ok && pattern.len() == 1 {
            single += 1;
        }
        checks
            .push(name, ok, || format!("silent on pattern {silent}, recovers sum {recovers}, cancels keys {cancels}"));
    }

    for dec in &v.expected_decodes {
        let missing: Vec<usize> = dec.missing.iter().map(|m| m - 1).collect();
        let (_, c) = code.combination_matrix(&missing)?;
        for row in &dec.rows {
            let name = format!("decode without {:?}, coordinate {}", dec.missing, row.coordinate);
            let stored = c.row(row.coordinate - 1) == row.coefficients.as_slice();
            let theta = FieldMatrix::from_rows(f, v.k, std::slice::from_ref(&row.coefficients))?.mul(&a)?;
            let recovers = theta.row(0) == targets.row(row.coordinate - 1);
            let cancels = mixing.left_apply(&row.coefficients).iter().all(|&x| x == 0);
            checks.push(name, stored && recovers && cancels, || {
                format!("matches C_f {stored}, recovers coordinate {recovers}, cancels keys {cancels}")
            });
        }
    }

    let rates = measured_rates(&scheme)?.measured;
    let e = &v.expected_rates;
    for (name, got, want) in
        [("R1", rates.r1, e.r1), ("R2", rates.r2, e.r2), ("RS", rates.rs, e.rs), ("RSsum", rates.rs_sum, e.rs_sum)]
    {
        let ok = (*got.value.numer(), *got.value.denom()) == (want.num, want.den);
        checks.push(name, ok, || format!("measured {got}, displayed {}/{}", want.num, want.den));
    }
    checks.push("masks", code.verify_masks(), || "a transmitted symbol carries no key".into());

    let pass = checks.0.iter().all(|c| c.ok);
    Ok(ExampleReport { checks: checks.0, errata_applied, single_dropout_decodes: single, pass })
}

/// Row `m`: the source-symbol coefficients of `Y_m`'s key part, for one segment.
pub fn key_mixing(scheme: &Scheme) -> FieldMatrix {
    let f = scheme.cfg.field();
    let g = &scheme.schedule.generator;
    let k = scheme.cfg.clients();
    let mut out = FieldMatrix::zeros(f, k, g.cols());
    for m in 0..k {
        for &c in scheme.topology.clients_of(m) {
            let coef = scheme.code.mask_coefficient(m, c);
            for j in 0..g.cols() {
                out.set(m, j, f.add(out.get(m, j), f.mul(coef, g.get(c, j))));
            }
        }
    }
    out
}

pub fn exit_code(err: &HsaError) -> i32 {
    match err {
        HsaError::ConstructionFailed { .. } => EXIT_CONSTRUCTION,
        _ => EXIT_INVALID,
    }
}

fn emit(out: Option<&Path>, json: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<i32> {
    let env_seed = std::env::var("HSA_SEED").ok();
    match cli.command {
        Command::VerifyExample { vectors, out } => {
            let v = match vectors {
                Some(path) => ExampleVectors::load(&path)?,
                None => ExampleVectors::bundled()?,
            };
            let report = verify_example(&v)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            if let Some(bad) = report.first_mismatch() {
                eprintln!("mismatch at {}: {}", bad.name, bad.detail);
                return Ok(EXIT_MISMATCH);
            }
            eprintln!("all checks passed; {} single-dropout decodes verified", report.single_dropout_decodes);
            Ok(EXIT_OK)
        }
        cmd => {
            let (name, args, default_drop, episodes, brute) = match cmd {
                Command::Run(a) => ("run", a, "none", true, false),
                Command::Sweep(a) => ("sweep", a, "exhaustive", true, false),
                Command::Audit(a) => ("audit", a, "none", false, true),
                Command::VerifyExample { .. } => unreachable!(),
            };
            let config = args.resolve(default_drop, env_seed.as_deref())?;
            let report = build_report(name, &config, episodes, brute)?;
            emit(args.out.as_deref(), &report.to_json())?;
            if report.verdicts.pass {
                Ok(EXIT_OK)
            } else {
                eprintln!("verdicts failed: {:?}", report.verdicts);
                Ok(EXIT_MISMATCH)
            }
        }
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
