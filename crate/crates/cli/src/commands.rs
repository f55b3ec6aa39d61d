use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use likadj::cumulants::{
    check_agreement, cumulants_analytic, mc_reference, cumulants_fd, cumulants_mc, validate_analytic, CumulantOrder, CumulantSet,
    IdentityCheck, ANALYTIC_TOL, MC_SE_MULTIPLE,
};
use likadj::inference::evaluate;
use likadj::model::{Dataset, ModelDef, ModelInstance};
use likadj::simulation::{
    bootstrap_distribution, verify_expansion, verify_expansions, ExpansionQuantity, ExpansionReport, SimOptions,
    SimStudy, Verdict,
};
use likadj::zoo::{table_case, ModelConfig, TableCase, MODEL_NAMES, TABLE1_Q, TABLE2_Q};
use likadj::{adjustment_report, b_np_explicit, bartlett_decompose, info_geometry, orthogonal_bnp, pivot_cumulants, PivotKind};

use crate::config::{model_config, to_value, Command, Provider, RunConfig, Tolerances};
use crate::error::CliError;

/// A command's output: the JSON result, a CSV table, and an optional
/// validation failure to report after the output is written.
pub struct Outcome {
    pub result: Value,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Extra `#` lines after the config line in CSV output.
    pub notes: Vec<String>,
    pub failure: Option<String>,
}

impl Outcome {
    fn new(result: Value, header: &[&str], rows: Vec<Vec<String>>) -> Self {
        Outcome { result, header: header.iter().map(|s| s.to_string()).collect(), rows, notes: Vec::new(), failure: None }
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Rounds half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Fills in every defaulted field so the echoed config reproduces the run.
pub fn resolve(mut cfg: RunConfig, n: Option<usize>, q: Option<usize>) -> Result<(RunConfig, Option<ModelConfig>), CliError> {
    let command = cfg.command.ok_or_else(|| CliError::Config("no command given".into()))?;
    let needs_model = !matches!(command, Command::Table | Command::Validate);
    if needs_model && cfg.model.is_none() {
        return Err(CliError::Config("`model` is required for this command".into()));
    }
    if cfg.model.is_none() && (n.is_some() || q.is_some() || cfg.model_config.is_some()) {
        return Err(CliError::Config("`--n`, `--q` and `model_config` need a model".into()));
    }
    let mc = match &cfg.model {
        Some(name) => {
            let mut mc = model_config(name, cfg.model_config.take())?;
            mc.set_size(n, q).map_err(|e| CliError::Config(e.to_string()))?;
            let mc = mc.resolve().map_err(|e| CliError::Config(e.to_string()))?;
            cfg.model_config = Some(to_value(&mc));
            Some(mc)
        }
        None => None,
    };
    if command == Command::Table {
        let t = cfg.table.unwrap_or(1);
        if t != 1 && t != 2 {
            return Err(CliError::Config(format!("`table` must be 1 or 2, got {t}")));
        }
        cfg.table = Some(t);
    }
    if let Some(k) = &cfg.kind {
        if PivotKind::parse(k).is_none() {
            let names: Vec<&str> = PivotKind::ALL.iter().map(|k| k.name()).collect();
            return Err(CliError::Config(format!("unknown pivot kind `{k}`; known: {}", names.join(", "))));
        }
    }
    if command == Command::Verify {
        let quantity = cfg.quantity.clone().unwrap_or_else(|| "all".into());
        if quantity != "all" && ExpansionQuantity::parse(&quantity).is_none() {
            let names: Vec<&str> = ExpansionQuantity::ALL.iter().map(|k| k.name()).collect();
            return Err(CliError::Config(format!("unknown quantity `{quantity}`; known: all, {}", names.join(", "))));
        }
        cfg.quantity = Some(quantity);
        if cfg.n_grid.is_none() {
            cfg.n_grid = Some(vec![mc.as_ref().unwrap().build().map_err(config_err)?.n()]);
        }
    }
    if command == Command::Bootstrap && cfg.psi0.is_none() {
        cfg.psi0 = Some(mc.as_ref().unwrap().build().map_err(config_err)?.theta[0]);
    }
    if cfg.provider == Provider::Mc && cfg.reps < likadj::cumulants::MIN_MC_REPS {
        return Err(CliError::Config(format!("the mc provider needs reps >= {}", likadj::cumulants::MIN_MC_REPS)));
    }
    if cfg.reps == 0 {
        return Err(CliError::Config("`reps` must be positive".into()));
    }
    Ok((cfg, mc))
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn run(cfg: &RunConfig, mc: Option<&ModelConfig>) -> Result<Outcome, CliError> {
    let inst = || -> Result<ModelInstance, CliError> { mc.expect("resolved").build().map_err(config_err) };
    match cfg.command.expect("resolved") {
        Command::Adjust => adjust(cfg, &inst()?),
        Command::Bartlett => bartlett(cfg, &inst()?),
        Command::Pivots => pivots(cfg, &inst()?),
        Command::Table => table(cfg),
        Command::Bootstrap => bootstrap(cfg, &inst()?),
        Command::Verify => verify(cfg, &inst()?),
        Command::Validate => validate(cfg, mc),
    }
}

fn cumulants(cfg: &RunConfig, inst: &ModelInstance, order: CumulantOrder) -> Result<CumulantSet<f64>, CliError> {
    match cfg.provider {
        Provider::Analytic => cumulants_analytic::<f64>(inst, order),
        Provider::Fd => cumulants_fd(inst, order),
        Provider::Mc => cumulants_mc(inst, order, cfg.reps, cfg.seed),
    }
    .map_err(CliError::numeric)
}

fn provenance(cs: &CumulantSet<f64>) -> String {
    to_value(&cs.provenance).as_str().unwrap_or_default().to_string()
}

fn adjust(cfg: &RunConfig, inst: &ModelInstance) -> Result<Outcome, CliError> {
    let cs = cumulants(cfg, inst, CumulantOrder::Third)?;
    let geom = info_geometry(&cs.lam2).map_err(CliError::numeric)?;
    let r = adjustment_report(&cs, &geom);
    let prov = provenance(&cs);
    let result = json!({
        "g_inf": r.g_inf, "g_np": r.g_np, "d": r.d_quant, "rho": r.rho, "ratio": r.ratio, "eta": r.eta,
        "a0": r.a0, "z0": r.z0, "er_leading": r.er_leading, "provenance": prov,
        "theta": inst.theta, "param_names": inst.model.param_names(),
    });
    let row = vec![
        num(r.g_inf),
        num(r.g_np),
        num(r.d_quant),
        num(r.rho),
        opt(r.ratio),
        num(r.eta),
        num(r.a0),
        num(r.z0),
        num(r.er_leading),
        prov,
    ];
    Ok(Outcome::new(result, &["g_inf", "g_np", "d", "rho", "ratio", "eta", "a0", "z0", "er_leading", "provenance"], vec![row]))
}

fn bartlett(cfg: &RunConfig, inst: &ModelInstance) -> Result<Outcome, CliError> {
    let cs = cumulants(cfg, inst, CumulantOrder::Fourth)?;
    let geom = info_geometry(&cs.lam2).map_err(CliError::numeric)?;
    let b = bartlett_decompose(&cs, &geom).map_err(CliError::numeric)?;
    let explicit = b_np_explicit(&cs, &geom).map_err(CliError::numeric)?;
    let orth = orthogonal_bnp(&cs, &geom).ok();
    let prov = provenance(&cs);
    let result = json!({
        "b": b.b, "b_inf": b.b_inf, "b_np": b.b_np, "b_np_explicit": explicit,
        "b_np_orthogonal": orth, "provenance": prov, "theta": inst.theta,
    });
    let row = vec![num(b.b), num(b.b_inf), num(b.b_np), num(explicit), opt(orth), prov];
    Ok(Outcome::new(result, &["b", "b_inf", "b_np", "b_np_explicit", "b_np_orthogonal", "provenance"], vec![row]))
}

fn read_data(path: &Path, inst: &ModelInstance) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read data {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("data row {}: {e}", i + 1)))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| CliError::Config(format!("data row {}: `{s}`: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let (nr, nc) = inst.model.shape();
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(CliError::Config(format!("data must be {nr} rows of {nc} values")));
    }
    let values = (0..nc).flat_map(|j| rows.iter().map(move |r| r[j])).collect();
    Dataset::new(nr, nc, values).map_err(config_err)
}

fn pivots(cfg: &RunConfig, inst: &ModelInstance) -> Result<Outcome, CliError> {
    let cs = cumulants(cfg, inst, CumulantOrder::Third)?;
    let geom = info_geometry(&cs.lam2).map_err(CliError::numeric)?;
    let report = adjustment_report(&cs, &geom);
    let kinds: Vec<PivotKind> = match &cfg.kind {
        Some(k) => vec![PivotKind::parse(k).expect("validated")],
        None => PivotKind::ALL.to_vec(),
    };
    let pcs: Vec<_> = kinds.iter().map(|&k| pivot_cumulants(&report, k)).collect();
    let rows = pcs.iter().map(|p| vec![p.pivot_kind.name().to_string(), num(p.kappa1), num(p.kappa3)]).collect();
    let mut result = json!({ "cumulants": pcs, "theta": inst.theta });
    if let Some(path) = &cfg.data {
        let data = read_data(path, inst)?;
        let psi = cfg.psi0.unwrap_or(inst.theta[0]);
        let stats = evaluate(&inst.model, &data, psi, cfg.plug_in).map_err(CliError::numeric)?;
        result["statistics"] = to_value(&stats);
    }
    Ok(Outcome::new(result, &["pivot_kind", "kappa1", "kappa3"], rows))
}

fn table(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let which = cfg.table.expect("resolved");
    let qs: Vec<usize> = if which == 1 { TABLE1_Q.to_vec() } else { TABLE2_Q.to_vec() };
    let mut rows = Vec::new();
    let mut json_rows = Vec::new();
    for label in ["a", "b"] {
        let mut values = Vec::new();
        for &q in &qs {
            let (_, ratio) = table_case(&TableCase::new(which, label, q)).map_err(CliError::numeric)?;
            let v = ratio.ok_or_else(|| CliError::Numeric(format!("ratio undefined for case {label}, q = {q}")))?;
            values.push(if cfg.precise { v } else { round2(v) });
        }
        let mut row = vec![label.to_string()];
        row.extend(values.iter().map(|&v| if cfg.precise { num(v) } else { format!("{v:.2}") }));
        rows.push(row);
        json_rows.push(json!({ "case": label, "values": values }));
    }
    let mut header = vec!["case".to_string()];
    header.extend(qs.iter().map(|q| q.to_string()));
    let result = json!({ "table": which, "q": qs, "rows": json_rows });
    Ok(Outcome { result, header, rows, notes: Vec::new(), failure: None })
}

fn sim_options(cfg: &RunConfig) -> SimOptions {
    SimOptions { reps: cfg.reps, seed: cfg.seed, workers: cfg.workers, plug_in: cfg.plug_in, ..SimOptions::default() }
}

#[derive(Serialize)]
struct StudySummary<'a> {
    model: &'a str,
    theta: &'a [f64],
    psi0: f64,
    reps: usize,
    seed: u64,
    pivotal_reduction_applied: bool,
    observed_r: Option<f64>,
    observed_r_a: Option<f64>,
    p_lower: Option<f64>,
    p_upper: Option<f64>,
    failures: &'a [likadj::simulation::ReplicateFailure],
    diagnostics: Vec<Value>,
}

fn summarize(study: &SimStudy) -> (Value, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    for s in &study.results {
        let d = &s.diagnostics;
        let mut row = vec![s.pivot.name().to_string(), d.count.to_string(), num(d.mean), num(d.se), num(d.skewness), num(d.ks)];
        for c in &d.coverage {
            row.push(num(c.lower));
            row.push(num(c.upper));
        }
        rows.push(row);
        let mut v = to_value(d);
        v["pivot"] = Value::String(s.pivot.name().into());
        diags.push(v);
    }
    let summary = StudySummary {
        model: &study.model,
        theta: &study.theta,
        psi0: study.psi0,
        reps: study.options.reps,
        seed: study.options.seed,
        pivotal_reduction_applied: study.pivotal_reduction_applied,
        observed_r: study.observed.as_ref().map(|o| o.r),
        observed_r_a: study.observed.as_ref().map(|o| o.r_a),
        p_lower: study.p_lower,
        p_upper: study.p_upper,
        failures: &study.failures,
        diagnostics: diags,
    };
    (to_value(&summary), rows)
}

pub const STUDY_HEADER: [&str; 12] =
    ["pivot", "count", "mean", "se", "skewness", "ks", "lower_90", "upper_90", "lower_95", "upper_95", "lower_99", "upper_99"];

/// Stream index of the synthetic observed dataset when none is supplied;
/// disjoint from the replicate streams `0..reps`.
pub const OBSERVED_STREAM: u64 = u64::MAX;

fn bootstrap(cfg: &RunConfig, inst: &ModelInstance) -> Result<Outcome, CliError> {
    let data = match &cfg.data {
        Some(p) => read_data(p, inst)?,
        None => inst.sample(cfg.seed, OBSERVED_STREAM),
    };
    let psi0 = cfg.psi0.expect("resolved");
    let study = bootstrap_distribution(&inst.model, &data, psi0, &sim_options(cfg)).map_err(CliError::numeric)?;
    let (result, rows) = summarize(&study);
    let mut out = Outcome::new(result, &STUDY_HEADER, rows);
    let r = study.observed.as_ref().map(|o| o.r).unwrap_or(f64::NAN);
    out.notes.push(format!("observed_r={r} p_lower={} p_upper={}", opt(study.p_lower), opt(study.p_upper)));
    Ok(out)
}

fn verify(cfg: &RunConfig, inst: &ModelInstance) -> Result<Outcome, CliError> {
    let grid = cfg.n_grid.clone().expect("resolved");
    let opts = sim_options(cfg);
    let quantity = cfg.quantity.as_deref().expect("resolved");
    let reports: Vec<ExpansionReport> = if quantity == "all" {
        verify_expansions(inst, &grid, &opts).map_err(CliError::numeric)?
    } else {
        let q = ExpansionQuantity::parse(quantity).expect("validated");
        vec![verify_expansion(inst, q, &grid, &opts).map_err(CliError::numeric)?]
    };
    let mut rows = Vec::new();
    for rep in &reports {
        for r in &rep.rows {
            rows.push(vec![
                rep.quantity.name().to_string(),
                r.n.to_string(),
                num(r.mc),
                num(r.se),
                num(r.theory),
                num(r.residual),
                num(r.residual_times_n),
                num(r.tolerance),
                r.failures.to_string(),
                to_value(&r.verdict).as_str().unwrap_or_default().to_string(),
            ]);
        }
    }
    let failed: Vec<&str> = reports.iter().filter(|r| r.verdict() == Verdict::Fail).map(|r| r.quantity.name()).collect();
    let mut out = Outcome::new(
        to_value(&reports),
        &["quantity", "n", "mc", "se", "theory", "residual", "residual_times_n", "tolerance", "failures", "verdict"],
        rows,
    );
    if !failed.is_empty() {
        out.failure = Some(format!("expansion check failed for {}", failed.join(", ")));
    }
    Ok(out)
}

fn apply_tolerances(mut c: IdentityCheck, tol: &Tolerances) -> IdentityCheck {
    if c.name.starts_with("fd-") {
        if let Some(t) = tol.fd_rel {
            c.pass = c.max_residual <= t * c.scale;
        }
    } else if let Some(z) = c.max_z {
        if let Some(k) = tol.mc_se_multiple {
            c.pass = z <= k || c.max_residual <= 1e-9 * c.scale;
        }
    } else if let Some(t) = tol.analytic_rel {
        c.pass = c.max_residual <= t * c.scale;
    }
    c
}

fn validate(cfg: &RunConfig, mc: Option<&ModelConfig>) -> Result<Outcome, CliError> {
    let configs: Vec<ModelConfig> = match mc {
        Some(m) => vec![m.clone()],
        None => MODEL_NAMES.iter().map(|n| ModelConfig::default_for(n).expect("registered")).collect(),
    };
    let mut rows = Vec::new();
    let mut docs = Vec::new();
    let mut failed = Vec::new();
    for m in &configs {
        let inst = m.build().map_err(config_err)?;
        let mut checks = validate_analytic(&inst).map_err(CliError::numeric)?;
        let reps = cfg.reps.max(likadj::cumulants::MIN_MC_REPS);
        let mc_set = cumulants_mc(&inst, CumulantOrder::Fourth, reps, cfg.seed).map_err(CliError::numeric)?;
        let reference = mc_reference(&inst, &mc_set).map_err(CliError::numeric)?;
        for mut c in likadj::cumulants::check_identities(&mc_set) {
            c.name = format!("mc-{}", c.name);
            checks.push(c);
        }
        checks.extend(check_agreement(&mc_set, &reference).map_err(CliError::numeric)?);
        let checks: Vec<IdentityCheck> = checks.into_iter().map(|c| apply_tolerances(c, &cfg.tolerances)).collect();
        for c in &checks {
            if !c.pass {
                failed.push(format!("{}/{}", m.name(), c.name));
            }
            rows.push(vec![
                m.name().to_string(),
                c.name.clone(),
                num(c.max_residual),
                num(c.scale),
                opt(c.max_z),
                c.pass.to_string(),
            ]);
        }
        docs.push(json!({ "model": m.name(), "checks": checks, "mc_reps": reps }));
    }
    let result = json!({
        "models": docs,
        "tolerances": {
            "analytic_rel": cfg.tolerances.analytic_rel.unwrap_or(ANALYTIC_TOL),
            "mc_se_multiple": cfg.tolerances.mc_se_multiple.unwrap_or(MC_SE_MULTIPLE),
        },
        "pass": failed.is_empty(),
    });
    let mut out = Outcome::new(result, &["model", "check", "max_residual", "scale", "max_z", "pass"], rows);
    if !failed.is_empty() {
        out.failure = Some(format!("{} check(s) failed: {}", failed.len(), failed.join(", ")));
    }
    Ok(out)
}
