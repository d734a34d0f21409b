//! Per-kind keys, validation and execution.

use serde_json::{Value, json};

use super::{ExperimentConfig, ExperimentKind, JobOutput, Payload};
use crate::bootstrap::{bp_closure, classify_stable};
use crate::duality::{Method, ProbeStart, SetDescriptor, dfp_ergodicity_probe, parse_sites, quasi_duality_sides, self_duality_sides};
use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Site, Topology, Window};
use crate::models::{ModelKind, ModelSpec, TypeMap};
use crate::rng;
use crate::sim::{
    BarrierKind, InitialCondition, PersistenceQuery, PersistenceVariant, Record, Region, build_timeline, default_ell,
    evolve, find_barrier, front_trace, good_point_grid, persistence_profile, run_replicas,
};
use crate::spectral::{
    GapMethod, Restriction, chain, log_sobolev_of_chain, restricted_block_log_sobolev, spectral_gap, spectral_gap_with,
    stationary_vector, worst_case_profile,
};
use crate::stats::mean_stderr;
use crate::verify::single_infection_starts;

/// A configuration key and its command-line flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeySpec {
    pub key: &'static str,
    pub flag: &'static str,
    pub help: &'static str,
    /// Presence flag; stored as `true`.
    pub switch: bool,
}

const fn k(key: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, flag: key, help, switch: false }
}

const COMMON: &[KeySpec] = &[k("seed", "Master seed (default 0)"), k("output", "Output file (CSV or JSONL)")];

const MODEL: &[KeySpec] = &[
    k("model", "fa1f | east | east-polluted | delta-west | babp | dfp"),
    k("q", "Equilibrium density of infected sites"),
    k("lambda", "DFP or BABP parameter lambda = q/p"),
    k("delta", "Right-neighbour weight of the delta-West process"),
    k("types", "Periodic E/F pattern of the East-polluted model"),
    k("types_anchor", "Site where the type pattern starts (default 0)"),
];

const WINDOW: &[KeySpec] = &[
    k("n", "Window size; sites 0..n-1"),
    k("lo", "Leftmost site (with hi)"),
    k("hi", "Rightmost site (with lo)"),
    k("topology", "line | circle"),
    k("bc", "Boundary states left,right: healthy | infected"),
];

const SIMULATE: &[KeySpec] = &[
    k("initial", "Initial configuration as a 0/1 string (1 = healthy)"),
    k("initial_density", "Healthy density of a random initial configuration"),
    k("horizon", "Final time"),
    k("record", "final | events | snapshots"),
    k("dt", "Snapshot interval"),
];

const FRONT: &[KeySpec] = &[
    k("initial", "Initial configuration (default a single infection)"),
    k("initial_lo", "Site of the first character of initial"),
    k("horizon", "Final time"),
    k("sample_dt", "Sampling interval"),
    k("m", "Truncation speed: window grows by ceil(m T)"),
    k("replicas", "Independent runs"),
];

const PERSISTENCE: &[KeySpec] = &[
    k("initial_density", "Healthy density of the background"),
    k("vacancies", "Sites that start infected (default 0)"),
    k("region", "east_sites | interval"),
    k("sizes", "East-site counts for region = east_sites"),
    k("region_lo", "Left end for region = interval"),
    k("region_hi", "Right end for region = interval"),
    k("variant", "at_time | by_time"),
    k("horizon", "Final time"),
    k("replicas", "Independent runs"),
    k("m", "Truncation speed"),
];

const BARRIERS: &[KeySpec] = &[
    k("q", "Equilibrium density of infected sites (default 0.5)"),
    k("delta", "Right-neighbour weight"),
    k("n", "Number of sites"),
    k("horizon", "Final time"),
    k("ell", "Block length (default floor(kappa/delta))"),
    k("barrier", "ne | nw"),
    k("start_lo", "Left end of the start region"),
    k("start_hi", "Right end of the start region"),
];

const BOOTSTRAP: &[KeySpec] = &[
    k("initial", "Configuration as a 0/1 string"),
    k("lo", "Site of the first character"),
    k("topology", "line | circle"),
    k("bc", "Boundary states left,right"),
];

const SPECTRUM: &[KeySpec] = &[
    k("restriction", "none | at_least_one_infection | one_infection_per_block(l) | parity(+|-)"),
    k("method", "auto | dense | lanczos | rayleigh"),
];

const LOGSOB: &[KeySpec] = &[
    k("restriction", "State-space restriction"),
    k("ell", "Block length of the restricted block chain"),
    k("blocks", "Number of blocks of the restricted block chain"),
];

const MIXING: &[KeySpec] = &[
    k("restriction", "State-space restriction"),
    k("t_max", "Last time of the grid"),
    k("dt", "Grid spacing"),
    k("eps", "Thresholds for t_mix (comma list)"),
    k("start", "worst | single | a 0/1 configuration"),
];

const DUALITY: &[KeySpec] = &[
    k("lambda", "BABP/DFP parameter"),
    KeySpec { key: "b", flag: "B", help: "Sites of B (comma list)", switch: false },
    KeySpec { key: "b_prime", flag: "Bprime", help: "B' for self-duality: sites, full or bernoulli(a)", switch: false },
    KeySpec { key: "d", flag: "D", help: "D for quasi-duality: sites, full or bernoulli(a)", switch: false },
    k("identity", "self | quasi (default from B' or D)"),
    k("t", "Time"),
    KeySpec { key: "exact", flag: "exact", help: "Exact semigroup evaluation", switch: true },
    k("replicas", "Monte Carlo replicas (default 10000)"),
    k("lo", "Window left end (default padded hull)"),
    k("hi", "Window right end"),
];

const DFP_ERGODICITY: &[KeySpec] = &[
    k("lambda", "DFP parameter"),
    k("n", "Number of sites"),
    k("start", "worst | stationary | a 0/1 configuration"),
    k("t_max", "Last time of the grid"),
    k("dt", "Grid spacing"),
    k("fit_lo", "Start of the fit window"),
    k("fit_hi", "End of the fit window"),
    k("replicas", "Monte Carlo replicas (exact when absent)"),
];

/// Every key accepted by `kind`.
pub fn keys_for(kind: ExperimentKind) -> Vec<KeySpec> {
    use ExperimentKind::*;
    let parts: &[&[KeySpec]] = match kind {
        Simulate => &[MODEL, WINDOW, SIMULATE],
        Front => &[MODEL, FRONT],
        Persistence => &[MODEL, PERSISTENCE],
        Barriers => &[BARRIERS],
        Bootstrap => &[MODEL, BOOTSTRAP],
        Spectrum => &[MODEL, WINDOW, SPECTRUM],
        Logsob => &[MODEL, WINDOW, LOGSOB],
        Mixing => &[MODEL, WINDOW, MIXING],
        Duality => &[DUALITY],
        DfpErgodicity => &[DFP_ERGODICITY],
    };
    let mut v: Vec<KeySpec> = COMMON.to_vec();
    for p in parts {
        for s in *p {
            if !v.iter().any(|x| x.key == s.key) {
                v.push(*s);
            }
        }
    }
    v
}

pub(super) type Run = Box<dyn FnOnce() -> Result<JobOutput> + Send>;

pub(super) fn plan(kind: ExperimentKind, cfg: &ExperimentConfig, seed: u64) -> Result<Run> {
    use ExperimentKind::*;
    match kind {
        Simulate => plan_simulate(cfg, seed),
        Front => plan_front(cfg, seed),
        Persistence => plan_persistence(cfg, seed),
        Barriers => plan_barriers(cfg, seed),
        Bootstrap => plan_bootstrap(cfg),
        Spectrum => plan_spectrum(cfg),
        Logsob => plan_logsob(cfg),
        Mixing => plan_mixing(cfg),
        Duality => plan_duality(cfg, seed),
        DfpErgodicity => plan_dfp_ergodicity(cfg, seed),
    }
}

fn missing(key: &str) -> Error {
    Error::Config { line: 0, message: format!("missing required key '{key}'") }
}

fn positive(cfg: &ExperimentConfig, key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() { Ok(v) } else { Err(cfg.error(key, format!("{v} must be positive"))) }
}

fn nonneg(cfg: &ExperimentConfig, key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() { Ok(v) } else { Err(cfg.error(key, format!("{v} must be >= 0"))) }
}

fn at_least_one(cfg: &ExperimentConfig, key: &str, v: usize) -> Result<usize> {
    if v >= 1 { Ok(v) } else { Err(cfg.error(key, "must be at least 1")) }
}

pub(super) fn model_from(cfg: &ExperimentConfig) -> Result<ModelSpec> {
    let kind: ModelKind = cfg.at("model", cfg.require::<String>("model").and_then(|s| s.parse()))?;
    let q = || cfg.get::<f64>("q");
    let lambda = || cfg.get::<f64>("lambda");
    match kind {
        ModelKind::Fa1f => cfg.at("q", ModelSpec::fa1f(q()?.ok_or_else(|| missing("q"))?)),
        ModelKind::East => cfg.at("q", ModelSpec::east(q()?.ok_or_else(|| missing("q"))?)),
        ModelKind::DeltaWest => {
            let qv = q()?.ok_or_else(|| missing("q"))?;
            let d: f64 = cfg.require("delta")?;
            cfg.at("delta", ModelSpec::delta_west(qv, d))
        }
        ModelKind::EastPolluted => {
            let qv = q()?.ok_or_else(|| missing("q"))?;
            let pattern: String = cfg.require("types")?;
            let anchor: Site = cfg.get_or("types_anchor", 0)?;
            let tm = cfg.at("types", TypeMap::periodic(&pattern, anchor))?;
            cfg.at("q", ModelSpec::east_polluted(qv, tm))
        }
        ModelKind::Babp => match (q()?, lambda()?) {
            (Some(_), Some(_)) => Err(cfg.error("lambda", "give q or lambda, not both")),
            (Some(qv), None) => cfg.at("q", ModelSpec::babp(qv)),
            (None, Some(l)) => cfg.at("lambda", ModelSpec::babp_lambda(l)),
            (None, None) => Err(missing("q")),
        },
        ModelKind::Dfp => match (q()?, lambda()?) {
            (Some(_), Some(_)) => Err(cfg.error("lambda", "give q or lambda, not both")),
            (Some(qv), None) => {
                if !(qv > 0.0 && qv < 1.0) {
                    return Err(cfg.error("q", format!("q={qv} not in (0,1)")));
                }
                cfg.at("q", ModelSpec::dfp(qv / (1.0 - qv)))
            }
            (None, Some(l)) => cfg.at("lambda", ModelSpec::dfp(l)),
            (None, None) => Err(missing("lambda")),
        },
    }
}

fn topology_from(cfg: &ExperimentConfig) -> Result<Topology> {
    match cfg.get_or("topology", "line".to_string())?.as_str() {
        "line" => Ok(Topology::Line),
        "circle" => Ok(Topology::Circle),
        o => Err(cfg.error("topology", format!("'{o}' is not line or circle"))),
    }
}

pub(super) fn window_from(cfg: &ExperimentConfig) -> Result<Window> {
    let topo = topology_from(cfg)?;
    let (lo, hi) = match (cfg.get::<usize>("n")?, cfg.get::<Site>("lo")?, cfg.get::<Site>("hi")?) {
        (Some(n), None, None) => (0, at_least_one(cfg, "n", n)? as Site - 1),
        (None, Some(lo), Some(hi)) => (lo, hi),
        (None, None, None) => return Err(missing("n")),
        (Some(_), _, _) => return Err(cfg.error("n", "give either n or lo/hi")),
        _ => return Err(cfg.error(if cfg.contains("lo") { "lo" } else { "hi" }, "lo and hi go together")),
    };
    let key = if cfg.contains("n") { "n" } else { "lo" };
    cfg.at(key, Window::new(lo, hi, topo))
}

fn bc_from(cfg: &ExperimentConfig) -> Result<BoundaryCondition> {
    cfg.get_or("bc", BoundaryCondition::HEALTHY)
}

fn restriction_from(cfg: &ExperimentConfig) -> Result<Restriction> {
    cfg.get_or("restriction", Restriction::None)
}

fn configuration(cfg: &ExperimentConfig, key: &str, lo_key: &str, topo: Topology) -> Result<Option<Configuration>> {
    let Some(s) = cfg.get::<String>(key)? else { return Ok(None) };
    let lo: Site = cfg.get_or(lo_key, 0)?;
    cfg.at(key, Configuration::parse_in(&s, lo, topo)).map(Some)
}

fn time_grid(cfg: &ExperimentConfig, t_max_default: f64, dt_default: f64) -> Result<Vec<f64>> {
    let t_max = nonneg(cfg, "t_max", cfg.get_or("t_max", t_max_default)?)?;
    let dt = positive(cfg, "dt", cfg.get_or("dt", dt_default)?)?;
    let steps = (t_max / dt + 1e-9).floor() as usize;
    if steps > 1_000_000 {
        return Err(cfg.error("dt", "more than 10^6 grid points"));
    }
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

fn random_configuration(window: Window, density: f64, seed: u64) -> Result<Configuration> {
    let mut r = rng::stream(seed, 0, rng::tag::INITIAL);
    let bits: Vec<u8> = window.iter().map(|_| u8::from(rng::bernoulli(&mut r, density))).collect();
    Configuration::from_bits(window, &bits)
}

fn density(cfg: &ExperimentConfig, key: &str, default: f64) -> Result<f64> {
    let d = cfg.get_or(key, default)?;
    if (0.0..=1.0).contains(&d) { Ok(d) } else { Err(cfg.error(key, format!("{d} not in [0,1]"))) }
}

fn opt_site<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn plan_simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Run> {
    let model = model_from(cfg)?;
    let bc = bc_from(cfg)?;
    let horizon = nonneg(cfg, "horizon", cfg.require("horizon")?)?;
    let eta0 = match configuration(cfg, "initial", "lo", topology_from(cfg)?)? {
        Some(c) => {
            if cfg.contains("n") || cfg.contains("hi") || cfg.contains("initial_density") {
                return Err(cfg.error("initial", "an explicit initial configuration fixes the window"));
            }
            c
        }
        None => {
            let w = window_from(cfg)?;
            let d = density(cfg, "initial_density", model.equilibrium_healthy_density())?;
            random_configuration(w, d, rng::derive_seed(seed, u64::MAX))?
        }
    };
    cfg.at("model", model.validate_window(&eta0.window()))?;
    let record = match cfg.get_or("record", "final".to_string())?.as_str() {
        "final" => Record::FinalOnly,
        "events" => Record::Events,
        "snapshots" => Record::Snapshots(positive(cfg, "dt", cfg.require("dt")?)?),
        o => return Err(cfg.error("record", format!("'{o}' is not final, events or snapshots"))),
    };
    Ok(Box::new(move || {
        let tl = build_timeline(&model, eta0.window(), horizon, seed)?;
        let tr = evolve(&model, &eta0, &bc, &tl, record)?;
        let payload = match record {
            Record::Events => Payload::Csv {
                header: "time,site,clock,legal,new_state,partner,partner_state".into(),
                rows: tr
                    .events
                    .iter()
                    .map(|e| {
                        let clock = serde_json::to_value(e.clock).unwrap_or(Value::Null);
                        let (ps, pv) = e.partner.map_or((String::new(), String::new()), |(x, s)| (x.to_string(), s.to_string()));
                        format!("{},{},{},{},{},{ps},{pv}", e.time, e.site, clock.as_str().unwrap_or(""), e.legal, e.new_state)
                    })
                    .collect(),
            },
            Record::Snapshots(_) => Payload::Csv {
                header: "t,config".into(),
                rows: tr.snapshots.iter().map(|s| format!("{},{}", s.time, s.config)).collect(),
            },
            Record::FinalOnly => Payload::Csv { header: "t,config".into(), rows: vec![format!("{horizon},{}", tr.final_config)] },
        };
        Ok(JobOutput {
            summary: json!({
                "model": model,
                "window": eta0.window(),
                "initial": eta0,
                "final": tr.final_config,
                "infections": tr.final_config.count_infections(),
                "rings": tl.ring_count(),
            }),
            payload,
        })
    }))
}

fn plan_front(cfg: &ExperimentConfig, seed: u64) -> Result<Run> {
    let model = model_from(cfg)?;
    let eta0 = configuration(cfg, "initial", "initial_lo", Topology::Line)?
        .unwrap_or(Configuration::parse_at("0", cfg.get_or("initial_lo", 0)?)?);
    if eta0.count_infections() == 0 {
        return Err(cfg.error("initial", "needs at least one infection"));
    }
    let horizon = positive(cfg, "horizon", cfg.require("horizon")?)?;
    let sample_dt = positive(cfg, "sample_dt", cfg.get_or("sample_dt", horizon)?)?;
    let m = positive(cfg, "m", cfg.get_or("m", 2.0)?)?;
    let replicas = at_least_one(cfg, "replicas", cfg.get_or("replicas", 1)?)?;
    Ok(Box::new(move || {
        let traces = run_replicas(replicas, seed, |_, s| front_trace(&model, &eta0, horizon, sample_dt, s, m))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (r, tr) in traces.iter().enumerate() {
            for s in &tr.samples {
                let f = s.fronts;
                rows.push(format!(
                    "{r},{},{},{},{},{}",
                    s.t,
                    opt_site(f.x_minus),
                    opt_site(f.x_plus),
                    opt_site(f.y),
                    opt_site(f.d)
                ));
            }
        }
        let per_t = |g: fn(&crate::lattice::FrontSummary) -> Option<u64>| {
            let v: Vec<f64> = traces.iter().map(|t| g(&t.last().fronts).unwrap_or(0) as f64 / horizon).collect();
            mean_stderr(&v)
        };
        let (y, y_se) = per_t(|f| f.y);
        let (d, d_se) = per_t(|f| f.d);
        Ok(JobOutput {
            summary: json!({
                "model": model,
                "replicas": replicas,
                "horizon": horizon,
                "mean_y_over_t": y, "stderr_y_over_t": y_se,
                "mean_d_over_t": d, "stderr_d_over_t": d_se,
                "edge_reached": traces.iter().filter(|t| t.edge_reached).count(),
                "extinct": traces.iter().filter(|t| t.extinct).count(),
            }),
            payload: Payload::Csv { header: "replica,t,x_minus,x_plus,y,d".into(), rows },
        })
    }))
}

fn plan_persistence(cfg: &ExperimentConfig, seed: u64) -> Result<Run> {
    let model = model_from(cfg)?;
    let healthy_density = density(cfg, "initial_density", model.p())?;
    let vacancies: Vec<Site> = cfg.get_list("vacancies")?.unwrap_or(vec![0]);
    let regions = match cfg.get_or("region", "east_sites".to_string())?.as_str() {
        "east_sites" => {
            let sizes: Vec<usize> = cfg.get_list("sizes")?.unwrap_or(vec![1]);
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(cfg.error("sizes", "sizes must be positive"));
            }
            sizes.into_iter().map(|n| Region::EastSites { n }).collect()
        }
        "interval" => {
            let lo: Site = cfg.require("region_lo")?;
            let hi: Site = cfg.require("region_hi")?;
            if lo > hi {
                return Err(cfg.error("region_lo", format!("empty region [{lo}, {hi}]")));
            }
            vec![Region::Interval { lo, hi }]
        }
        o => return Err(cfg.error("region", format!("'{o}' is not east_sites or interval"))),
    };
    let variant = match cfg.get_or("variant", "at_time".to_string())?.as_str() {
        "at_time" => PersistenceVariant::AtTime,
        "by_time" => PersistenceVariant::ByTime,
        o => return Err(cfg.error("variant", format!("'{o}' is not at_time or by_time"))),
    };
    if !matches!(model.kind, ModelKind::East | ModelKind::EastPolluted | ModelKind::DeltaWest | ModelKind::Fa1f) {
        return Err(cfg.error("model", format!("persistence is not available for {}", model.kind)));
    }
    let query = PersistenceQuery {
        model,
        initial: InitialCondition::Background { healthy_density, vacancies },
        regions,
        variant,
        horizon: nonneg(cfg, "horizon", cfg.require("horizon")?)?,
        replicas: at_least_one(cfg, "replicas", cfg.get_or("replicas", 1000)?)?,
        seed,
        m: positive(cfg, "m", cfg.get_or("m", 2.0)?)?,
    };
    Ok(Box::new(move || {
        let est = persistence_profile(&query)?;
        let records: Vec<Value> = est.iter().map(|e| serde_json::to_value(e).unwrap_or(Value::Null)).collect();
        Ok(JobOutput { summary: json!({ "model": query.model, "estimates": records }), payload: Payload::Jsonl(records) })
    }))
}

fn plan_barriers(cfg: &ExperimentConfig, seed: u64) -> Result<Run> {
    let q = cfg.get_or("q", 0.5)?;
    let delta: f64 = cfg.require("delta")?;
    let model = cfg.at("delta", ModelSpec::delta_west(q, delta))?;
    let n = at_least_one(cfg, "n", cfg.require("n")?)?;
    let window = cfg.at("n", Window::sites(n))?;
    let ell = match cfg.get::<f64>("ell")? {
        Some(l) => positive(cfg, "ell", l)?,
        None => cfg.at("delta", default_ell(delta))?,
    };
    let horizon = positive(cfg, "horizon", cfg.get_or("horizon", 10.0 * ell)?)?;
    let kind = match cfg.get_or("barrier", "ne".to_string())?.as_str() {
        "ne" => BarrierKind::NeBarrier,
        "nw" => BarrierKind::NwGate,
        o => return Err(cfg.error("barrier", format!("'{o}' is not ne or nw"))),
    };
    let region = (cfg.get_or("start_lo", 0)?, cfg.get_or("start_hi", n as Site - 1)?);
    if region.0 > region.1 {
        return Err(cfg.error("start_lo", "empty start region"));
    }
    Ok(Box::new(move || {
        let tl = build_timeline(&model, window, horizon, seed)?;
        let grid = good_point_grid(&tl, ell)?;
        let path = find_barrier(&grid, kind, region)?;
        let summary = json!({
            "model": model,
            "ell": ell,
            "rows": grid.rows,
            "cols": grid.cols(),
            "good_fraction": grid.good_fraction(),
            "expected_good_fraction": (-delta * ell).exp(),
            "barrier_found": path.is_some(),
            "barrier": path,
        });
        let records = path.iter().map(|p| serde_json::to_value(p).unwrap_or(Value::Null)).collect();
        Ok(JobOutput { summary, payload: Payload::Jsonl(records) })
    }))
}

fn plan_bootstrap(cfg: &ExperimentConfig) -> Result<Run> {
    let model = model_from(cfg)?;
    let eta = configuration(cfg, "initial", "lo", topology_from(cfg)?)?.ok_or_else(|| missing("initial"))?;
    let bc = bc_from(cfg)?;
    cfg.at("model", model.validate_window(&eta.window()))?;
    if model.is_edge_model() {
        return Err(cfg.error("model", "bootstrap closure is defined for site models only"));
    }
    Ok(Box::new(move || {
        let closure = bp_closure(&model, &eta, &bc)?;
        let class = classify_stable(&model, &closure, &bc)?;
        let rec = json!({
            "model": model,
            "bc": bc.to_string(),
            "initial": eta,
            "closure": closure,
            "stable_initially": closure == eta,
            "class": class,
        });
        Ok(JobOutput { summary: rec.clone(), payload: Payload::Jsonl(vec![rec]) })
    }))
}

fn plan_spectrum(cfg: &ExperimentConfig) -> Result<Run> {
    let model = model_from(cfg)?;
    let window = window_from(cfg)?;
    let bc = bc_from(cfg)?;
    let restriction = restriction_from(cfg)?;
    cfg.at("model", model.validate_window(&window))?;
    let method = match cfg.get_or("method", "auto".to_string())?.as_str() {
        "auto" => None,
        "dense" => Some(GapMethod::Dense),
        "lanczos" => Some(GapMethod::Lanczos),
        "rayleigh" => Some(GapMethod::Rayleigh),
        o => return Err(cfg.error("method", format!("unknown method '{o}'"))),
    };
    Ok(Box::new(move || {
        let g = chain(&model, window, bc, restriction)?;
        let mu = stationary_vector(&g)?;
        let gap = match method {
            None => spectral_gap(&g, &mu)?,
            Some(m) => spectral_gap_with(&g, &mu, m)?,
        };
        let rec = json!({
            "model": model,
            "window": window,
            "bc": bc.to_string(),
            "restriction": restriction.to_string(),
            "states": g.dim(),
            "transitions": g.nnz(),
            "gap": gap,
            "relaxation_time": 1.0 / gap,
        });
        Ok(JobOutput { summary: rec.clone(), payload: Payload::Jsonl(vec![rec]) })
    }))
}

fn plan_logsob(cfg: &ExperimentConfig) -> Result<Run> {
    if cfg.contains("ell") || cfg.contains("blocks") {
        let q: f64 = cfg.require("q")?;
        let delta: f64 = cfg.require("delta")?;
        let ell = at_least_one(cfg, "ell", cfg.require("ell")?)?;
        let blocks = at_least_one(cfg, "blocks", cfg.get_or("blocks", 2)?)?;
        cfg.at("delta", ModelSpec::delta_west(q, delta))?;
        return Ok(Box::new(move || {
            let r = restricted_block_log_sobolev(q, ell, blocks, delta)?;
            let rec = json!({
                "chain": "restricted_blocks", "q": q, "delta": delta, "ell": ell, "blocks": blocks,
                "c_sob": r.c_sob, "gap": r.gap, "optimizer_ratio": r.optimizer_ratio, "achieved_by": r.achieved_by,
                "entropy": r.entropy, "dirichlet": r.dirichlet,
            });
            Ok(JobOutput { summary: rec.clone(), payload: Payload::Jsonl(vec![rec]) })
        }));
    }
    let model = model_from(cfg)?;
    let window = window_from(cfg)?;
    let bc = bc_from(cfg)?;
    let restriction = restriction_from(cfg)?;
    cfg.at("model", model.validate_window(&window))?;
    Ok(Box::new(move || {
        let g = chain(&model, window, bc, restriction)?;
        let r = log_sobolev_of_chain(&g)?;
        let rec = json!({
            "model": model, "window": window, "bc": bc.to_string(), "restriction": restriction.to_string(),
            "states": g.dim(), "c_sob": r.c_sob, "gap": r.gap, "optimizer_ratio": r.optimizer_ratio,
            "achieved_by": r.achieved_by, "entropy": r.entropy, "dirichlet": r.dirichlet,
        });
        Ok(JobOutput { summary: rec.clone(), payload: Payload::Jsonl(vec![rec]) })
    }))
}

enum MixStart {
    Worst,
    Single,
    Config(Configuration),
}

fn plan_mixing(cfg: &ExperimentConfig) -> Result<Run> {
    let model = model_from(cfg)?;
    let window = window_from(cfg)?;
    let bc = bc_from(cfg)?;
    let restriction = restriction_from(cfg)?;
    cfg.at("model", model.validate_window(&window))?;
    let times = time_grid(cfg, 50.0, 0.25)?;
    let eps: Vec<f64> = cfg.get_list("eps")?.unwrap_or(vec![0.25]);
    if eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(cfg.error("eps", "thresholds must lie in (0,1)"));
    }
    let start = match cfg.get_or("start", "worst".to_string())?.as_str() {
        "worst" => MixStart::Worst,
        "single" => MixStart::Single,
        s => MixStart::Config(cfg.at("start", Configuration::parse_in(s, window.lo(), window.topology()))?),
    };
    Ok(Box::new(move || {
        let g = chain(&model, window, bc, restriction)?;
        let mu = stationary_vector(&g)?;
        let starts = match &start {
            MixStart::Worst => (0..g.dim()).collect(),
            MixStart::Single => single_infection_starts(g.space())?,
            MixStart::Config(c) => vec![g.space().index_of_config(c)?],
        };
        let prof = worst_case_profile(&g, &mu, &starts, &times, &eps)?;
        let rows = prof.times.iter().zip(&prof.distance).map(|(t, d)| format!("{t},{d}")).collect();
        let t_mix: Vec<Value> = prof.t_mix.iter().map(|(e, t)| json!({ "eps": e, "t_mix": t })).collect();
        Ok(JobOutput {
            summary: json!({
                "model": model, "window": window, "bc": bc.to_string(), "restriction": restriction.to_string(),
                "states": g.dim(), "starts": starts.len(), "t_mix": t_mix,
            }),
            payload: Payload::Csv { header: "t,distance".into(), rows },
        })
    }))
}

fn plan_duality(cfg: &ExperimentConfig, seed: u64) -> Result<Run> {
    let lambda: f64 = cfg.require("lambda")?;
    cfg.at("lambda", ModelSpec::dfp(lambda))?;
    let b = cfg.at("b", parse_sites(&cfg.require::<String>("b")?))?;
    let t = nonneg(cfg, "t", cfg.require("t")?)?;
    let identity = match cfg.get::<String>("identity")? {
        Some(s) => s,
        None if cfg.contains("d") => "quasi".into(),
        None => "self".into(),
    };
    let (dual_key, other) = match identity.as_str() {
        "self" => ("b_prime", "d"),
        "quasi" => ("d", "b_prime"),
        o => return Err(cfg.error("identity", format!("'{o}' is not self or quasi"))),
    };
    if cfg.contains(other) {
        return Err(cfg.error(other, format!("not used by the {identity} identity")));
    }
    let dual: SetDescriptor = cfg.require(dual_key)?;
    let exact = cfg.get_or("exact", false)?;
    let method = if exact {
        if cfg.contains("replicas") {
            return Err(cfg.error("replicas", "not used with exact"));
        }
        Method::Exact
    } else {
        let replicas = cfg.get_or("replicas", 10_000usize)?;
        if replicas < 2 {
            return Err(cfg.error("replicas", "need at least 2 replicas"));
        }
        Method::MonteCarlo { replicas, seed }
    };
    let window = match (cfg.get::<Site>("lo")?, cfg.get::<Site>("hi")?) {
        (Some(lo), Some(hi)) => Some(cfg.at("lo", Window::line(lo, hi))?),
        (None, None) => None,
        _ => return Err(cfg.error(if cfg.contains("lo") { "lo" } else { "hi" }, "lo and hi go together")),
    };
    Ok(Box::new(move || {
        let rep = if identity == "self" {
            self_duality_sides(&b, &dual, t, lambda, window, method)?
        } else {
            quasi_duality_sides(&b, &dual, t, lambda, window, method)?
        };
        let v = serde_json::to_value(&rep).map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(JobOutput { summary: v.clone(), payload: Payload::Jsonl(vec![v]) })
    }))
}

fn plan_dfp_ergodicity(cfg: &ExperimentConfig, seed: u64) -> Result<Run> {
    let lambda: f64 = cfg.require("lambda")?;
    cfg.at("lambda", ModelSpec::dfp(lambda))?;
    let n: usize = cfg.require("n")?;
    if n < 2 {
        return Err(cfg.error("n", "need at least 2 sites"));
    }
    let start = match cfg.get_or("start", "worst".to_string())?.as_str() {
        "worst" => ProbeStart::Worst,
        "stationary" => ProbeStart::Stationary,
        s => {
            let c = cfg.at("start", Configuration::parse_at(s, 0))?;
            if c.len() != n {
                return Err(cfg.error("start", format!("configuration has {} sites, n = {n}", c.len())));
            }
            ProbeStart::Config { config: c }
        }
    };
    let times = time_grid(cfg, 15.0, 0.25)?;
    let fit = (cfg.get_or("fit_lo", 4.0)?, cfg.get_or("fit_hi", 12.0)?);
    if !(fit.0 < fit.1) {
        return Err(cfg.error("fit_lo", "fit window must satisfy fit_lo < fit_hi"));
    }
    let mc = cfg.get::<usize>("replicas")?.map(|r| (r, seed));
    if let Some((r, _)) = mc {
        if r < 2 {
            return Err(cfg.error("replicas", "need at least 2 replicas"));
        }
        if matches!(start, ProbeStart::Worst) {
            return Err(cfg.error("start", "Monte Carlo needs a fixed start configuration"));
        }
    }
    Ok(Box::new(move || {
        let tr = dfp_ergodicity_probe(lambda, n, &start, &times, fit, mc)?;
        let rows = tr
            .times
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let se = tr.stderr.as_ref().map(|s| s[k].to_string()).unwrap_or_default();
                format!("{t},{},{se}", tr.trace[k])
            })
            .collect();
        Ok(JobOutput {
            summary: json!({ "lambda": lambda, "n": n, "site": tr.site, "start": tr.start, "fit": tr.fit }),
            payload: Payload::Csv { header: "t,trace,stderr".into(), rows },
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s: &str) -> ExperimentConfig {
        ExperimentConfig::parse(s).unwrap()
    }

    fn run(kind: ExperimentKind, s: &str) -> JobOutput {
        plan(kind, &cfg(s), 3).unwrap()().unwrap()
    }

    #[test]
    fn keys_are_unique_per_kind() {
        for kind in ExperimentKind::ALL {
            let ks = keys_for(kind);
            for (i, a) in ks.iter().enumerate() {
                assert!(ks[i + 1..].iter().all(|b| b.key != a.key && b.flag != a.flag), "{kind} {}", a.key);
            }
        }
    }

    #[test]
    fn model_parsing() {
        assert_eq!(model_from(&cfg("model = dfp\nlambda = 3\n")).unwrap().q, 0.75);
        assert!(model_from(&cfg("model = babp\nq = 0.5\nlambda = 1\n")).is_err());
        let e = model_from(&cfg("model = east-polluted\nq = 0.5\ntypes = EXF\n")).unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        assert!(matches!(model_from(&cfg("model = zz\n")), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn window_parsing() {
        assert_eq!(window_from(&cfg("lo = -2\nhi = 2\n")).unwrap(), Window::line(-2, 2).unwrap());
        assert!(window_from(&cfg("n = 3\nlo = 0\n")).is_err());
        assert!(window_from(&cfg("lo = 0\n")).is_err());
        assert!(window_from(&cfg("n = 4\ntopology = circle\n")).unwrap().is_circle());
    }

    #[test]
    fn simulate_snapshots() {
        let out = run(
            ExperimentKind::Simulate,
            "model = fa1f\nq = 0.5\ninitial = 101101\nhorizon = 2\nrecord = snapshots\ndt = 0.5\n",
        );
        match out.payload {
            Payload::Csv { rows, .. } => assert_eq!(rows.len(), 5),
            _ => panic!(),
        }
    }

    #[test]
    fn bootstrap_east_step() {
        let out = run(ExperimentKind::Bootstrap, "model = east\nq = 0.5\ninitial = 1101\nlo = -2\n");
        assert_eq!(out.summary["closure"]["bits"], "1100");
        assert_eq!(out.summary["class"]["class"], "east_step");
    }

    #[test]
    fn duality_exact_example() {
        let out = run(ExperimentKind::Duality, "lambda = 1\nb = 0\nb_prime = 0,1\nt = 0.5\nexact = true\n");
        assert!(out.summary["abs_diff"].as_f64().unwrap() <= 1e-8);
    }

    #[test]
    fn dfp_probe_and_mixing() {
        let out = run(ExperimentKind::DfpErgodicity, "lambda = 3\nn = 6\nt_max = 6\ndt = 0.5\nfit_lo = 1\nfit_hi = 5\n");
        assert!(out.summary["fit"]["rate"].as_f64().unwrap() > 0.0);
        let out = run(ExperimentKind::Mixing, "model = fa1f\nq = 0.5\nn = 4\nrestriction = at_least_one_infection\nstart = single\n");
        assert!(out.summary["t_mix"][0]["t_mix"].as_f64().is_some());
    }

    #[test]
    fn invalid_values_fail_before_running() {
        assert!(plan(ExperimentKind::Duality, &cfg("lambda = 1\nb = 0\nt = 0.5\nexact = true\n"), 0).is_err());
        assert!(plan(ExperimentKind::Front, &cfg("model = fa1f\nq = 0.5\ninitial = 111\nhorizon = 1\n"), 0).is_err());
        assert!(plan(ExperimentKind::Mixing, &cfg("model = fa1f\nq = 0.5\nn = 3\neps = 2\n"), 0).is_err());
        assert!(plan(ExperimentKind::Persistence, &cfg("model = babp\nq = 0.5\nhorizon = 1\n"), 0).is_err());
    }
}
