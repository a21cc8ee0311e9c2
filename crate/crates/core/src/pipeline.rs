//! Commands behind the command-line tool. Each writes its tables and a
//! manifest into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::baseline::{breslow_cumulative, estimate_lambda0, fitted_model, BreslowCurve, Lambda0Estimate};
use crate::config::{sha256_hex, FileDigest, Manifest, RunConfig};
use crate::covariates::{CovariateCatalog, DyadicAttr, GlobalSeries};
use crate::design::{assemble_difference_design, DesignOptions, MissingPolicy, TermSpec};
use crate::endostats::{competition, estimate_medians, DecayKind, DecayStat, EndogenousStat};
use crate::error::{RemError, Result};
use crate::event::EventSequence;
use crate::fitter::{default_grid, fit_degenerate_logistic, predict_smooth, write_summary_csv, FitOptions, FitResult};
use crate::fixture::write_bike_fixture;
use crate::fullik::{compare_bias_replicates, summarize_bias, write_bias_csv, CompareConfig};
use crate::ingest::{
    read_distance_matrix, read_distance_stations, read_events, read_global_series, write_events_csv,
    EventReadOptions, SeriesOptions, StationIndex, StudyWindow,
};
use crate::intensity::RiskPolicy;
use crate::scenario::CovariateScenario;
use crate::study::{run_study, summarize, write_records_csv, write_summary_csv as write_study_summary};
use crate::timeshift::{draw_shifts, sample_case_control, shift_process, ShiftAssignment, ShiftedCaseControlSet};

/// Points per emitted smooth curve.
pub const CURVE_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Shift,
    Fit,
    Baseline,
    CompareFullik,
    Study,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Shift => "shift",
            Self::Fit => "fit",
            Self::Baseline => "baseline",
            Self::CompareFullik => "compare-fullik",
            Self::Study => "study",
        }
    }
}

/// A configured run bound to an output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    /// Digest of the config file as given, or of the serialized config.
    pub config_digest: FileDigest,
    pub out_dir: PathBuf,
}

impl Run {
    pub fn from_file(path: &Path) -> Result<Self> {
        let config = RunConfig::load(path)?;
        let digest = FileDigest::of(path, path.display().to_string())?;
        let out_dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { config, config_digest: digest, out_dir })
    }

    pub fn from_config(config: RunConfig, out_dir: PathBuf) -> Result<Self> {
        config.validate()?;
        let digest = FileDigest { path: "<inline>".into(), sha256: sha256_hex(config.to_toml()?.as_bytes()) };
        Ok(Self { config, config_digest: digest, out_dir })
    }

    pub fn execute(&self, command: Command) -> Result<Manifest> {
        fs::create_dir_all(&self.out_dir)?;
        let mut out = Outputs::new(&self.out_dir);
        match command {
            Command::Simulate => self.simulate(&mut out)?,
            Command::Shift => {
                let ds = load_dataset(&self.config)?;
                let stage = shift_stage(&ds, self.config.nu, self.config.seed)?;
                write_shift_outputs(&mut out, &ds, &stage)?;
                out.details.extend(ds.details.clone());
            }
            Command::Fit => {
                let (ds, stage, fit) = self.fit()?;
                write_fit_outputs(&mut out, &fit)?;
                out.details.extend(ds.details.clone());
                shift_details(&mut out.details, &stage.ccs);
            }
            Command::Baseline => {
                let (ds, stage, fit) = self.fit()?;
                write_fit_outputs(&mut out, &fit)?;
                let (curve, lambda0) = baseline_stage(&ds, &fit)?;
                let path = out.path("breslow.csv");
                curve.write_csv(&path)?;
                out.record("breslow.csv")?;
                out.write_json("lambda0.json", &lambda0)?;
                out.details.extend(ds.details.clone());
                shift_details(&mut out.details, &stage.ccs);
            }
            Command::CompareFullik => {
                let cfg = self.compare_config();
                let reps = compare_bias_replicates(&cfg)?;
                let mut w = csv::Writer::from_path(out.path("bias_replicates.csv"))?;
                w.write_record(["method", "n", "replication", "estimate"])?;
                for r in &reps {
                    w.write_record([r.method.label().to_string(), r.n.to_string(), r.replication.to_string(), r.estimate.to_string()])?;
                }
                w.flush()?;
                out.record("bias_replicates.csv")?;
                write_bias_csv(&summarize_bias(&reps), &out.path("bias_summary.csv"))?;
                // Holds measured runtimes, so it differs between reruns.
                out.volatile.push("bias_summary.csv".into());
            }
            Command::Study => {
                let section = self
                    .config
                    .study
                    .as_ref()
                    .ok_or_else(|| RemError::Config("study needs a [study] section".into()))?;
                let study = section.to_study(self.config.seed, self.config.workers, self.config.smoothing_policy());
                let records = run_study(&study)?;
                write_records_csv(&records, &out.path("study_records.csv"))?;
                out.record("study_records.csv")?;
                write_study_summary(&summarize(&records), &out.path("study_summary.csv"))?;
                out.record("study_summary.csv")?;
            }
        }
        let inputs = self.input_digests()?;
        let manifest = Manifest {
            tool: "remshift".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.name().into(),
            seed: self.config.seed,
            workers: self.config.workers,
            nu: self.config.nu,
            config: self.config_digest.clone(),
            inputs,
            outputs: out.digests,
            details: {
                let mut d = out.details;
                if !out.volatile.is_empty() {
                    d.insert("volatile_outputs".into(), json!(out.volatile));
                }
                d
            },
        };
        // The effective configuration, so the run can be repeated from here.
        fs::write(self.out_dir.join("config.resolved.toml"), self.config.to_toml()?)?;
        manifest.write(&self.out_dir.join("manifest.json"))?;
        Ok(manifest)
    }

    fn compare_config(&self) -> CompareConfig {
        CompareConfig { seed: self.config.seed, ..self.config.compare.clone().unwrap_or_default() }
    }

    fn input_digests(&self) -> Result<Vec<FileDigest>> {
        match &self.config.data {
            Some(d) => d
                .inputs()
                .iter()
                .map(|p| FileDigest::of(p, p.display().to_string()))
                .collect(),
            None => Ok(Vec::new()),
        }
    }

    fn simulate(&self, out: &mut Outputs) -> Result<()> {
        if let Some(fixture) = &self.config.fixture {
            let fx = write_bike_fixture(&self.out_dir, fixture, self.config.seed)?;
            for p in fx.files.all() {
                out.record(&p.file_name().expect("file").to_string_lossy())?;
            }
            out.details.insert("events".into(), json!(fx.sequence.len()));
            out.details.insert("lambda0".into(), json!(fx.lambda0));
            return Ok(());
        }
        let scenario = self
            .config
            .simulation
            .as_ref()
            .ok_or_else(|| RemError::Config("simulate needs a [simulation] or [fixture] section".into()))?;
        let inst = scenario.realize(self.config.seed)?;
        write_events_csv(&inst.sequence, out.path("events.csv"))?;
        out.record("events.csv")?;
        let mut w = csv::Writer::from_path(out.path("nodes.csv"))?;
        w.write_record(["node_id", "x"])?;
        for (k, x) in inst.catalog.node_attr("x").unwrap_or(&[]).iter().enumerate() {
            w.write_record([k.to_string(), x.to_string()])?;
        }
        w.flush()?;
        out.record("nodes.csv")?;
        out.write_json(
            "scenario.json",
            &json!({
                "scenario": scenario,
                "wave": inst.wave,
                "horizon": inst.sequence.horizon(),
                "events": inst.sequence.len(),
            }),
        )?;
        Ok(())
    }

    fn fit(&self) -> Result<(Dataset, ShiftStage, FitResult)> {
        let ds = load_dataset(&self.config)?;
        let stage = shift_stage(&ds, self.config.nu, self.config.seed)?;
        let fit = fit_stage(&ds, &stage.ccs, &self.config)?;
        Ok((ds, stage, fit))
    }
}

struct Outputs {
    dir: PathBuf,
    digests: Vec<FileDigest>,
    volatile: Vec<String>,
    details: Map<String, Value>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), digests: Vec::new(), volatile: Vec::new(), details: Map::new() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        self.digests.push(FileDigest::of(&self.path(name), name.to_string())?);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        self.record(name)
    }
}

/// Events, covariates and the model to fit.
pub struct Dataset {
    pub sequence: EventSequence,
    pub catalog: CovariateCatalog,
    pub risk_policy: RiskPolicy,
    pub terms: Vec<TermSpec>,
    pub missing: MissingPolicy,
    pub stations: Option<StationIndex>,
    pub details: Map<String, Value>,
}

/// Default model for ride data: seven smooths and two competition terms.
pub fn bike_terms() -> Vec<TermSpec> {
    let ok = |t: Result<TermSpec>| t.expect("valid term");
    vec![
        ok(TermSpec::smooth("g0", "time")),
        ok(TermSpec::smooth("temp", "global:temp")),
        ok(TermSpec::smooth("prec", "global:prec")),
        ok(TermSpec::cyclic("tod", "global:tod", 24.0)),
        ok(TermSpec::smooth("dist", "dyad:log_dist")),
        ok(TermSpec::smooth("rep", "endo:rep")),
        ok(TermSpec::smooth("rec", "endo:rec")),
        ok(TermSpec::linear("comp_s", "sender:comp")),
        ok(TermSpec::linear("comp_r", "receiver:comp")),
    ]
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(scenario) = &cfg.simulation {
        return simulated_dataset(scenario, cfg);
    }
    if cfg.data.is_some() {
        return observed_dataset(cfg);
    }
    Err(RemError::Config("the config needs a [simulation] or [data] section".into()))
}

fn simulated_dataset(scenario: &CovariateScenario, cfg: &RunConfig) -> Result<Dataset> {
    let inst = scenario.realize(cfg.seed)?;
    let terms = if cfg.terms.is_empty() { CovariateScenario::fitted_terms() } else { cfg.terms.clone() };
    let mut details = Map::new();
    details.insert("events".into(), json!(inst.sequence.len()));
    details.insert("horizon".into(), json!(inst.sequence.horizon()));
    Ok(Dataset {
        sequence: inst.sequence,
        catalog: inst.catalog,
        risk_policy: RiskPolicy::NoSelfLoops,
        terms,
        missing: MissingPolicy::Error,
        stations: None,
        details,
    })
}

fn observed_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let data = cfg.data.as_ref().expect("checked by caller");
    let window = StudyWindow::parse(&data.window_start, &data.window_end, &data.utc_offset)?;
    let extra = match &data.distances {
        Some(p) => read_distance_stations(p)?,
        None => Vec::new(),
    };
    let options = EventReadOptions {
        window,
        max_error_fraction: data.max_error_fraction,
        extra_stations: extra,
        drop_self_loops: data.drop_self_loops,
    };
    let ingested = read_events(&data.events, &options)?;
    let seq = ingested.sequence;
    let p = seq.node_count();
    let mut catalog = CovariateCatalog::new();
    let mut notes: Vec<String> = Vec::new();

    for s in &data.series {
        let opts = SeriesOptions { window, transform: s.transform, max_gap_seconds: data.max_gap_hours * 3600.0 };
        catalog = catalog.with_global(s.name.clone(), GlobalSeries::Step(read_global_series(&s.path, &s.name, &opts)?));
    }
    if !data.time_of_day.is_empty() {
        let origin = window.origin_hour();
        catalog = catalog.with_global(
            data.time_of_day.clone(),
            GlobalSeries::Function(std::sync::Arc::new(move |t| crate::ingest::derive_time_of_day(t, origin))),
        );
    }
    if let Some(path) = &data.distances {
        let m = read_distance_matrix(path, &ingested.stations)?;
        let mut log_dist = vec![f64::NAN; p * p];
        for s in 0..p {
            for r in 0..p {
                let v = m.get(s as u32, r as u32);
                if s != r && v.is_finite() && v > 0.0 {
                    log_dist[s * p + r] = v.ln();
                }
            }
        }
        let comp: Vec<f64> = (0..p as u32).map(|s| competition(s, &m).unwrap_or(f64::NAN)).collect();
        let unmapped = comp.iter().filter(|c| c.is_nan()).count();
        if unmapped > 0 {
            notes.push(format!("{unmapped} station(s) lack travel times; their distance and competition terms are zeroed"));
        }
        catalog = catalog
            .with_dyadic_attr("log_dist", DyadicAttr::Dense { node_count: p, values: log_dist })
            .with_node_attr("comp", comp);
    }
    let medians = estimate_medians(&seq);
    for (name, kind, m) in [
        ("rep", DecayKind::Repetition, medians.repetition),
        ("rec", DecayKind::Reciprocity, medians.reciprocity),
    ] {
        if let Some(m) = m {
            catalog = catalog.with_endogenous(name, EndogenousStat::Decay(DecayStat { kind, half_scale: m }));
        }
    }
    let wanted = if cfg.terms.is_empty() { bike_terms() } else { cfg.terms.clone() };
    let mut terms = Vec::new();
    for t in wanted {
        match catalog.resolve(&t.covariate) {
            Ok(()) => terms.push(t),
            Err(_) => notes.push(format!("term `{}` dropped: `{}` is unavailable", t.name, t.covariate)),
        }
    }
    for n in &notes {
        log::warn!("{n}");
    }

    let mut details = Map::new();
    details.insert("events".into(), json!(seq.len()));
    details.insert("stations".into(), json!(p));
    details.insert("horizon".into(), json!(seq.horizon()));
    details.insert("time_origin".into(), json!(window.start.to_rfc3339()));
    details.insert("rows_read".into(), json!(ingested.rows_read));
    details.insert("dropped_outside_window".into(), json!(ingested.dropped_outside_window));
    details.insert("dropped_self_loops".into(), json!(ingested.dropped_self_loops));
    details.insert("row_errors".into(), json!(ingested.row_errors));
    details.insert("ties_broken".into(), json!(seq.ties_broken()));
    details.insert("median_repetition_gap".into(), json!(medians.repetition));
    details.insert("median_reciprocity_gap".into(), json!(medians.reciprocity));
    details.insert("notes".into(), json!(notes));
    let policy = if data.drop_self_loops { RiskPolicy::NoSelfLoops } else { RiskPolicy::WithSelfLoops };
    Ok(Dataset {
        sequence: seq,
        catalog,
        risk_policy: policy,
        terms,
        missing: data.missing,
        stations: Some(ingested.stations),
        details,
    })
}

pub struct ShiftStage {
    pub shifts: ShiftAssignment,
    pub ccs: ShiftedCaseControlSet,
}

pub fn shift_stage(ds: &Dataset, nu: f64, seed: u64) -> Result<ShiftStage> {
    let dyads = ds.risk_policy.candidate_dyads(ds.sequence.node_count());
    let shifts = draw_shifts(&dyads, nu, ds.sequence.mean_event_time(), seed)?;
    let shifted = shift_process(&ds.sequence, &shifts)?;
    let ccs = sample_case_control(&shifted, &shifts, &ds.risk_policy, seed)?;
    Ok(ShiftStage { shifts, ccs })
}

fn shift_details(details: &mut Map<String, Value>, ccs: &ShiftedCaseControlSet) {
    details.insert("case_control_rows".into(), json!(ccs.rows.len()));
    details.insert("dropped_uninformative".into(), json!(ccs.dropped_uninformative));
    details.insert("dropped_fraction".into(), json!(ccs.dropped_fraction()));
}

fn write_shift_outputs(out: &mut Outputs, ds: &Dataset, stage: &ShiftStage) -> Result<()> {
    let mut w = csv::Writer::from_path(out.path("shifts.csv"))?;
    w.write_record(["sender", "receiver", "shift"])?;
    for (d, h) in stage.shifts.iter() {
        w.write_record([d.sender.to_string(), d.receiver.to_string(), h.to_string()])?;
    }
    w.flush()?;
    out.record("shifts.csv")?;
    stage.ccs.write_csv(&out.path("case_control.csv"))?;
    out.record("case_control.csv")?;
    if let Some(st) = &ds.stations {
        st.write_csv(out.path("stations.csv"))?;
        out.record("stations.csv")?;
    }
    shift_details(&mut out.details, &stage.ccs);
    Ok(())
}

pub fn fit_stage(ds: &Dataset, ccs: &ShiftedCaseControlSet, cfg: &RunConfig) -> Result<FitResult> {
    let design = assemble_difference_design(
        ccs,
        &ds.catalog,
        ds.sequence.history(),
        &ds.terms,
        DesignOptions { missing: ds.missing },
    )?;
    fit_degenerate_logistic(&design, &cfg.smoothing_policy(), FitOptions::default())
}

fn write_fit_outputs(out: &mut Outputs, fit: &FitResult) -> Result<()> {
    write_summary_csv(fit, &out.path("fit_summary.csv"))?;
    out.record("fit_summary.csv")?;
    if let Some(sel) = &fit.selection {
        let mut w = csv::Writer::from_path(out.path("smoothing_profile.csv"))?;
        for p in &sel.profile {
            w.serialize(p)?;
        }
        w.flush()?;
        out.record("smoothing_profile.csv")?;
    }
    let curves = out.path("curves");
    fs::create_dir_all(&curves)?;
    for b in fit.blocks.iter().filter(|b| b.is_penalized()) {
        let curve = predict_smooth(fit, &b.name, &default_grid(b, CURVE_POINTS))?;
        let name = format!("curves/{}.csv", b.name);
        curve.write_csv(&out.path(&name))?;
        out.record(&name)?;
    }
    out.write_json(
        "fit.json",
        &json!({
            "converged": fit.converged,
            "iterations": fit.iterations,
            "deviance": fit.deviance,
            "rows": fit.n_rows,
            "dropped_rows": fit.dropped_rows,
            "separated": fit.separated,
            "smoothing_params": fit.smoothing_params,
            "edf": fit.edf,
            "inestimable": fit.inestimable,
            "notes": fit.notes,
        }),
    )
}

pub fn baseline_stage(ds: &Dataset, fit: &FitResult) -> Result<(BreslowCurve, Lambda0Estimate)> {
    let mut model = fitted_model(fit, ds.risk_policy.clone());
    model.missing_as_zero = ds.missing == MissingPolicy::ZeroRow;
    let curve = breslow_cumulative(&ds.sequence, &model, &ds.catalog)?;
    let lambda0 = estimate_lambda0(&curve)?;
    Ok((curve, lambda0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_simulation() -> RunConfig {
        RunConfig::from_toml(
            "seed = 5\n[simulation]\nnode_count = 6\nevents = 300\n[smoothing]\nmode = \"fixed\"\nlambdas = [1.0]\n",
        )
        .unwrap()
    }

    #[test]
    fn fit_twice_gives_identical_outputs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = Run::from_config(small_simulation(), a.path().to_path_buf()).unwrap().execute(Command::Fit).unwrap();
        let mb = Run::from_config(small_simulation(), b.path().to_path_buf()).unwrap().execute(Command::Fit).unwrap();
        assert_eq!(ma.outputs, mb.outputs);
        assert!(ma.output("fit_summary.csv").is_some());
        assert!(ma.output("curves/g0.csv").is_some());
        let summary = fs::read_to_string(a.path().join("fit_summary.csv")).unwrap();
        assert!(summary.lines().any(|l| l.starts_with("beta0,parametric")));
    }

    #[test]
    fn simulate_writes_requested_event_count() {
        let dir = tempfile::tempdir().unwrap();
        let m = Run::from_config(small_simulation(), dir.path().to_path_buf()).unwrap().execute(Command::Simulate).unwrap();
        let text = fs::read_to_string(dir.path().join("events.csv")).unwrap();
        assert_eq!(text.lines().count(), 301);
        assert_eq!(m.command, "simulate");
        assert!(Manifest::read(&dir.path().join("manifest.json")).unwrap() == m);
    }

    #[test]
    fn study_without_section_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = Run::from_config(small_simulation(), dir.path().to_path_buf()).unwrap().execute(Command::Study).unwrap_err();
        assert!(matches!(err, RemError::Config(_)));
    }
}
