//! Run configuration, per-sample evaluation, checkpointed parallel
//! execution and result files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    apply_gravity, detect_collapse, natural_frequencies, nltha, rayleigh_coefficients, rerun_refined, Analysis,
    CollapseCriteria, DampingModel, IntegratorConfig, NodalLoadHistory, ShapeInfo, Termination,
};
use crate::error::{Error, Result};
use crate::frame::{materials_from_draw, BuildOptions, FrameDefinition, FrameModel, Geometry};
use crate::hazard::{DirectionalWindRecord, HazardFitOptions, WindClimateModel, COPULA_GRID};
use crate::reliability::{
    allocate_with_minimums, estimate_rates, fit_all_fragilities, partition_wsi, proportional_allocation,
    strata_probabilities, EstimateResult, FragilityFit, LimitState, LimitStateCatalog, SampleOutcome, SampleStatus,
    StratifiedPlan, DEFAULT_MIN_PER_STRATUM,
};
use crate::stream::substream;
use crate::uncertainty::{sample_realization, CompiledCatalog, RandomVariableSpec, Topology, UncertaintyCatalog};
use crate::windsim::{
    apply_model_uncertainty, frame_load_histories, simulate_loads, Envelope, LoadEnsemble, LoadModelSet, LoadRecord,
    SyntheticSpectrum,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Directional wind record (speed, direction in degrees).
    pub wind_record: PathBuf,
    pub frame: PathBuf,
    /// Manifest of wind-tunnel records; the synthetic spectrum is used when
    /// absent.
    #[serde(default)]
    pub load_ensemble: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazardConfig {
    /// Storms per year.
    pub nu: f64,
    pub concentration: Option<f64>,
    pub copula_grid: usize,
    pub copula_bandwidth: Option<f64>,
    /// Number of wind speed intervals.
    pub n_w: usize,
    /// Annual exceedance rate of the lower bound of the top interval.
    pub top_aer: f64,
    /// Reference period for reliability indices, years.
    pub years: f64,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self {
            nu: 0.305,
            concentration: None,
            copula_grid: COPULA_GRID,
            copula_bandwidth: None,
            n_w: 10,
            top_aer: 7e-7,
            years: 50.0,
        }
    }
}

impl HazardConfig {
    pub fn fit_options(&self) -> HazardFitOptions {
        HazardFitOptions {
            nu: self.nu,
            concentration: self.concentration,
            copula_grid: self.copula_grid,
            copula_bandwidth: self.copula_bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadsConfig {
    /// Load and analysis time step, s.
    pub dt: f64,
    pub envelope: Envelope,
    /// Used when no ensemble is given. Empty heights are taken from the
    /// frame floors.
    pub synthetic: SyntheticSpectrum,
    /// Welch segment length for ensemble records.
    pub segment: usize,
    pub overlap: f64,
    pub n_modes: usize,
}

impl Default for LoadsConfig {
    fn default() -> Self {
        Self {
            dt: 0.06,
            envelope: Envelope::default(),
            synthetic: SyntheticSpectrum::default(),
            segment: 1024,
            overlap: 0.5,
            n_modes: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Total samples, pilot included.
    pub total: usize,
    pub pilot: usize,
    pub min_per_stratum: usize,
    /// Limit state whose pilot estimates drive the allocation.
    pub allocate_on: String,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            total: 1001,
            pilot: 250,
            min_per_stratum: DEFAULT_MIN_PER_STRATUM,
            allocate_on: LimitState::SystemCollapse.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    /// Coffin-Manson slope shared by all sections.
    pub fatigue_slope: f64,
    pub geometry: Geometry,
    pub p_delta: bool,
    pub shear: bool,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            fatigue_slope: -0.5,
            geometry: Geometry::Corotational,
            p_delta: true,
            shear: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitStateConfig {
    pub peak_drift: Vec<f64>,
    pub residual_drift: Vec<f64>,
}

impl Default for LimitStateConfig {
    fn default() -> Self {
        Self {
            peak_drift: vec![0.01, 0.035],
            residual_drift: vec![0.0025, 0.005],
        }
    }
}

/// Everything a run needs. Relative paths resolve against the directory
/// holding the configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub output_dir: PathBuf,
    pub paths: PathsConfig,
    #[serde(default)]
    pub hazard: HazardConfig,
    #[serde(default)]
    pub loads: LoadsConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub structure: StructureConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub collapse: CollapseCriteria,
    #[serde(default)]
    pub limit_states: LimitStateConfig,
    /// Replacements for entries of the default uncertainty catalog.
    #[serde(default)]
    pub uncertainty: BTreeMap<String, RandomVariableSpec>,
}

fn default_jobs() -> usize {
    1
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.output_dir = resolve(base, &cfg.output_dir);
        cfg.paths.wind_record = resolve(base, &cfg.paths.wind_record);
        cfg.paths.frame = resolve(base, &cfg.paths.frame);
        cfg.paths.load_ensemble = cfg.paths.load_ensemble.as_deref().map(|p| resolve(base, p));
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let mut files = vec![&self.paths.wind_record, &self.paths.frame];
        if let Some(p) = &self.paths.load_ensemble {
            files.push(p);
        }
        for f in files {
            if !f.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        let s = &self.sampling;
        if s.total < s.pilot {
            return Err(Error::Config(format!("total samples {} below pilot size {}", s.total, s.pilot)));
        }
        if s.pilot < self.hazard.n_w * s.min_per_stratum {
            return Err(Error::Config(format!(
                "pilot of {} cannot give {} strata {} samples each",
                s.pilot, self.hazard.n_w, s.min_per_stratum
            )));
        }
        if self.jobs == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if !(self.loads.dt > 0.0) {
            return Err(Error::Config("load time step must be positive".into()));
        }
        if !(self.hazard.years > 0.0) {
            return Err(Error::Config("reference period must be positive".into()));
        }
        if !self.limit_state_catalog().states.iter().any(|l| l.name() == s.allocate_on) {
            return Err(Error::Config(format!("unknown allocation limit state `{}`", s.allocate_on)));
        }
        self.loads.envelope.validate()?;
        self.integrator.validate()?;
        self.uncertainty_catalog().compile()?;
        Ok(())
    }

    pub fn limit_state_catalog(&self) -> LimitStateCatalog {
        LimitStateCatalog::with_thresholds(&self.limit_states.peak_drift, &self.limit_states.residual_drift)
    }

    pub fn uncertainty_catalog(&self) -> UncertaintyCatalog {
        UncertaintyCatalog::default().with_overrides(&self.uncertainty)
    }

    /// SHA-256 over the settings and the contents of every referenced file.
    /// Worker count and locations are left out, so they never change the
    /// hash.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.jobs = 0;
        c.output_dir = PathBuf::new();
        c.paths = PathsConfig {
            wind_record: PathBuf::new(),
            frame: PathBuf::new(),
            load_ensemble: None,
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c)?);
        h.update(read_bytes(&self.paths.wind_record)?);
        h.update(read_bytes(&self.paths.frame)?);
        if let Some(p) = &self.paths.load_ensemble {
            h.update(read_bytes(p)?);
            for (_, f) in read_ensemble_manifest(p)? {
                h.update(read_bytes(&f)?);
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

#[derive(Debug, Deserialize)]
struct EnsembleManifest {
    records: Vec<EnsembleEntry>,
}

#[derive(Debug, Deserialize)]
struct EnsembleEntry {
    direction_deg: f64,
    file: PathBuf,
}

/// Direction and resolved record path for every manifest entry.
fn read_ensemble_manifest(path: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: EnsembleManifest = toml::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(m.records.into_iter().map(|e| (e.direction_deg, resolve(base, &e.file))).collect())
}

pub fn load_ensemble(path: &Path) -> Result<LoadEnsemble> {
    let records = read_ensemble_manifest(path)?
        .into_iter()
        .map(|(d, f)| Ok((d, LoadRecord::load(&f)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadEnsemble { records })
}

pub fn fit_hazard(cfg: &RunConfig) -> Result<WindClimateModel> {
    let record = DirectionalWindRecord::load(&cfg.paths.wind_record)?;
    WindClimateModel::fit(&record, &cfg.hazard.fit_options())
}

/// Plain-text diagnostics for a fitted climate model.
pub fn hazard_report(model: &WindClimateModel) -> String {
    let mut s = String::new();
    s += &format!("storm rate nu = {}\n", model.nu);
    s += &format!(
        "weibull shape = {:.6}, scale = {:.6} m/s\n",
        model.weibull.shape, model.weibull.scale
    );
    s += &format!("direction concentration = {:.6}\n", model.direction.concentration);
    s += &format!("direction density integral = {:.9}\n", model.direction.integral());
    if let Some(c) = &model.copula {
        let (ua, uv) = c.marginals();
        let dev = ua.iter().chain(&uv).fold(0.0f64, |m, x| m.max((x - 1.0).abs()));
        s += &format!("copula grid = {}, max marginal deviation = {:.3e}\n", c.n, dev);
    }
    s
}

pub fn build_load_models(cfg: &RunConfig, frame: &FrameDefinition) -> Result<LoadModelSet> {
    match &cfg.paths.load_ensemble {
        Some(p) => {
            let ens = load_ensemble(p)?;
            LoadModelSet::from_ensemble(&ens, cfg.loads.segment, cfg.loads.overlap, cfg.loads.n_modes)
        }
        None => {
            let mut spec = cfg.loads.synthetic.clone();
            if spec.heights.is_empty() {
                spec.heights = floor_heights(frame)?;
            }
            spec.build()
        }
    }
}

/// Floor elevations above the lowest node.
fn floor_heights(frame: &FrameDefinition) -> Result<Vec<f64>> {
    let base = frame.nodes.iter().map(|n| n.y).fold(f64::INFINITY, f64::min);
    frame
        .floors
        .iter()
        .map(|f| {
            let id = f.nodes.first().ok_or_else(|| Error::Model("floor without nodes".into()))?;
            frame
                .nodes
                .iter()
                .find(|n| n.id == *id)
                .map(|n| n.y - base)
                .ok_or_else(|| Error::Model(format!("floor refers to unknown node {id}")))
        })
        .collect()
}

/// Immutable artifacts shared by every worker.
pub struct RunContext {
    pub config: RunConfig,
    pub hash: String,
    pub climate: WindClimateModel,
    pub loads: LoadModelSet,
    pub frame: FrameDefinition,
    pub topology: Topology,
    pub catalog: CompiledCatalog,
    pub bounds: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl RunContext {
    pub fn prepare(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash()?;
        let frame = FrameDefinition::load(&config.paths.frame)?;
        let climate = fit_hazard(&config)?;
        let loads = build_load_models(&config, &frame)?;
        if loads.channels() != frame.floors.len() && loads.channels() != 2 * frame.floors.len() {
            return Err(Error::Config(format!(
                "load models have {} channels for {} floors",
                loads.channels(),
                frame.floors.len()
            )));
        }
        let v_top = climate.speed_for_aer(config.hazard.top_aer)?;
        let bounds = partition_wsi(v_top, config.hazard.n_w)?;
        let probabilities = strata_probabilities(&climate.weibull, &bounds);
        let catalog = config.uncertainty_catalog().compile()?;
        Ok(Self {
            topology: frame.topology(),
            config,
            hash,
            climate,
            loads,
            frame,
            catalog,
            bounds,
            probabilities,
        })
    }

    pub fn pilot_allocation(&self) -> Result<Vec<usize>> {
        let s = &self.config.sampling;
        proportional_allocation(s.pilot, &self.probabilities, s.min_per_stratum)
    }
}

/// Per-sample response history written with `--verbose-traces`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampleTrace {
    pub time: Vec<f64>,
    pub roof: Vec<f64>,
    pub max_drift: Vec<f64>,
}

/// Outcome plus bookkeeping that stays out of the ledger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub outcome: SampleOutcome,
    pub runtime: f64,
    pub steps: usize,
    pub error: Option<String>,
}

fn termination_label(t: Option<Termination>) -> String {
    match t {
        Some(Termination::Completed) => "completed".into(),
        Some(Termination::NonConverged { time }) => format!("non-converged@{time:.4}"),
        Some(Termination::DriftLimit { time }) => format!("drift-limit@{time:.4}"),
        None => "none".into(),
    }
}

fn failed_outcome(id: u64, stratum: usize, pilot: bool, v_h: f64, alpha: f64) -> SampleOutcome {
    SampleOutcome {
        sample_id: id,
        stratum,
        pilot,
        v_h,
        alpha,
        status: SampleStatus::FailedInfrastructure,
        collapsed: false,
        shape_confirmed: false,
        mechanism: None,
        failure_height: None,
        termination: "failed".into(),
        last_converged_time: 0.0,
        peak_drift: 0.0,
        residual_drift: None,
        yielded: vec![],
        section_yielded: vec![],
        buckled: vec![],
        partially_fractured: vec![],
        fractured: vec![],
        max_damage: 0.0,
    }
}

/// Draws and analyses one sample. Deterministic in `(seed, id, stratum)`.
pub fn evaluate_sample(
    ctx: &RunContext,
    id: u64,
    stratum: usize,
    pilot: bool,
) -> Result<(SampleOutcome, usize, Option<SampleTrace>)> {
    let cfg = &ctx.config;
    let mut rng = substream(cfg.seed, id);
    let v_h = ctx
        .climate
        .sample_speed_in(ctx.bounds[stratum], ctx.bounds[stratum + 1], &mut rng);
    let alpha = ctx.climate.sample_direction_given_speed(v_h, &mut rng)?;
    let real = sample_realization(&ctx.catalog, &ctx.topology, ctx.loads.n_phases(), &mut rng)?;

    let dt = cfg.loads.dt;
    let model = ctx
        .loads
        .model_for(alpha)?
        .scale_to_site(v_h)?
        .truncated(std::f64::consts::PI / dt);
    let loads = simulate_loads(&model, &real.phases, &cfg.loads.envelope, dt)?;
    let w = real.wind_model;
    let loads = apply_model_uncertainty(loads, w.w1, w.w2, w.w3);
    let settings = &ctx.frame.settings;
    let histories = frame_load_histories(&loads, ctx.frame.floors.len(), settings.load_share, settings.building_width)?;

    let opts = BuildOptions {
        geometry: cfg.structure.geometry,
        materials: Some(materials_from_draw(&real.structural, cfg.structure.fatigue_slope)),
        camber: Some(real.structural.camber.clone()),
        gravity: real.gravity,
        p_delta: cfg.structure.p_delta,
        shear: cfg.structure.shear,
    };
    let mut frame = FrameModel::build(&ctx.frame, &opts)?;
    let u0 = apply_gravity(&mut frame, &cfg.integrator)?;
    let omegas = natural_frequencies(&frame.committed_tangent(), &frame.mass, 2)?;
    if omegas.len() < 2 {
        return Err(Error::Model("Rayleigh damping needs at least two modes".into()));
    }
    let (c0, c1) = rayleigh_coefficients(omegas[0], omegas[1], real.structural.damping_ratio)?;
    let damping = DampingModel::new(c0, c1);
    let history = NodalLoadHistory {
        dt,
        eqs: frame.floor_eqs(),
        values: histories,
        tail_start: Some(loads.tail_start()),
    };

    let mut first: Analysis<FrameModel> = nltha(&mut frame, &u0, &history, &damping, &cfg.integrator)?;
    let shape = ShapeInfo::from_frame(&first.system);
    let mut retried: Option<Analysis<FrameModel>> = None;
    let mut retry_error: Option<Error> = None;
    let snapshot = first.snapshot.take();
    let verdict = detect_collapse(&first.record, &shape, &cfg.collapse, || {
        let snap = snapshot.clone()?;
        match rerun_refined(snap, &first.record, &history, &damping, &cfg.integrator) {
            Ok(a) => {
                let out = (a.record.clone(), ShapeInfo::from_frame(&a.system));
                retried = Some(a);
                Some(out)
            }
            Err(e) => {
                retry_error = Some(e);
                None
            }
        }
    });
    if let Some(e) = retry_error {
        log::debug!("sample {id}: refined re-run failed: {e}");
    }
    let used = retried.as_ref().unwrap_or(&first);
    let rec = &used.record;
    let sys = &used.system;
    let pick = |f: &dyn Fn(&crate::frame::MemberStatus) -> bool| -> Vec<u32> {
        sys.status
            .iter()
            .zip(&sys.members)
            .filter(|(s, _)| f(s))
            .map(|(_, m)| m.id)
            .collect()
    };
    let outcome = SampleOutcome {
        sample_id: id,
        stratum,
        pilot,
        v_h,
        alpha,
        status: SampleStatus::Ok,
        collapsed: verdict.collapsed,
        shape_confirmed: verdict.shape_confirmed,
        mechanism: verdict.mechanism.map(|m| m.label().to_string()),
        failure_height: verdict.failure_height,
        termination: termination_label(rec.termination),
        last_converged_time: rec.last_converged_time,
        peak_drift: rec.peak_drift,
        residual_drift: rec.residual_drift,
        yielded: pick(&|s| s.first_yield),
        section_yielded: pick(&|s| s.full_section_yield),
        buckled: pick(&|s| s.buckled),
        partially_fractured: pick(&|s| s.partial_fracture),
        fractured: pick(&|s| s.full_fracture),
        max_damage: sys.max_damage_index(),
    };
    let steps = first.record.steps + retried.as_ref().map_or(0, |a| a.record.steps);
    let trace = SampleTrace {
        time: rec.time.clone(),
        roof: rec.roof.clone(),
        max_drift: rec
            .drifts
            .iter()
            .map(|d| d.iter().fold(0.0f64, |m, x| m.max(x.abs())))
            .collect(),
    };
    Ok((outcome, steps, Some(trace)))
}

/// Evaluates a sample, turning errors and panics into a
/// failed-infrastructure outcome.
pub fn run_sample(ctx: &RunContext, id: u64, stratum: usize, pilot: bool) -> (SampleRecord, Option<SampleTrace>) {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(|| evaluate_sample(ctx, id, stratum, pilot)));
    let runtime = start.elapsed().as_secs_f64();
    match res {
        Ok(Ok((outcome, steps, trace))) => (
            SampleRecord {
                outcome,
                runtime,
                steps,
                error: None,
            },
            trace,
        ),
        Ok(Err(e)) => (failed_record(ctx, id, stratum, pilot, runtime, e.to_string()), None),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "worker panicked".into());
            (failed_record(ctx, id, stratum, pilot, runtime, msg), None)
        }
    }
}

fn failed_record(ctx: &RunContext, id: u64, stratum: usize, pilot: bool, runtime: f64, error: String) -> SampleRecord {
    // Redraw the intensity so the failed row still reports it.
    let mut rng = substream(ctx.config.seed, id);
    let v = ctx
        .climate
        .sample_speed_in(ctx.bounds[stratum], ctx.bounds[stratum + 1], &mut rng);
    let a = ctx.climate.sample_direction_given_speed(v, &mut rng).unwrap_or(f64::NAN);
    SampleRecord {
        outcome: failed_outcome(id, stratum, pilot, v, a),
        runtime,
        steps: 0,
        error: Some(error),
    }
}

/// Sample ids with their strata: pilot ids first, then the main batch,
/// both stratum-major.
pub fn sample_schedule(pilot: &[usize], allocation: Option<&[usize]>) -> Vec<(u64, usize, bool)> {
    let mut out = Vec::new();
    let mut id = 0u64;
    for (s, &n) in pilot.iter().enumerate() {
        for _ in 0..n {
            out.push((id, s, true));
            id += 1;
        }
    }
    if let Some(alloc) = allocation {
        for (s, (&n, &p)) in alloc.iter().zip(pilot).enumerate() {
            for _ in p..n {
                out.push((id, s, false));
                id += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub pilot: Vec<usize>,
    pub plan: Option<StratifiedPlan>,
    pub completed: Vec<u64>,
}

/// Checkpoint directory: per-sample files and a manifest.
pub struct Checkpoint {
    dir: PathBuf,
    manifest: Mutex<Manifest>,
}

impl Checkpoint {
    fn manifest_path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    fn sample_path(&self, id: u64) -> PathBuf {
        self.dir.join("samples").join(format!("{id:08}.json"))
    }

    /// Opens an existing checkpoint for resuming, refusing one written
    /// under a different configuration.
    pub fn resume(dir: &Path, hash: &str) -> Result<Self> {
        let path = Self::manifest_path(dir);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.config_hash != hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written with configuration {} but the current one is {hash}",
                manifest.config_hash
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Mutex::new(manifest),
        })
    }

    /// Starts an empty checkpoint, discarding any previous contents.
    pub fn create(dir: &Path, hash: &str, pilot: Vec<usize>) -> Result<Self> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let samples = dir.join("samples");
        fs::create_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
        let cp = Self {
            dir: dir.to_path_buf(),
            manifest: Mutex::new(Manifest {
                config_hash: hash.to_string(),
                pilot,
                plan: None,
                completed: Vec::new(),
            }),
        };
        cp.save_manifest()?;
        Ok(cp)
    }

    pub fn manifest(&self) -> Manifest {
        self.manifest.lock().expect("manifest lock").clone()
    }

    fn save_manifest(&self) -> Result<()> {
        let m = self.manifest.lock().expect("manifest lock");
        write_atomic(&Self::manifest_path(&self.dir), &serde_json::to_vec_pretty(&*m)?)
    }

    pub fn set_plan(&self, plan: StratifiedPlan) -> Result<()> {
        self.manifest.lock().expect("manifest lock").plan = Some(plan);
        self.save_manifest()
    }

    pub fn is_done(&self, id: u64) -> bool {
        self.manifest
            .lock()
            .expect("manifest lock")
            .completed
            .binary_search(&id)
            .is_ok()
    }

    pub fn store(&self, rec: &SampleRecord) -> Result<()> {
        let id = rec.outcome.sample_id;
        write_atomic(&self.sample_path(id), &serde_json::to_vec(rec)?)?;
        {
            let mut m = self.manifest.lock().expect("manifest lock");
            if let Err(pos) = m.completed.binary_search(&id) {
                m.completed.insert(pos, id);
            }
        }
        self.save_manifest()
    }

    pub fn records(&self, ids: &[u64]) -> Result<Vec<SampleRecord>> {
        ids.iter()
            .map(|&id| {
                let p = self.sample_path(id);
                let bytes = read_bytes(&p)?;
                Ok(serde_json::from_slice(&bytes)?)
            })
            .collect()
    }
}

/// Line-oriented run log, mirrored to the `log` facade.
pub struct RunLog {
    file: Mutex<fs::File>,
}

impl RunLog {
    pub fn open(path: &Path, hash: &str, append: bool) -> Result<Self> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(f, "# config-hash: {hash}").map_err(|e| Error::io(path, e))?;
        Ok(Self { file: Mutex::new(f) })
    }

    pub fn info(&self, msg: &str) {
        log::info!("{msg}");
        let _ = writeln!(self.file.lock().expect("log lock"), "INFO  {msg}");
    }

    pub fn warn(&self, msg: &str) {
        log::warn!("{msg}");
        let _ = writeln!(self.file.lock().expect("log lock"), "WARN  {msg}");
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    pub verbose_traces: bool,
    /// Stop after this many newly computed samples (simulated interruption).
    pub stop_after: Option<usize>,
    /// Stop once the pilot is complete and the plan is written.
    pub pilot_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub plan: StratifiedPlan,
    pub estimates: EstimateResult,
    pub fragility: Vec<FragilityFit>,
    pub failed_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Complete(Box<RunSummary>),
    /// Pilot finished; the plan is in the checkpoint.
    PilotComplete(StratifiedPlan),
    Interrupted { computed: usize },
}

fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("checkpoint")
}

/// Pilot-informed plan from pilot outcomes.
pub fn plan_from_pilot(ctx: &RunContext, pilot_alloc: &[usize], outcomes: &[SampleOutcome]) -> Result<StratifiedPlan> {
    let s = &ctx.config.sampling;
    let m = pilot_alloc.len();
    let state = ctx
        .config
        .limit_state_catalog()
        .states
        .into_iter()
        .find(|l| l.name() == s.allocate_on)
        .ok_or_else(|| Error::Config(format!("unknown allocation limit state `{}`", s.allocate_on)))?;
    let mut hits = vec![0usize; m];
    let mut n = vec![0usize; m];
    for o in outcomes.iter().filter(|o| o.status == SampleStatus::Ok) {
        n[o.stratum] += 1;
        hits[o.stratum] += state.exceeded(o) as usize;
    }
    let p: Vec<f64> = hits
        .iter()
        .zip(&n)
        .map(|(h, n)| if *n == 0 { 0.0 } else { *h as f64 / *n as f64 })
        .collect();
    let mins: Vec<usize> = pilot_alloc.iter().map(|&x| x.max(s.min_per_stratum)).collect();
    let allocation = allocate_with_minimums(s.total, &p, &ctx.probabilities, &mins)?;
    let plan = StratifiedPlan {
        bounds: ctx.bounds.clone(),
        probabilities: ctx.probabilities.clone(),
        allocation,
        pilot: pilot_alloc.to_vec(),
    };
    plan.validate()?;
    Ok(plan)
}

/// Runs the given schedule entries that are not yet complete, in parallel.
/// Returns the number of samples computed.
fn execute(
    ctx: &RunContext,
    cp: &Checkpoint,
    log: &RunLog,
    pool: &rayon::ThreadPool,
    work: &[(u64, usize, bool)],
    opts: &RunOptions,
    budget: &mut Option<usize>,
) -> Result<usize> {
    let mut pending: Vec<(u64, usize, bool)> = work.iter().copied().filter(|w| !cp.is_done(w.0)).collect();
    if let Some(b) = budget {
        pending.truncate(*b);
        *b -= pending.len();
    }
    let traces = ctx.config.output_dir.join("traces");
    if opts.verbose_traces {
        fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    }
    let results: Vec<Result<()>> = pool.install(|| {
        pending
            .par_iter()
            .map(|&(id, stratum, pilot)| {
                let (rec, trace) = run_sample(ctx, id, stratum, pilot);
                if let Some(e) = &rec.error {
                    log.warn(&format!("sample {id} failed and is excluded: {e}"));
                } else {
                    log.info(&format!(
                        "sample {id} stratum {} v = {:.2} m/s collapsed = {} ({:.1} s)",
                        stratum + 1,
                        rec.outcome.v_h,
                        rec.outcome.collapsed,
                        rec.runtime
                    ));
                }
                if let (true, Some(t)) = (opts.verbose_traces, trace) {
                    write_trace(&traces.join(format!("sample_{id:08}.csv")), &t)?;
                }
                cp.store(&rec)
            })
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(pending.len())
}

fn write_trace(path: &Path, t: &SampleTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["time", "roof", "max_drift"]).map_err(|e| csv_error(path, e))?;
    for i in 0..t.time.len() {
        w.write_record([t.time[i].to_string(), t.roof[i].to_string(), t.max_drift[i].to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Pilot, allocation, main batch, estimates and fragility fits, with
/// checkpointing after every sample.
pub fn run(ctx: &RunContext, opts: &RunOptions) -> Result<RunStatus> {
    let cfg = &ctx.config;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let log = RunLog::open(&cfg.output_dir.join("run.log"), &ctx.hash, opts.resume)?;
    let dir = checkpoint_dir(cfg);
    let pilot_alloc = ctx.pilot_allocation()?;
    let cp = if opts.resume {
        let cp = Checkpoint::resume(&dir, &ctx.hash)?;
        log.info(&format!("resuming with {} completed samples", cp.manifest().completed.len()));
        cp
    } else {
        Checkpoint::create(&dir, &ctx.hash, pilot_alloc.clone())?
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let mut budget = opts.stop_after;

    let pilot_work = sample_schedule(&pilot_alloc, None);
    log.info(&format!("pilot: {} samples over {} strata", pilot_work.len(), pilot_alloc.len()));
    let computed = execute(ctx, &cp, &log, &pool, &pilot_work, opts, &mut budget)?;
    if pilot_work.iter().any(|w| !cp.is_done(w.0)) {
        return Ok(RunStatus::Interrupted { computed });
    }

    let plan = match cp.manifest().plan {
        Some(p) => p,
        None => {
            let ids: Vec<u64> = pilot_work.iter().map(|w| w.0).collect();
            let outcomes: Vec<SampleOutcome> = cp.records(&ids)?.into_iter().map(|r| r.outcome).collect();
            let plan = plan_from_pilot(ctx, &pilot_alloc, &outcomes)?;
            log.info(&format!("allocation: {:?}", plan.allocation));
            cp.set_plan(plan.clone())?;
            plan
        }
    };
    if opts.pilot_only {
        return Ok(RunStatus::PilotComplete(plan));
    }

    let work = sample_schedule(&pilot_alloc, Some(&plan.allocation));
    let computed = computed + execute(ctx, &cp, &log, &pool, &work, opts, &mut budget)?;
    if work.iter().any(|w| !cp.is_done(w.0)) {
        return Ok(RunStatus::Interrupted { computed });
    }

    let ids: Vec<u64> = work.iter().map(|w| w.0).collect();
    let records = cp.records(&ids)?;
    let summary = finalize(ctx, &plan, &records, &log)?;
    Ok(RunStatus::Complete(Box::new(summary)))
}

/// Estimates, fragility fits and every output file from a finished set of
/// sample records.
pub fn finalize(ctx: &RunContext, plan: &StratifiedPlan, records: &[SampleRecord], log: &RunLog) -> Result<RunSummary> {
    let cfg = &ctx.config;
    let mut outcomes: Vec<SampleOutcome> = records.iter().map(|r| r.outcome.clone()).collect();
    outcomes.sort_by_key(|o| o.sample_id);
    let failed = outcomes.iter().filter(|o| o.status != SampleStatus::Ok).count();
    if failed > 0 {
        log.warn(&format!("{failed} samples failed and are excluded from the estimates"));
    }
    let catalog = cfg.limit_state_catalog();
    let estimates = estimate_rates(&outcomes, plan, ctx.climate.nu, &catalog, cfg.hazard.years)?;
    let fragility = fit_all_fragilities(&outcomes, plan, &catalog);
    let out = &cfg.output_dir;
    write_outcomes(&out.join("outcomes.csv"), &ctx.hash, &outcomes)?;
    let summary = RunSummary {
        config_hash: ctx.hash.clone(),
        plan: plan.clone(),
        estimates,
        fragility,
        failed_samples: failed,
    };
    write_atomic(&out.join("estimates.json"), &serde_json::to_vec_pretty(&summary)?)?;
    write_fragility(&out.join("fragility.csv"), &ctx.hash, &summary.fragility)?;
    write_timings(&out.join("timings.csv"), records)?;
    for s in &summary.estimates.states {
        log.info(&format!(
            "{}: rate = {:.4e} /yr, beta = {:.3}, cov = {}",
            s.name,
            s.rate,
            s.beta,
            s.cov.map_or("n/a".into(), |c| format!("{c:.3}"))
        ));
    }
    Ok(summary)
}

fn join_ids(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub const OUTCOME_COLUMNS: [&str; 21] = [
    "sample_id",
    "stratum",
    "pilot",
    "v_h",
    "alpha_deg",
    "status",
    "collapsed",
    "shape_confirmed",
    "mechanism",
    "failure_height",
    "termination",
    "last_converged_time",
    "peak_drift",
    "residual_drift",
    "yielded",
    "section_yielded",
    "buckled",
    "partially_fractured",
    "fractured",
    "max_damage",
    "alpha_rad",
];

/// Outcome ledger sorted by sample id, one row per sample.
pub fn write_outcomes(path: &Path, hash: &str, outcomes: &[SampleOutcome]) -> Result<()> {
    let mut buf = format!("# config-hash: {hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(OUTCOME_COLUMNS).map_err(|e| csv_error(path, e))?;
        for o in outcomes {
            let status = match o.status {
                SampleStatus::Ok => "ok",
                SampleStatus::FailedInfrastructure => "failed-infrastructure",
            };
            w.write_record([
                o.sample_id.to_string(),
                (o.stratum + 1).to_string(),
                o.pilot.to_string(),
                o.v_h.to_string(),
                o.alpha.to_degrees().to_string(),
                status.to_string(),
                o.collapsed.to_string(),
                o.shape_confirmed.to_string(),
                o.mechanism.clone().unwrap_or_default(),
                opt(o.failure_height),
                o.termination.clone(),
                o.last_converged_time.to_string(),
                o.peak_drift.to_string(),
                opt(o.residual_drift),
                join_ids(&o.yielded),
                join_ids(&o.section_yielded),
                join_ids(&o.buckled),
                join_ids(&o.partially_fractured),
                join_ids(&o.fractured),
                o.max_damage.to_string(),
                o.alpha.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

/// Fitted parameters per limit state and sector plus sampled curves.
pub fn write_fragility(path: &Path, hash: &str, fits: &[FragilityFit]) -> Result<()> {
    let mut buf = format!("# config-hash: {hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["limit_state", "sector_deg", "median", "dispersion", "speed", "probability"])
            .map_err(|e| csv_error(path, e))?;
        for f in fits {
            let mut rows = vec![(String::from("all"), f.curve)];
            rows.extend(f.sectors.iter().map(|s| (s.sector_deg.to_string(), s.fit)));
            for (sector, fit) in rows {
                match fit {
                    None => w
                        .write_record([f.name.as_str(), &sector, "", "", "", ""])
                        .map_err(|e| csv_error(path, e))?,
                    Some(c) => {
                        for k in 0..=60 {
                            let v = 2.5 * k as f64;
                            w.write_record([
                                f.name.clone(),
                                sector.clone(),
                                c.median.to_string(),
                                c.dispersion.to_string(),
                                v.to_string(),
                                c.cdf(v).to_string(),
                            ])
                            .map_err(|e| csv_error(path, e))?;
                        }
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

fn write_timings(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["sample_id", "runtime_s", "steps", "error"])
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record([
            r.outcome.sample_id.to_string(),
            format!("{:.3}", r.runtime),
            r.steps.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reloads the completed run from its checkpoint.
pub fn load_completed(ctx: &RunContext) -> Result<(StratifiedPlan, Vec<SampleRecord>)> {
    let cp = Checkpoint::resume(&checkpoint_dir(&ctx.config), &ctx.hash)?;
    let m = cp.manifest();
    let plan = m
        .plan
        .ok_or_else(|| Error::State("no allocation has been made yet; run the pilot first".into()))?;
    let work = sample_schedule(&m.pilot, Some(&plan.allocation));
    if let Some(missing) = work.iter().find(|w| !cp.is_done(w.0)) {
        return Err(Error::State(format!("sample {} has not been run", missing.0)));
    }
    let ids: Vec<u64> = work.iter().map(|w| w.0).collect();
    Ok((plan, cp.records(&ids)?))
}

/// Reads the plan and pilot outcomes from the checkpoint.
pub fn load_pilot(ctx: &RunContext) -> Result<(Vec<usize>, Vec<SampleOutcome>)> {
    let cp = Checkpoint::resume(&checkpoint_dir(&ctx.config), &ctx.hash)?;
    let m = cp.manifest();
    let work = sample_schedule(&m.pilot, None);
    if let Some(missing) = work.iter().find(|w| !cp.is_done(w.0)) {
        return Err(Error::State(format!("pilot sample {} has not been run", missing.0)));
    }
    let ids: Vec<u64> = work.iter().map(|w| w.0).collect();
    Ok((m.pilot, cp.records(&ids)?.into_iter().map(|r| r.outcome).collect()))
}

/// Stores a plan in the checkpoint.
pub fn store_plan(ctx: &RunContext, plan: &StratifiedPlan) -> Result<()> {
    Checkpoint::resume(&checkpoint_dir(&ctx.config), &ctx.hash)?.set_plan(plan.clone())
}

/// Human-readable summary of a finished run.
pub fn report(summary: &RunSummary) -> String {
    let mut s = format!("configuration {}\n", summary.config_hash);
    s += &format!(
        "samples: {} ({} excluded)\n",
        summary.plan.total(),
        summary.estimates.excluded_samples
    );
    s += &format!(
        "{:<26} {:>12} {:>10} {:>8} {:>8}\n",
        "limit state", "rate (1/yr)", "beta", "cov", "member"
    );
    for e in &summary.estimates.states {
        s += &format!(
            "{:<26} {:>12.4e} {:>10.3} {:>8} {:>8}\n",
            e.name,
            e.rate,
            e.beta,
            e.cov.map_or("-".into(), |c| format!("{c:.3}")),
            e.member.map_or("-".into(), |m| m.to_string())
        );
    }
    s += "fragility (median m/s, dispersion):\n";
    for f in &summary.fragility {
        match f.curve {
            Some(c) => s += &format!("  {:<26} {:>8.2} {:>8.3}\n", f.name, c.median, c.dispersion),
            None => s += &format!("  {:<26} {:>8} {:>8}\n", f.name, "-", "-"),
        }
    }
    s
}
