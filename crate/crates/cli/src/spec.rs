//! Experiment specification files and their resolution into runnable
//! configurations. Relative paths resolve against the spec file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use icci_core::channel::{ChannelSpec, Domain, Snr};
use icci_core::dataset::{load_dataset, Layout};
use icci_core::scene::{generate_scene, ProbeRegion, SceneKind, SceneSpec};
use icci_core::sensing::{SensingKind, SensingModel, SensingSpec};
use icci_core::Tensor;
use icci_model::arch::Variant;
use icci_model::training::derive_seed;
use icci_model::{compute_arch_for_dcr, ArchConfig, TrainConfig};
use icci_sc::equalizer::{CdanConfig, FFE_TAPS};
use icci_sc::modulation::ModFormat;
use icci_sc::pipeline::ScConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Eval,
    SweepSnr,
    SweepDcr,
    Baseline,
    EqualizerBench,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Icci,
    Sc,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Icci => "icci",
            Scheme::Sc => "sc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Directory of ICT cubes; synthetic scenes are generated when absent.
    pub dataset: Option<PathBuf>,
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    /// Objects per synthetic scene.
    pub count: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub eval_scenes: usize,
    pub probes: Vec<ProbeRegion>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            dataset: None,
            kind: SceneKind::SpectralBlobs,
            height: 32,
            width: 32,
            depth: 8,
            count: 4,
            train_scenes: 64,
            val_scenes: 4,
            eval_scenes: 2,
            probes: Vec::new(),
        }
    }
}

/// Architecture file: a DCR target plus optional overrides of the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    #[serde(default = "default_dcr")]
    pub dcr: f64,
    pub k: Option<usize>,
    pub c_out: Option<usize>,
    pub trb_count: Option<usize>,
    pub base_width: Option<usize>,
    pub ssa: Option<bool>,
    pub ial: Option<bool>,
    pub include_mask: Option<bool>,
    pub batch_norm: Option<bool>,
    pub activations: Option<bool>,
    pub domain: Option<Domain>,
    pub conv3d_features: Option<usize>,
}

fn default_dcr() -> f64 {
    0.02
}

impl Default for ArchSpec {
    fn default() -> Self {
        toml::from_str("").expect("all fields optional")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub snr_db: Vec<Snr>,
    pub dcr: Vec<f64>,
    /// Channel SNR for DCR sweeps.
    pub dcr_snr_db: Snr,
    pub schemes: Vec<Scheme>,
    pub dump_images: bool,
    /// Bands or frames written as graymaps per scene.
    pub dump_bands: Vec<usize>,
    /// Also write every reconstruction as an ICT file.
    pub save_cubes: bool,
    /// Choose the SC quantization step so its symbol count matches ICCI.
    pub rate_match: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            snr_db: [0.0, 5.0, 10.0, 15.0, 20.0].into_iter().map(Snr::Db).collect(),
            dcr: Vec::new(),
            dcr_snr_db: Snr::Db(20.0),
            schemes: vec![Scheme::Icci, Scheme::Sc],
            dump_images: true,
            dump_bands: vec![0],
            save_cubes: false,
            rate_match: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub symbols: usize,
    pub format: ModFormat,
    pub snr_db: Vec<f64>,
    pub taps: usize,
    pub cdan: CdanConfig,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            symbols: 200_000,
            format: ModFormat::Pam4,
            snr_db: vec![15.0],
            taps: FFE_TAPS,
            cdan: CdanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sensing: Option<PathBuf>,
    #[serde(default)]
    pub arch: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub channel: Option<PathBuf>,
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    /// Trained ICCI parameters; defaults to `<out>/params`.
    #[serde(default)]
    pub params: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub bench: BenchSpec,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Spec(e.to_string()))
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub deterministic: bool,
}

/// Train, validation and evaluation cubes.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Vec<Tensor>,
    pub val: Vec<Tensor>,
    pub eval: Vec<Tensor>,
}

const STREAM_TRAIN_SCENES: u64 = 100;
const STREAM_VAL_SCENES: u64 = 101;
const STREAM_EVAL_SCENES: u64 = 102;

/// A spec resolved against its location and the command-line overrides.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub base_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub deterministic: bool,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let spec = ExperimentSpec::from_toml(&read(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(spec, base, overrides)
    }

    /// Checks that every referenced file exists.
    pub fn new(spec: ExperimentSpec, base_dir: PathBuf, overrides: &Overrides) -> Result<Self> {
        for p in [&spec.sensing, &spec.arch, &spec.train, &spec.channel, &spec.baseline, &spec.data.dataset]
            .into_iter()
            .flatten()
        {
            let full = base_dir.join(p);
            if !full.exists() {
                return Err(CliError::MissingFile(full));
            }
        }
        let out = overrides
            .out
            .clone()
            .or_else(|| spec.out.as_ref().map(|o| base_dir.join(o)))
            .unwrap_or_else(|| base_dir.join("out"));
        Ok(Self {
            seed: overrides.seed.unwrap_or(spec.seed),
            deterministic: overrides.deterministic,
            spec,
            base_dir,
            out,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn params_dir(&self) -> PathBuf {
        match &self.spec.params {
            Some(p) => self.resolve(p),
            None => self.out.join("params"),
        }
    }

    pub fn layout(&self) -> Layout {
        match self.spec.data.kind {
            SceneKind::SpectralBlobs => Layout::Spectral,
            SceneKind::MovingShapes => Layout::Video,
        }
    }

    pub fn variant(&self) -> Variant {
        match self.layout() {
            Layout::Spectral => Variant::Spectral,
            Layout::Video => Variant::Video,
        }
    }

    fn scene(&self, stream: u64, i: usize) -> Result<Tensor> {
        let d = &self.spec.data;
        let seed = derive_seed(self.seed, stream, i as u64);
        let mut s = match d.kind {
            SceneKind::SpectralBlobs => SceneSpec::spectral_blobs(d.height, d.width, d.depth, seed),
            SceneKind::MovingShapes => SceneSpec::moving_shapes(d.height, d.width, d.depth, seed),
        };
        s.count = d.count;
        Ok(generate_scene(&s)?)
    }

    /// Synthetic sets are drawn from independent seed streams; a dataset
    /// directory is split in file order into train, validation and evaluation.
    pub fn datasets(&self) -> Result<Datasets> {
        let d = &self.spec.data;
        if let Some(dir) = &d.dataset {
            let all = load_dataset(self.resolve(dir), self.layout())?;
            let need = d.train_scenes + d.val_scenes + d.eval_scenes;
            if all.len() < need {
                return Err(CliError::Spec(format!("dataset has {} cubes, {need} requested", all.len())));
            }
            let mut it = all.into_iter();
            let train = it.by_ref().take(d.train_scenes).collect();
            let val = it.by_ref().take(d.val_scenes).collect();
            let eval = it.take(d.eval_scenes).collect();
            return Ok(Datasets { train, val, eval });
        }
        let gen = |stream, n: usize| (0..n).map(|i| self.scene(stream, i)).collect::<Result<Vec<_>>>();
        Ok(Datasets {
            train: gen(STREAM_TRAIN_SCENES, d.train_scenes)?,
            val: gen(STREAM_VAL_SCENES, d.val_scenes)?,
            eval: gen(STREAM_EVAL_SCENES, d.eval_scenes)?,
        })
    }

    /// Only the evaluation set.
    pub fn eval_set(&self) -> Result<Vec<Tensor>> {
        if self.spec.data.dataset.is_some() {
            return Ok(self.datasets()?.eval);
        }
        (0..self.spec.data.eval_scenes)
            .map(|i| self.scene(STREAM_EVAL_SCENES, i))
            .collect()
    }

    pub fn cube_dims(&self) -> (usize, usize, usize) {
        let d = &self.spec.data;
        (d.height, d.width, d.depth)
    }

    /// The sensing file, with zero height/width/slices filled from the data
    /// dims; a seeded half-open CASSI (or CACTI for video) mask by default.
    pub fn sensing(&self) -> Result<SensingModel> {
        let (h, w, c) = self.cube_dims();
        let mut s = match &self.spec.sensing {
            Some(p) => SensingSpec::from_toml(&read(&self.resolve(p))?)?,
            None => SensingSpec {
                kind: match self.layout() {
                    Layout::Spectral => SensingKind::Cassi,
                    Layout::Video => SensingKind::Cacti,
                },
                dispersion_step: 1,
                noise_std: 0.0,
                mask_path: None,
                seed: self.seed,
                mask_p: 0.5,
                height: 0,
                width: 0,
                slices: 1,
            },
        };
        if s.height == 0 {
            s.height = h;
        }
        if s.width == 0 {
            s.width = w;
        }
        if s.kind == SensingKind::Cacti && s.slices <= 1 {
            s.slices = c;
        }
        Ok(s.build(&self.base_dir)?)
    }

    pub fn arch_spec(&self) -> Result<ArchSpec> {
        match &self.spec.arch {
            Some(p) => toml::from_str(&read(&self.resolve(p))?).map_err(|e| CliError::Spec(e.to_string())),
            None => Ok(ArchSpec::default()),
        }
    }

    /// Architecture for the data dims at `dcr` (the arch file's target when `None`).
    pub fn arch(&self, sensing: &SensingModel, dcr: Option<f64>) -> Result<ArchConfig> {
        let a = self.arch_spec()?;
        let cube = self.cube_dims();
        let (_, wm) = sensing.measurement_dims(cube);
        let domain = a.domain.unwrap_or(Domain::Real);
        let (k, c_out) = match (a.k, a.c_out, dcr) {
            (Some(k), Some(c), None) => (k, c),
            _ => {
                let choice = compute_arch_for_dcr(cube, wm, dcr.unwrap_or(a.dcr), domain)?;
                (choice.k, choice.c_out)
            }
        };
        let mut arch = ArchConfig::new(self.variant(), cube, wm, k, c_out);
        arch.domain = domain;
        if let Some(v) = a.trb_count {
            arch.trb_count = v;
        }
        if let Some(v) = a.base_width {
            arch.base_width = v;
        }
        if let Some(v) = a.ssa {
            arch.ssa = v;
        }
        if let Some(v) = a.ial {
            arch.ial = v;
        }
        if let Some(v) = a.include_mask {
            arch.include_mask = v;
        }
        if let Some(v) = a.batch_norm {
            arch.batch_norm = v;
        }
        if let Some(v) = a.activations {
            arch.activations = v;
        }
        if let Some(v) = a.conv3d_features {
            arch.conv3d_features = v;
        }
        arch.validate()?;
        Ok(arch)
    }

    /// Training config with the experiment seed and determinism flag applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.spec.train {
            Some(p) => TrainConfig::from_toml(&read(&self.resolve(p))?)?,
            None => TrainConfig::new(1, 4, 1e-3, self.seed),
        };
        cfg.seed = self.seed;
        cfg.deterministic |= self.deterministic;
        Ok(cfg)
    }

    pub fn channel(&self) -> Result<ChannelSpec> {
        match &self.spec.channel {
            Some(p) => Ok(ChannelSpec::from_toml(&read(&self.resolve(p))?)?),
            None => Ok(ChannelSpec::awgn(Snr::Db(20.0))),
        }
    }

    pub fn baseline(&self) -> Result<ScConfig> {
        match &self.spec.baseline {
            Some(p) => Ok(ScConfig::from_toml(&read(&self.resolve(p))?)?),
            None => Ok(ScConfig::default()),
        }
    }
}
