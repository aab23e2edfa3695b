use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use heightseg::balance::{focal_loss, DEFAULT_FOCAL_ALPHA, DEFAULT_FOCAL_GAMMA};
use heightseg::heightclass::CLASS_UPPER_BOUNDS;
use heightseg::labels::SplitSpec;

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    annotations: Option<PathBuf>,
    dsm_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    split_seed: Option<u64>,
    val_fraction: Option<f64>,
    class_edges: Option<Vec<i64>>,
    focal_alpha: Option<f64>,
    focal_gamma: Option<f64>,
}

/// Run settings. Flags override the config file; relative paths in the file resolve
/// against the file's directory.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// COCO-style annotation document
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    /// Directory of DSM rasters named `<stem>.asc` or `<stem>.hgr`
    #[arg(long, alias = "dsm_dir", value_name = "DIR")]
    dsm_dir: Option<PathBuf>,
    /// Output root; labels go to `<DIR>/labels/{train,val}`
    #[arg(long, alias = "out_dir", value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Seed mixed into the split hash [default: 0]
    #[arg(long, alias = "split_seed", value_name = "N")]
    split_seed: Option<u64>,
    /// Validation share, strictly between 0 and 1 [default: 0.20]
    #[arg(long, alias = "val_fraction", value_name = "RATIO")]
    val_fraction: Option<f64>,
    /// Focal loss alpha in (0, 1] [default: 0.25]
    #[arg(long, alias = "focal_alpha", value_name = "RATIO")]
    focal_alpha: Option<f64>,
    /// Focal loss gamma, >= 0 [default: 2.0]
    #[arg(long, alias = "focal_gamma", value_name = "REAL")]
    focal_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub annotations: Option<PathBuf>,
    pub dsm_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub split_seed: u64,
    pub val_fraction: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

fn load_file(path: &Path) -> Result<FileConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| {
        let msg = e.message().to_string();
        format!("{}: {msg}", path.display())
    })
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, String> {
        let (file, base) = match &self.config {
            Some(p) => {
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (load_file(p)?, base)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        if let Some(edges) = &file.class_edges {
            if edges.as_slice() != CLASS_UPPER_BOUNDS.as_slice() {
                return Err(format!(
                    "class_edges are fixed at {CLASS_UPPER_BOUNDS:?}, config has {edges:?}"
                ));
            }
        }
        let from_file = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
        let cfg = RunConfig {
            annotations: self.annotations.clone().or_else(|| from_file(&file.annotations)),
            dsm_dir: self.dsm_dir.clone().or_else(|| from_file(&file.dsm_dir)),
            out_dir: self.out_dir.clone().or_else(|| from_file(&file.out_dir)),
            split_seed: self.split_seed.or(file.split_seed).unwrap_or(0),
            val_fraction: self.val_fraction.or(file.val_fraction).unwrap_or(0.20),
            focal_alpha: self.focal_alpha.or(file.focal_alpha).unwrap_or(DEFAULT_FOCAL_ALPHA),
            focal_gamma: self.focal_gamma.or(file.focal_gamma).unwrap_or(DEFAULT_FOCAL_GAMMA),
        };
        cfg.check()?;
        Ok(cfg)
    }
}

impl RunConfig {
    fn check(&self) -> Result<(), String> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(format!("val_fraction {} must lie strictly between 0 and 1", self.val_fraction));
        }
        for (name, p) in [
            ("annotations", &self.annotations),
            ("dsm_dir", &self.dsm_dir),
            ("out_dir", &self.out_dir),
        ] {
            if p.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
                return Err(format!("{name} is empty"));
            }
        }
        focal_loss(0.5, self.focal_alpha, self.focal_gamma)
            .map(|_| ())
            .map_err(|e| format!("focal parameters: {e}"))
    }

    pub fn require<'a>(&self, name: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, String> {
        value
            .as_deref()
            .ok_or_else(|| format!("{name} not set; pass --{} or set it in --config", name.replace('_', "-")))
    }

    pub fn split(&self) -> Result<SplitSpec, String> {
        SplitSpec::from_fraction(self.split_seed, self.val_fraction).map_err(|e| e.to_string())
    }

    pub fn echo(&self) -> String {
        let show = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let mut s = String::new();
        let _ = writeln!(s, "annotations  {}", show(&self.annotations));
        let _ = writeln!(s, "dsm_dir      {}", show(&self.dsm_dir));
        let _ = writeln!(s, "out_dir      {}", show(&self.out_dir));
        let _ = writeln!(s, "split_seed   {}", self.split_seed);
        let _ = writeln!(s, "val_fraction {:.2}", self.val_fraction);
        let _ = writeln!(s, "class_edges  {CLASS_UPPER_BOUNDS:?}");
        let _ = writeln!(s, "focal_alpha  {}", self.focal_alpha);
        let _ = writeln!(s, "focal_gamma  {}", self.focal_gamma);
        s
    }
}
