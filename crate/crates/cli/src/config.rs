//! Experiment configuration and its INI representation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csrtomo::csc::CscVariant;
use csrtomo::sim::PhantomKind;
use ini::Ini;

/// A configuration problem; the binary maps it to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// β and γ grids are scaled by this fraction of `λmax(AᵀA)`, which keeps
/// them meaningful across image sizes and view counts.
pub const PARAM_UNIT: f64 = 0.01;

fn config_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// A reconstruction method compared in the tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mrf,
    Psc,
    Csc(CscVariant),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mrf => "mrf",
            Method::Psc => "psc",
            Method::Csc(v) => v.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mrf" => Ok(Method::Mrf),
            "psc" => Ok(Method::Psc),
            other => other
                .parse::<CscVariant>()
                .map(Method::Csc)
                .map_err(|_| config_err(format!("unknown method '{other}'"))),
        }
    }
}

/// View set of one reconstruction cell in degrees. `0:180` means equally
/// spaced views over the half circle, any other range is sampled inclusively.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSpec {
    pub views: usize,
    pub lo_deg: f64,
    pub hi_deg: f64,
}

impl ViewSpec {
    pub fn full(views: usize) -> Self {
        Self {
            views,
            lo_deg: 0.0,
            hi_deg: 180.0,
        }
    }

    pub fn is_full(&self) -> bool {
        self.lo_deg == 0.0 && self.hi_deg == 180.0
    }
}

impl FromStr for ViewSpec {
    type Err = ConfigError;

    /// `views` or `views:lo:hi`.
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let views = parse_num::<usize>("views", parts[0])?;
        match parts.len() {
            1 => Ok(Self::full(views)),
            3 => Ok(Self {
                views,
                lo_deg: parse_num("angle", parts[1])?,
                hi_deg: parse_num("angle", parts[2])?,
            }),
            _ => Err(config_err(format!("bad view spec '{s}', expected N or N:lo:hi"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub side: usize,
    pub out_dir: PathBuf,

    pub phantom: PhantomKind,
    /// Training phantoms; the next one in sequence is held out for testing.
    pub train_count: usize,
    pub lambda_lpf: f64,

    /// Convolutional dictionary as `(count, size)` groups.
    pub filters: Vec<(usize, usize)>,
    /// CDL sparsity weight; `None` derives it from the training images.
    pub cdl_lambda: Option<f64>,
    pub cdl_iters: usize,
    pub dict_path: Option<PathBuf>,

    pub patch_size: usize,
    pub patch_atoms: usize,
    pub patch_iters: usize,
    pub psc_stride: usize,
    pub patch_dict_path: Option<PathBuf>,

    /// Input PSNRs (dB) of the denoising table.
    pub denoise_psnr_db: Vec<f64>,
    pub denoise_lambdas: Vec<f64>,
    pub csc3_mu: f64,

    pub cells: Vec<ViewSpec>,
    /// Projection-domain PSNRs (dB) of the reconstruction table.
    pub noise_db: Vec<f64>,
    pub methods: Vec<Method>,
    /// Plug-and-Play β in units of [`PARAM_UNIT`]` · λmax(AᵀA)`.
    pub betas: Vec<f64>,
    pub csc_lambdas: Vec<f64>,
    pub psc_lambdas: Vec<f64>,
    pub outer_iters: usize,
    pub f_iters: usize,
    pub csc_iters: usize,

    pub mrf_p: f64,
    /// MRF γ in units of [`PARAM_UNIT`]` · λmax(AᵀA)`.
    pub mrf_gammas: Vec<f64>,
    pub mrf_iters: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 64² phantoms, 32 filters, 100 outer iterations.
    pub fn desk() -> Self {
        Self {
            seed: 1,
            side: 64,
            out_dir: PathBuf::from("out"),
            phantom: PhantomKind::Grains,
            train_count: 6,
            lambda_lpf: 7.0,
            filters: vec![(8, 2), (8, 4), (8, 8), (8, 16)],
            cdl_lambda: None,
            cdl_iters: 100,
            dict_path: None,
            patch_size: 8,
            patch_atoms: 64,
            patch_iters: 30,
            psc_stride: 1,
            patch_dict_path: None,
            denoise_psnr_db: vec![24.0, 20.0, 14.0],
            denoise_lambdas: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0],
            csc3_mu: 1.0,
            cells: vec![ViewSpec::full(64), ViewSpec { views: 70, lo_deg: 20.0, hi_deg: 160.0 }],
            noise_db: vec![26.0, 14.0],
            methods: vec![Method::Mrf, Method::Psc, Method::Csc(CscVariant::Csc2)],
            betas: vec![0.3, 1.0, 3.0, 10.0, 30.0],
            csc_lambdas: vec![0.2, 0.5, 1.0],
            psc_lambdas: vec![0.05, 0.1, 0.2],
            outer_iters: 100,
            f_iters: 25,
            csc_iters: 25,
            mrf_p: 1.2,
            mrf_gammas: vec![1.0, 2.0, 3.0, 5.0, 10.0],
            mrf_iters: 300,
        }
    }

    /// 256² phantoms, 128 filters, 16×16 patches, 300 outer iterations.
    pub fn paper_scale() -> Self {
        Self {
            side: 256,
            filters: vec![(32, 2), (32, 4), (32, 8), (32, 16)],
            patch_size: 16,
            patch_atoms: 128,
            psc_stride: 4,
            denoise_psnr_db: vec![24.0, 20.0, 14.0, 10.0],
            cells: vec![
                ViewSpec::full(256),
                ViewSpec::full(128),
                ViewSpec::full(64),
                ViewSpec { views: 70, lo_deg: 20.0, hi_deg: 160.0 },
            ],
            noise_db: vec![26.0, 20.0, 14.0],
            outer_iters: 300,
            ..Self::desk()
        }
    }

    pub fn filter_count(&self) -> usize {
        self.filters.iter().map(|(c, _)| c).sum()
    }

    /// At most one CSC variant may appear in the reconstruction methods.
    pub fn csc_method(&self) -> Option<CscVariant> {
        self.methods.iter().find_map(|m| match m {
            Method::Csc(v) => Some(*v),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.side < 16 {
            return Err(config_err(format!("side must be >= 16, got {}", self.side)));
        }
        if self.train_count == 0 {
            return Err(config_err("train_count must be >= 1"));
        }
        if !(self.lambda_lpf > 0.0) {
            return Err(config_err("lambda_lpf must be positive"));
        }
        if self.filters.is_empty() || self.filters.iter().any(|&(c, s)| c == 0 || s == 0 || s > self.side) {
            return Err(config_err("filters must be non-empty COUNTxSIZE groups with size <= side"));
        }
        if self.cdl_lambda.is_some_and(|l| !(l > 0.0)) {
            return Err(config_err("dictionary lambda must be positive"));
        }
        if self.patch_size == 0 || self.patch_size > self.side {
            return Err(config_err("patch size must be in 1..=side"));
        }
        if self.psc_stride == 0 || self.psc_stride > self.patch_size {
            return Err(config_err("psc stride must be in 1..=patch size"));
        }
        let positive_iters = [
            ("cdl iters", self.cdl_iters),
            ("patch atoms", self.patch_atoms),
            ("patch iters", self.patch_iters),
            ("outer iters", self.outer_iters),
            ("f iters", self.f_iters),
            ("csc iters", self.csc_iters),
            ("mrf iters", self.mrf_iters),
        ];
        for (name, v) in positive_iters {
            if v == 0 {
                return Err(config_err(format!("{name} must be >= 1")));
            }
        }
        for (name, list) in [("denoise psnr_db", &self.denoise_psnr_db), ("noise_db", &self.noise_db)] {
            if list.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(config_err(format!("{name} values must be positive")));
            }
        }
        let grids = [
            ("denoise lambdas", &self.denoise_lambdas),
            ("betas", &self.betas),
            ("csc lambdas", &self.csc_lambdas),
            ("psc lambdas", &self.psc_lambdas),
        ];
        for (name, list) in grids {
            if list.is_empty() || list.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(config_err(format!("{name} must be a non-empty list of positive values")));
            }
        }
        if self.mrf_gammas.is_empty() || self.mrf_gammas.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(config_err("mrf gammas must be a non-empty list of values >= 0"));
        }
        if !(self.mrf_p > 1.0 && self.mrf_p <= 2.0) {
            return Err(config_err("mrf p must be in (1, 2]"));
        }
        if !(self.csc3_mu > 0.0) {
            return Err(config_err("csc3 mu must be positive"));
        }
        for c in &self.cells {
            let range_ok = 0.0 <= c.lo_deg && c.lo_deg < c.hi_deg && (c.is_full() || c.hi_deg < 180.0);
            if c.views == 0 || (!c.is_full() && c.views < 2) || !range_ok {
                return Err(config_err(format!(
                    "bad view cell {}:{}:{}; need 0 <= lo < hi < 180 and two or more views for a limited range",
                    c.views, c.lo_deg, c.hi_deg
                )));
            }
        }
        let csc = self.methods.iter().filter(|m| matches!(m, Method::Csc(_))).count();
        if csc > 1 {
            return Err(config_err("at most one CSC variant may be listed in methods"));
        }
        for (name, p) in [("dictionary", &self.dict_path), ("patch dictionary", &self.patch_dict_path)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(config_err(format!("{name} file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Reads an INI file on top of `base`. Unknown sections and keys are errors.
    pub fn from_ini_file(path: &Path, base: Self) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_file(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_ini(&ini, base)
    }

    pub fn from_ini_str(text: &str, base: Self) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| config_err(format!("bad INI: {e}")))?;
        Self::from_ini(&ini, base)
    }

    fn from_ini(ini: &Ini, mut cfg: Self) -> Result<Self, ConfigError> {
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("general");
            for (key, value) in props.iter() {
                cfg.set(section, key, value)?;
            }
        }
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), ConfigError> {
        let field = format!("{section}.{key}");
        match field.as_str() {
            "general.seed" => self.seed = parse_num(&field, v)?,
            "general.side" => self.side = parse_num(&field, v)?,
            "general.out" => self.out_dir = PathBuf::from(v),
            "phantom.kind" => {
                self.phantom = v.parse().map_err(|_| config_err(format!("unknown phantom kind '{v}'")))?
            }
            "phantom.train_count" => self.train_count = parse_num(&field, v)?,
            "phantom.lambda_lpf" => self.lambda_lpf = parse_num(&field, v)?,
            "dictionary.filters" => self.filters = parse_filters(v)?,
            "dictionary.lambda" => self.cdl_lambda = Some(parse_num(&field, v)?),
            "dictionary.iters" => self.cdl_iters = parse_num(&field, v)?,
            "dictionary.path" => self.dict_path = Some(PathBuf::from(v)),
            "patch.size" => self.patch_size = parse_num(&field, v)?,
            "patch.atoms" => self.patch_atoms = parse_num(&field, v)?,
            "patch.iters" => self.patch_iters = parse_num(&field, v)?,
            "patch.stride" => self.psc_stride = parse_num(&field, v)?,
            "patch.path" => self.patch_dict_path = Some(PathBuf::from(v)),
            "denoise.psnr_db" => self.denoise_psnr_db = parse_list(&field, v)?,
            "denoise.lambdas" => self.denoise_lambdas = parse_list(&field, v)?,
            "denoise.csc3_mu" => self.csc3_mu = parse_num(&field, v)?,
            "recon.cells" => self.cells = parse_list(&field, v)?,
            "recon.noise_db" => self.noise_db = parse_list(&field, v)?,
            "recon.methods" => self.methods = parse_list(&field, v)?,
            "recon.betas" => self.betas = parse_list(&field, v)?,
            "recon.csc_lambdas" => self.csc_lambdas = parse_list(&field, v)?,
            "recon.psc_lambdas" => self.psc_lambdas = parse_list(&field, v)?,
            "recon.outer_iters" => self.outer_iters = parse_num(&field, v)?,
            "recon.f_iters" => self.f_iters = parse_num(&field, v)?,
            "recon.csc_iters" => self.csc_iters = parse_num(&field, v)?,
            "mrf.p" => self.mrf_p = parse_num(&field, v)?,
            "mrf.gammas" => self.mrf_gammas = parse_list(&field, v)?,
            "mrf.iters" => self.mrf_iters = parse_num(&field, v)?,
            _ => return Err(config_err(format!("unknown key '{key}' in section [{section}]"))),
        }
        Ok(())
    }
}

fn parse_num<T: FromStr>(field: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| config_err(format!("bad value '{v}' for {field}")))
}

fn parse_list<T: FromStr>(field: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| config_err(format!("bad entry '{s}' in {field}"))))
        .collect()
}

/// `8x2, 8x4` style filter groups.
fn parse_filters(v: &str) -> Result<Vec<(usize, usize)>, ConfigError> {
    v.split(',')
        .map(|g| {
            let (c, s) = g
                .trim()
                .split_once('x')
                .ok_or_else(|| config_err(format!("bad filter group '{g}', expected COUNTxSIZE")))?;
            Ok((parse_num("filter count", c)?, parse_num("filter size", s)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_validate() {
        ExperimentConfig::desk().validate().unwrap();
        ExperimentConfig::paper_scale().validate().unwrap();
        assert_eq!(ExperimentConfig::desk().filter_count(), 32);
        assert_eq!(ExperimentConfig::paper_scale().filter_count(), 128);
    }

    #[test]
    fn ini_overrides_fields() {
        let text = "seed = 9\n[recon]\ncells = 64, 70:20:160\nmethods = mrf, csc1\n[dictionary]\nfilters = 4x3,2x5\n";
        let cfg = ExperimentConfig::from_ini_str(text, ExperimentConfig::desk()).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.cells[0], ViewSpec::full(64));
        assert_eq!(cfg.cells[1], ViewSpec { views: 70, lo_deg: 20.0, hi_deg: 160.0 });
        assert_eq!(cfg.methods, vec![Method::Mrf, Method::Csc(CscVariant::Csc1)]);
        assert_eq!(cfg.filters, vec![(4, 3), (2, 5)]);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let base = ExperimentConfig::desk;
        assert!(ExperimentConfig::from_ini_str("[recon]\nbogus = 1\n", base()).is_err());
        assert!(ExperimentConfig::from_ini_str("[recon]\nnoise_db = x\n", base()).is_err());
        let cfg = ExperimentConfig::from_ini_str("[recon]\nnoise_db = 26,-3\n", base()).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_ini_str("[dictionary]\npath = /nonexistent/d.cdict\n", base()).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_ini_str("[recon]\nmethods = csc1,csc2\n", base()).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_ini_str("[recon]\ncells = 70:20:200\n", base()).unwrap();
        assert!(cfg.validate().is_err());
    }
}
