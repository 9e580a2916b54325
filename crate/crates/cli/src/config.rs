//! Settings merged from flags, `V3DG_*` environment variables and an
//! optional TOML file, in that order of precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use v3dg_core::build::BuildParams;
use v3dg_core::pipeline::{RenderMode, DEFAULT_CLIP};
use v3dg_core::select::Tolerance;

/// Keys accepted in the config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub cluster_size: Option<usize>,
    pub group_size: Option<usize>,
    pub iterations: Option<usize>,
    pub scale_expansion: Option<f64>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub mode: Option<String>,
    pub clip: Option<f64>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub fov: Option<f64>,
    pub taus: Option<Vec<f64>>,
    pub ssaa: Option<u32>,
    pub extent: Option<f64>,
    pub port: Option<u16>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// First of flag (clap already folds in the environment), file, default.
pub fn pick<T: Clone>(flag: Option<T>, file: &Option<T>, default: T) -> T {
    flag.or_else(|| file.clone()).unwrap_or(default)
}

pub fn config_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os("V3DG_CONFIG").map(PathBuf::from))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildFlags {
    pub cluster_size: Option<usize>,
    pub group_size: Option<usize>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
}

pub fn build_params(flags: BuildFlags, scale_expansion: Option<f64>, file: &FileConfig) -> Result<BuildParams, String> {
    let d = BuildParams::default();
    let params = BuildParams {
        cluster_size: pick(flags.cluster_size, &file.cluster_size, d.cluster_size),
        group_size: pick(flags.group_size, &file.group_size, d.group_size),
        iterations: pick(flags.iterations, &file.iterations, d.iterations),
        scale_expansion: pick(scale_expansion, &file.scale_expansion, d.scale_expansion),
        seed: pick(flags.seed, &file.seed, d.seed),
        ..d
    };
    params.validate().map_err(|e| e.to_string())?;
    Ok(params)
}

pub fn tolerance(flag: Option<f64>, file: &FileConfig) -> Result<Tolerance, String> {
    Tolerance::new(pick(flag, &file.tau, 2048.0)).map_err(|e| e.to_string())
}

pub fn mode(flag: Option<String>, file: &FileConfig) -> Result<RenderMode, String> {
    pick(flag, &file.mode, "lod".into()).parse().map_err(|e: v3dg_core::Error| e.to_string())
}

pub fn clip(flag: Option<f64>, file: &FileConfig) -> Result<f64, String> {
    let c = pick(flag, &file.clip, DEFAULT_CLIP);
    if !(c >= 0.0 && c.is_finite()) {
        return Err(format!("clip radius {c} must be >= 0"));
    }
    Ok(c)
}

pub fn resolution(w: Option<u32>, h: Option<u32>, file: &FileConfig, default: (u32, u32)) -> Result<(u32, u32), String> {
    let (w, h) = (pick(w, &file.width, default.0), pick(h, &file.height, default.1));
    if w == 0 || h == 0 || w > 16384 || h > 16384 {
        return Err(format!("resolution {w}x{h} must be within 1x1..=16384x16384"));
    }
    Ok((w, h))
}

pub fn fov(flag: Option<f64>, file: &FileConfig) -> Result<f64, String> {
    let deg = pick(flag, &file.fov, 45.0);
    if !(deg > 0.0 && deg < 180.0) {
        return Err(format!("field of view {deg} must be in (0, 180) degrees"));
    }
    Ok(deg.to_radians())
}

/// Parse `"ex,ey,ez,tx,ty,tz"`.
pub fn parse_camera(text: &str) -> Result<([f64; 3], [f64; 3]), String> {
    let v: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("camera `{text}`: {e}"))?;
    if v.len() != 6 || v.iter().any(|x| !x.is_finite()) {
        return Err(format!("camera `{text}` must be six finite numbers ex,ey,ez,tx,ty,tz"));
    }
    Ok(([v[0], v[1], v[2]], [v[3], v[4], v[5]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let file = FileConfig {
            iterations: Some(7),
            cluster_size: Some(100),
            ..Default::default()
        };
        let flags = BuildFlags {
            iterations: Some(3),
            ..Default::default()
        };
        let p = build_params(flags, None, &file).unwrap();
        assert_eq!((p.iterations, p.cluster_size, p.group_size), (3, 100, 2));
        assert!(build_params(BuildFlags { group_size: Some(1), ..flags }, None, &file).is_err());
    }

    #[test]
    fn file_rejects_unknown_keys() {
        let ok: FileConfig = toml::from_str("tau = 512.0\ncluster-size = 64\ntaus = [1.0, 2.0]").unwrap();
        assert_eq!(ok.tau, Some(512.0));
        assert_eq!(ok.cluster_size, Some(64));
        assert!(toml::from_str::<FileConfig>("tua = 1.0").is_err());
    }

    #[test]
    fn camera_strings() {
        assert_eq!(parse_camera("1,2,3, 0,0,0").unwrap(), ([1.0, 2.0, 3.0], [0.0; 3]));
        assert!(parse_camera("1,2,3").is_err());
        assert!(parse_camera("1,2,3,4,5,x").is_err());
        assert!(parse_camera("1,2,3,4,5,inf").is_err());
    }

    #[test]
    fn value_checks() {
        let f = FileConfig::default();
        assert!(tolerance(Some(-1.0), &f).is_err());
        assert_eq!(tolerance(None, &f).unwrap().get(), 2048.0);
        assert!(mode(Some("fast".into()), &f).is_err());
        assert!(clip(Some(-0.5), &f).is_err());
        assert!(resolution(Some(0), None, &f, (64, 64)).is_err());
        assert!(fov(Some(180.0), &f).is_err());
    }
}
