//! JSON scene descriptions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Quaternion;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, Scene, Vec3};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    assets: BTreeMap<String, PathBuf>,
    #[serde(default)]
    instances: Vec<InstanceFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct InstanceFile {
    asset: String,
    #[serde(default)]
    translation: [f64; 3],
    /// `(w, x, y, z)`.
    #[serde(default = "identity_rotation")]
    rotation_quat: [f64; 4],
    #[serde(default = "unit_scale")]
    scale: f64,
}

fn identity_rotation() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn unit_scale() -> f64 {
    1.0
}

/// Parse a scene. Relative asset paths are resolved against `base_dir`.
pub fn parse_scene(text: &str, base_dir: &Path) -> Result<Scene> {
    let file: SceneFile = serde_json::from_str(text)?;
    let assets = file
        .assets
        .into_iter()
        .map(|(id, p)| {
            let p = if p.is_relative() { base_dir.join(p) } else { p };
            (id, p)
        })
        .collect();
    let mut instances = Vec::with_capacity(file.instances.len());
    for inst in file.instances {
        let [w, x, y, z] = inst.rotation_quat;
        instances.push(Instance::new(
            inst.asset,
            Vec3::from(inst.translation),
            Quaternion::new(w, x, y, z),
            inst.scale,
        )?);
    }
    let scene = Scene { assets, instances };
    scene.validate()?;
    Ok(scene)
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
    parse_scene(&text, path.parent().unwrap_or(Path::new("")))
}

/// Serialize with asset paths written as given.
pub fn scene_to_json(scene: &Scene) -> Result<String> {
    let file = SceneFile {
        assets: scene.assets.clone(),
        instances: scene
            .instances
            .iter()
            .map(|i| {
                let q = i.rotation.quaternion();
                InstanceFile {
                    asset: i.asset.clone(),
                    translation: i.translation.into(),
                    rotation_quat: [q.w, q.i, q.j, q.k],
                    scale: i.scale,
                }
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn write_scene(scene: &Scene, path: &Path) -> Result<()> {
    super::write_atomic(path, scene_to_json(scene)?.as_bytes())
}
