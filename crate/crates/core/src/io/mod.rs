//! File formats: 3DGS PLY assets, `V3DG` bundles and JSON scenes.

mod bundle;
mod ply;
mod scene;

pub use bundle::{
    decode_bundle, encode_bundle, encoded_size, quantize_set, read_bundle, sphere_key, write_atomic, write_bundle,
    write_bundle_unchecked, Bundle, BundleParams, Cluster, CLUSTER_BYTES, GAUSSIAN_BYTES, HEADER_BYTES, MAGIC, VERSION,
};
pub use ply::{encode_ply, load_ply, read_ply, write_ply};
pub use scene::{load_scene, parse_scene, scene_to_json, write_scene};
