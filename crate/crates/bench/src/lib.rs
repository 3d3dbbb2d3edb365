//! Shared fixtures for the benchmarks under `benches/`.

use mlmunmix::hsi::EndmemberMatrix;
use mlmunmix::scene::{generate_scene, Scene, SceneConfig};
use mlmunmix::vca::{vca_extract, VcaConfig};

/// Noisy MLM scene with paper band count and endmember number.
pub fn scene(size: usize) -> Scene {
    let mut cfg = SceneConfig::new(size, size, 4, 224);
    cfg.snr_db = Some(30.0);
    cfg.length_scale = 5.0;
    generate_scene(&cfg, None).expect("benchmark scene")
}

pub fn vca_init(scene: &Scene) -> EndmemberMatrix {
    vca_extract(&scene.cube, &VcaConfig::new(scene.endmembers.count(), 0)).expect("benchmark VCA")
}
