//! Fixtures shared by the criterion benches.

use maskrender_core::geometry::{ray_aabb_clip, ray_from_pixel};
use maskrender_core::rng::stream;
use maskrender_core::sampling::{sample_ray_points, PointSampling};
use maskrender_core::scenes::{gen_suite, oracle_render_view, SceneDef};
use maskrender_core::training::params::{ModelConfig, ModelParams};
use maskrender_core::{FeatureVolume, Image, Ray};

pub struct Fixture {
    pub scene: SceneDef,
    pub params: ModelParams,
    pub image: Image,
    /// Projected volume with random content, as seen by the decoders.
    pub volume: FeatureVolume,
    pub ray: Ray,
    pub t_samples: Vec<f64>,
}

/// Default desk configuration on the first generated scene.
pub fn fixture() -> Fixture {
    use rand::Rng;
    let scene = gen_suite(0, 1).unwrap().remove(0);
    let params = ModelParams::init(&ModelConfig::default(), scene.bounds, 0).unwrap();
    let image = oracle_render_view(&scene, 0).unwrap().rgb;
    let mut rng = stream(1, &[]);
    let spec = params.spec.with_feature_dim(params.decoder.feature_dim());
    let volume = FeatureVolume::from_fn(spec, |_| (0..spec.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let ray = ray_from_pixel(&scene.rig, 0, [48.5, 40.5]).unwrap();
    let (near, far) = ray_aabb_clip(&ray, &scene.bounds).unwrap();
    let t_samples = sample_ray_points(near, far, 96, PointSampling::Midpoint, &mut stream(2, &[])).unwrap();
    Fixture {
        scene,
        params,
        image,
        volume,
        ray,
        t_samples,
    }
}
