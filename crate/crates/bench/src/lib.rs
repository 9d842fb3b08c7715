//! Fixtures shared by the renderer benchmarks.

use robustsplat::synth::{generate_scene, orbit_cameras};
use robustsplat::{ImageBuffer, Mechanisms, PerImageParams, PinholeCamera, Rgb, Scene, Vec3};

/// A synthetic scene, one orbit camera and blurred per-image params with
/// every mechanism enabled.
pub struct Fixture {
    pub scene: Scene,
    pub camera: PinholeCamera,
    pub params: PerImageParams,
}

impl Fixture {
    pub fn new(primitives: usize, size: usize) -> Self {
        let scene = generate_scene(primitives, 1.0, 3, 7);
        let camera = orbit_cameras(8, 1.0, 0.2, size, size)[3].clone();
        let mut params = PerImageParams::identity();
        params.enabled = Mechanisms::ALL;
        params.motion.log_std_rotation = Vec3::repeat(0.02f64.ln());
        params.motion.log_std_translation = Vec3::repeat(0.02f64.ln());
        params.defocus.aperture = 15.0;
        params.defocus.focus_inv_depth = 0.35;
        Fixture { scene, camera, params }
    }

    /// A constant adjoint image matching the camera size.
    pub fn adjoint(&self) -> ImageBuffer {
        ImageBuffer::filled(self.camera.width, self.camera.height, Rgb::new(0.3, -0.2, 0.1))
    }
}
